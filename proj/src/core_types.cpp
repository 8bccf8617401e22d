#include "nproj/core_types.hpp"

#include <algorithm>
#include <set>

namespace nproj {

const char* scenario_name(Scenario s) {
  switch (s) {
    case Scenario::rigid1: return "rigid1";
    case Scenario::rigid2: return "rigid2";
    case Scenario::rope: return "rope";
    case Scenario::articulated: return "articulated";
    case Scenario::collision: return "collision";
  }
  throw std::invalid_argument("unknown scenario enum value");
}

Scenario scenario_from_name(const std::string& name) {
  for (auto s : {Scenario::rigid1, Scenario::rigid2, Scenario::rope, Scenario::articulated,
                 Scenario::collision}) {
    if (name == scenario_name(s)) return s;
  }
  throw std::invalid_argument("unknown scenario: " + name);
}

void SystemState::validate() const {
  if (dim != 2 && dim != 3) throw std::invalid_argument("SystemState: dim must be 2 or 3");
  if (positions.size() % dim != 0)
    throw std::invalid_argument("SystemState: positions length not a multiple of dim");
  if (static_cast<int>(pin_mask.size()) != particle_count())
    throw std::invalid_argument("SystemState: pin_mask length mismatch");
}

SystemState state_slice(const SystemState& state, const std::vector<int>& indices) {
  const int m = state.particle_count();
  std::set<int> seen;
  for (int idx : indices) {
    if (idx < 0 || idx >= m) throw std::out_of_range("state_slice: particle index out of range");
    if (!seen.insert(idx).second) throw std::invalid_argument("state_slice: duplicate index");
  }
  SystemState out;
  out.dim = state.dim;
  out.positions.resize(static_cast<Eigen::Index>(indices.size()) * state.dim);
  out.pin_mask.resize(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const int idx = indices[k];
    out.positions.segment(static_cast<Eigen::Index>(k) * state.dim, state.dim) =
        state.positions.segment(static_cast<Eigen::Index>(idx) * state.dim, state.dim);
    out.pin_mask[k] = state.pin_mask[static_cast<std::size_t>(idx)];
  }
  return out;
}

CorrectionBuffer::CorrectionBuffer(int particle_count, int dim)
    : dim_(dim),
      sums_(VectorXd::Zero(static_cast<Eigen::Index>(particle_count) * dim)),
      counts_(static_cast<std::size_t>(particle_count), 0) {}

void CorrectionBuffer::scatter_add(const SystemState& target, const std::vector<int>& indices,
                                   const VectorXd& values) {
  if (values.size() != static_cast<Eigen::Index>(indices.size()) * dim_)
    throw std::invalid_argument("scatter_add: values length mismatch");
  const int m = static_cast<int>(counts_.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const int idx = indices[k];
    if (idx < 0 || idx >= m) throw std::out_of_range("scatter_add: particle index out of range");
    if (target.pinned(idx)) continue;
    sums_.segment(static_cast<Eigen::Index>(idx) * dim_, dim_) +=
        values.segment(static_cast<Eigen::Index>(k) * dim_, dim_);
    counts_[static_cast<std::size_t>(idx)] += 1;
  }
}

VectorXd CorrectionBuffer::finalize() const {
  VectorXd out = VectorXd::Zero(sums_.size());
  for (std::size_t p = 0; p < counts_.size(); ++p) {
    if (counts_[p] > 0) {
      out.segment(static_cast<Eigen::Index>(p) * dim_, dim_) =
          sums_.segment(static_cast<Eigen::Index>(p) * dim_, dim_) / static_cast<double>(counts_[p]);
    }
  }
  return out;
}

void TrajectoryDataset::validate() const {
  if (samples.empty()) throw std::invalid_argument("dataset: no samples");
  const auto& first = samples.front();
  if (first.frames.empty()) throw std::invalid_argument("dataset: empty sample");
  const int m = first.frames.front().particle_count();
  const int d = first.frames.front().dim;
  const auto& pins = first.frames.front().pin_mask;
  for (const auto& s : samples) {
    if (s.frames.size() != first.frames.size())
      throw std::invalid_argument("dataset: frame count differs between samples");
    if (s.dt <= 0) throw std::invalid_argument("dataset: dt must be positive");
    for (const auto& f : s.frames) {
      f.validate();
      if (f.particle_count() != m || f.dim != d || f.pin_mask != pins)
        throw std::invalid_argument("dataset: frame shape or pin mask differs");
    }
  }
  if (static_cast<int>(observation_indices.size()) != m)
    throw std::invalid_argument("dataset: observation index count differs from stored particles");
  if (noise_sigma < 0) throw std::invalid_argument("dataset: noise_sigma must be >= 0");
}

GroupPartition GroupPartition::make(std::vector<std::vector<int>> groups,
                                    std::vector<std::string> bindings) {
  GroupPartition p;
  p.groups = std::move(groups);
  if (bindings.empty()) bindings.assign(p.groups.size(), "default");
  if (bindings.size() != p.groups.size())
    throw std::invalid_argument("partition: one net binding per group required");
  p.net_binding = std::move(bindings);
  for (std::size_t g = 0; g < p.groups.size(); ++g) {
    for (int idx : p.groups[g]) p.shared[idx].push_back(static_cast<int>(g));
  }
  return p;
}

void GroupPartition::validate(int particle_count) const {
  if (groups.empty()) throw std::invalid_argument("partition: no groups");
  if (net_binding.size() != groups.size())
    throw std::invalid_argument("partition: binding count mismatch");
  std::vector<bool> covered(static_cast<std::size_t>(particle_count), false);
  for (const auto& g : groups) {
    std::set<int> seen;
    for (int idx : g) {
      if (idx < 0 || idx >= particle_count)
        throw std::out_of_range("partition: particle index out of range");
      if (!seen.insert(idx).second)
        throw std::invalid_argument("partition: duplicate index within group");
      covered[static_cast<std::size_t>(idx)] = true;
    }
  }
  if (!std::all_of(covered.begin(), covered.end(), [](bool b) { return b; }))
    throw std::invalid_argument("partition: every particle must belong to at least one group");
}

void ProjectionConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("projection: iterations must be >= 1");
  if (relaxation <= 0 || relaxation > 1)
    throw std::invalid_argument("projection: relaxation must be in (0,1]");
  if (grad_guard <= 0) throw std::invalid_argument("projection: grad_guard must be > 0");
}

MassModel MassModel::uniform(int particle_count) {
  MassModel m;
  m.per_particle_mass = VectorXd::Ones(particle_count);
  return m;
}

void MassModel::validate() const {
  if ((per_particle_mass.array() <= 0).any())
    throw std::invalid_argument("mass model: all masses must be positive");
}

}  // namespace nproj
