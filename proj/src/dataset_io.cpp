#include "nproj/dataset_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace nproj {
namespace {

constexpr char kMagic[5] = {'N', 'P', 'R', 'J', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::string join_indices(const std::vector<int>& idx) {
  std::ostringstream os;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (i) os << ',';
    os << idx[i];
  }
  return os.str();
}

std::vector<int> split_indices(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  return out;
}

}  // namespace

std::string sidecar_path(const std::string& dataset_path) { return dataset_path + ".meta"; }

void write_dataset(const std::string& path, const TrajectoryDataset& dataset) {
  dataset.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);

  const int m = dataset.observed_particles();
  const int d = dataset.dim();
  const auto& pins = dataset.samples.front().frames.front().pin_mask;

  os.write(kMagic, 5);
  put_u32(os, static_cast<std::uint32_t>(d));
  put_u32(os, static_cast<std::uint32_t>(m));
  put_u32(os, static_cast<std::uint32_t>(dataset.samples.size()));
  put_u32(os, static_cast<std::uint32_t>(dataset.frames_per_sample()));
  put_f64(os, dataset.dt());
  put_u32(os, static_cast<std::uint32_t>(dataset.scenario));
  put_u32(os, static_cast<std::uint32_t>(pins.size()));
  os.write(reinterpret_cast<const char*>(pins.data()), static_cast<std::streamsize>(pins.size()));

  for (const auto& sample : dataset.samples) {
    for (const auto& frame : sample.frames) {
      for (Eigen::Index i = 0; i < frame.positions.size(); ++i) put_f64(os, frame.positions[i]);
    }
  }
  if (!os) throw std::runtime_error("write failed: " + path);

  std::ofstream meta(sidecar_path(path));
  if (!meta) throw std::runtime_error("cannot open for writing: " + sidecar_path(path));
  meta << "seed=" << dataset.seed << "\n";
  meta << "noise_sigma=" << std::hexfloat << dataset.noise_sigma << std::defaultfloat << "\n";
  meta << "observation_indices=" << join_indices(dataset.observation_indices) << "\n";
  for (const auto& [k, v] : dataset.metadata) meta << k << "=" << v << "\n";
}

TrajectoryDataset read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);

  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, kMagic, 5) != 0)
    throw std::runtime_error("not an NPRJ1 dataset: " + path);

  const int d = static_cast<int>(get_u32(is));
  const int m = static_cast<int>(get_u32(is));
  const int num_samples = static_cast<int>(get_u32(is));
  const int frames = static_cast<int>(get_u32(is));
  const double dt = get_f64(is);
  const auto scenario = static_cast<Scenario>(get_u32(is));
  const auto pin_len = get_u32(is);
  std::vector<std::uint8_t> pins(pin_len);
  is.read(reinterpret_cast<char*>(pins.data()), pin_len);
  if (static_cast<int>(pin_len) != m) throw std::runtime_error("corrupt pin mask: " + path);

  TrajectoryDataset dataset;
  dataset.scenario = scenario;
  dataset.samples.resize(static_cast<std::size_t>(num_samples));
  for (auto& sample : dataset.samples) {
    sample.dt = dt;
    sample.frames.resize(static_cast<std::size_t>(frames));
    for (auto& frame : sample.frames) {
      frame.dim = d;
      frame.pin_mask = pins;
      frame.positions.resize(static_cast<Eigen::Index>(m) * d);
      for (Eigen::Index i = 0; i < frame.positions.size(); ++i) frame.positions[i] = get_f64(is);
    }
  }
  if (!is) throw std::runtime_error("truncated dataset: " + path);

  // Default observation identity; the sidecar refines it when present.
  dataset.observation_indices.resize(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) dataset.observation_indices[static_cast<std::size_t>(i)] = i;

  std::ifstream meta(sidecar_path(path));
  if (meta) {
    std::string line;
    while (std::getline(meta, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(0, eq);
      const std::string val = line.substr(eq + 1);
      if (key == "seed") {
        dataset.seed = std::stoull(val);
      } else if (key == "noise_sigma") {
        dataset.noise_sigma = std::strtod(val.c_str(), nullptr);
      } else if (key == "observation_indices") {
        dataset.observation_indices = split_indices(val);
      } else {
        dataset.metadata[key] = val;
      }
    }
  }
  dataset.validate();
  return dataset;
}

}  // namespace nproj
