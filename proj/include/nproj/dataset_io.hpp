#pragma once

#include "nproj/core_types.hpp"

#include <string>

namespace nproj {

// Trajectory dataset container, little-endian:
//   magic "NPRJ1" (5 bytes)
//   u32 dim, u32 particles_observed, u32 num_samples, u32 frames_per_sample
//   f64 dt
//   u32 scenario tag
//   u32 pin-mask byte length, then that many bytes (one per observed particle)
//   f64 positions, sample-major / frame-major / particle-major, axes interleaved
// A sidecar "<path>.meta" holds key=value metadata (seed, noise_sigma,
// observation_indices and any generator extras).

void write_dataset(const std::string& path, const TrajectoryDataset& dataset);
TrajectoryDataset read_dataset(const std::string& path);

std::string sidecar_path(const std::string& dataset_path);

}  // namespace nproj
