#pragma once

// Versioned binary checkpoint container.
//
// Layout (all little-endian):
//   "MFCK", uint32 version
//   network config: int32 frames, kernel_size, kernels_per_orientation,
//     orientations, speeds, num_scales, recurrent_iters;
//     float64 scale_factor, epsilon, std_floor;
//     uint8 center_surround, contrast_norm, orientation_norm, phase_pooling,
//       rectifier (0 square / 1 relu), rotation_tied, fixed_gaussian_h1;
//     int32 target-speed count, float64 speeds[]
//   weights: for each layer h1..h4: int32 slots, in_per_group, out_per_group,
//     kernel_y, kernel_x; uint64 slice scalar count, float64 slices[];
//     uint64 bias count, float64 biases[]
//   uint8 has_trainer; when set: int32 epoch, phase_epoch, phase;
//     float64 plateau_best, int32 plateau_since, float64 nc_best,
//     int32 nc_since; int64 adam step; adam first/second moments (same layer
//     encoding as the weights)
//
// Canonical values are stored as float64 regardless of the build's Scalar;
// save -> load round trips are bit-exact on 64-bit builds.

#include <string>

#include "motionflow/network.hpp"
#include "motionflow/training.hpp"

namespace motionflow {

struct Checkpoint {
    NetworkConfig config;
    TrainerState state;
    bool has_trainer = false;
};

void save_checkpoint(const std::string& path, const NetworkConfig& config,
                     const TrainerState& state, bool include_trainer = true);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace motionflow
