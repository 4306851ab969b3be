#pragma once

// Named ablation presets: each retrains the network with one design choice
// changed from the full model. Presets marked expect_converge = false are
// known to trip the non-convergence guard instead of reaching a useful
// optimum; runs report their status rather than looping.

#include <functional>
#include <string>
#include <vector>

#include "motionflow/network.hpp"
#include "motionflow/training.hpp"

namespace motionflow {

struct AblationPreset {
    std::string name;
    std::string description;
    std::function<void(NetworkConfig&, TrainingOptions&)> apply;
    bool expect_converge = true;
};

const std::vector<AblationPreset>& ablation_presets();

// nullptr when the name is unknown.
const AblationPreset* find_preset(const std::string& name);

}  // namespace motionflow
