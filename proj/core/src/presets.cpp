#include "motionflow/presets.hpp"

namespace motionflow {

namespace {

using Opt = TrainingOptions;

std::vector<AblationPreset> build_presets() {
    std::vector<AblationPreset> p;
    auto add = [&](std::string name, std::string desc,
                   std::function<void(NetworkConfig&, Opt&)> fn,
                   bool converges = true) {
        p.push_back({std::move(name), std::move(desc), std::move(fn), converges});
    };

    add("full", "reference model, no changes", [](NetworkConfig&, Opt&) {});
    add("frames-2", "two input frames", [](NetworkConfig& c, Opt&) { c.frames = 2; });
    add("frames-5", "five input frames", [](NetworkConfig& c, Opt&) { c.frames = 5; });
    add("no-center-surround", "skip the low-frequency subtraction",
        [](NetworkConfig& c, Opt&) { c.options.center_surround = false; },
        /*converges=*/false);
    add("no-local-norm", "skip the local contrast normalization",
        [](NetworkConfig& c, Opt&) { c.options.contrast_norm = false; });
    add("gauss-deriv-h1", "fixed derivative-of-Gaussian first-layer filters",
        [](NetworkConfig& c, Opt&) { c.options.fixed_gaussian_h1 = true; });
    add("no-orientation-norm", "skip the L1 normalization over orientations",
        [](NetworkConfig& c, Opt&) { c.options.orientation_norm = false; },
        /*converges=*/false);
    add("no-phase-pooling", "stride-2 subsampling instead of max-pooling",
        [](NetworkConfig& c, Opt&) { c.options.phase_pooling = false; });
    add("relu-conv1", "ReLU rectifier instead of squaring",
        [](NetworkConfig& c, Opt&) {
            c.options.rectifier = PipelineOptions::Rectifier::Relu;
        },
        /*converges=*/false);
    add("no-rotation-ties", "independent kernels, no rotation constraints",
        [](NetworkConfig& c, Opt&) { c.options.rotation_tied = false; },
        /*converges=*/false);
    for (int o : {6, 8, 16})
        add("orientations-" + std::to_string(o),
            std::to_string(o) + " orientation groups",
            [o](NetworkConfig& c, Opt&) { c.orientations = o; });
    add("loss-classification", "classification loss only (no fine-tuning)",
        [](NetworkConfig&, Opt& t) {
            t.loss_mode = Opt::LossMode::ClassificationOnly;
        });
    add("loss-regression", "end-point-error loss only (no classification phase)",
        [](NetworkConfig&, Opt& t) { t.loss_mode = Opt::LossMode::RegressionOnly; });
    for (int s : {4, 8, 16})
        add("scales-" + std::to_string(s), std::to_string(s) + " pyramid levels",
            [s](NetworkConfig& c, Opt&) { c.num_scales = s; });
    for (int r : {2, 3, 4, 5})
        add("iters-" + std::to_string(r),
            std::to_string(r) + " recurrent iterations",
            [r](NetworkConfig& c, Opt&) { c.recurrent_iters = r; });
    return p;
}

}  // namespace

const std::vector<AblationPreset>& ablation_presets() {
    static const std::vector<AblationPreset> presets = build_presets();
    return presets;
}

const AblationPreset* find_preset(const std::string& name) {
    for (const AblationPreset& p : ablation_presets())
        if (p.name == name) return &p;
    return nullptr;
}

}  // namespace motionflow
