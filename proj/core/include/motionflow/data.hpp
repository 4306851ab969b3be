#pragma once

// Dataset ingestion (Middlebury directory layout) and synthetic sequences
// with exact ground truth: translating textures, drifting sinusoid gratings,
// and alpha-blended transparent-motion pairs.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "motionflow/tensor.hpp"

namespace motionflow {

struct TrainingSample {
    std::string name;
    std::vector<Tensor3> frames;  // F single-channel planes in [0, 1]
    Tensor3 ground_truth;         // H x W x 2, px/frame between the center pair
    Tensor3 mask;                 // H x W x 1, 1 = known flow
    // Per-layer motions of multi-layer synthetic records (ground_truth holds
    // the dominant layer's flow).
    std::vector<std::pair<Scalar, Scalar>> layer_motions;
};

struct SequenceRecord {
    std::string name;
    std::vector<std::string> frame_paths;  // ordered
    std::string flow_path;
    std::string split;  // "train" / "test" / ""
};

// Scans root/<sequence>/ directories for frame%02d.png|pgm plus flow10.flo.
// The F frames are centered so the annotated pair sits at stack positions
// ceil(F/2), ceil(F/2)+1: for F=3 that is frame09..frame11 with ground truth
// between frame10 and frame11. Throws on frame shortfall.
std::vector<SequenceRecord> scan_middlebury(const std::string& root, int frames);

TrainingSample load_sequence(const SequenceRecord& rec);

std::vector<TrainingSample> load_middlebury(const std::string& root, int frames);

// The benchmark half-split used for small-data experiments.
inline const std::vector<std::string>& middlebury_train_half() {
    static const std::vector<std::string> v = {"Grove2", "RubberWhale", "Urban3"};
    return v;
}
inline const std::vector<std::string>& middlebury_test_half() {
    static const std::vector<std::string> v = {"Grove3", "Dimetrodon", "Hydrangea"};
    return v;
}

// ---- synthetic sequences ----

struct SyntheticLayer {
    enum class Texture { SmoothedNoise, Sinusoid };
    Texture texture = Texture::SmoothedNoise;
    Scalar motion_u = 0, motion_v = 0;  // px/frame
    Scalar alpha = 1;
    // sinusoid parameters (ignored for noise)
    Scalar wavelength = 8;
    Scalar phase = 0;
    Scalar orientation = 0;  // radians; 0 = horizontal drift pattern
    Scalar amplitude = 0.35;
};

struct SyntheticSpec {
    int size = 64;
    int frame_count = 3;
    uint64_t seed = 1;
    std::vector<SyntheticLayer> layers;
};

// Renders each layer by sampling a fixed oversized texture under subpixel
// translation (exact everywhere, no border effects), then alpha-composites.
// Ground truth is the first (dominant) layer's motion; all layer motions are
// retained in layer_motions.
TrainingSample synth_sequence(const SyntheticSpec& spec);

// Convenience batch: translating smoothed-noise textures covering
// `orientation_count` directions with magnitudes in [min_speed, max_speed].
std::vector<TrainingSample> synth_translation_dataset(int count, int size,
                                                      int frame_count,
                                                      int orientation_count,
                                                      Scalar min_speed,
                                                      Scalar max_speed,
                                                      uint64_t seed);

}  // namespace motionflow
