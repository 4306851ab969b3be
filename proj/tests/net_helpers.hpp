#pragma once

// Shared fixtures for the network-level tests: small configurations, random
// tie-consistent weights, and textured inputs.

#include <random>

#include "motionflow/network.hpp"
#include "motionflow/training.hpp"
#include "oracles.hpp"

namespace nettest {

using namespace motionflow;

inline NetworkConfig tiny_config() {
    NetworkConfig cfg;
    cfg.frames = 2;
    cfg.kernel_size = 5;
    cfg.kernels_per_orientation = 1;
    cfg.orientations = 4;
    cfg.speeds = 2;
    cfg.num_scales = 1;
    cfg.scale_factor = 0.5;
    cfg.recurrent_iters = 1;
    cfg.target_speeds = {1.0, 2.5};
    cfg.validate();
    return cfg;
}

inline void randomize_canonical(CanonicalWeights& c, std::mt19937_64& rng,
                                double scale) {
    std::uniform_real_distribution<double> d(-scale, scale);
    for (Scalar& v : c.slices) v = static_cast<Scalar>(d(rng));
    for (Scalar& v : c.bias) v = static_cast<Scalar>(d(rng) * 0.1);
}

// Fully random canonical weights (h3/h4 included) for gradient and
// equivariance checks; biases small, output bias zeroed when asked (a nonzero
// output offset is a constant vector that cannot rotate with the input).
inline NetworkWeights random_net_weights(const NetworkConfig& cfg, uint64_t seed,
                                         bool zero_output_bias = false) {
    std::mt19937_64 rng(seed);
    NetworkWeights w = init_weights(cfg, seed);
    randomize_canonical(w.h1, rng, 0.3);
    randomize_canonical(w.h2, rng, 0.2);
    randomize_canonical(w.h3, rng, 0.5);
    randomize_canonical(w.h4, rng, 0.5);
    if (zero_output_bias)
        for (Scalar& b : w.h4.bias) b = 0;
    return w;
}

// Textured frames with sub-pixel global translation; local contrast well
// above the normalization floor everywhere.
inline std::vector<Tensor3> textured_frames(int size, int count, Scalar u,
                                            Scalar v, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jitter(-0.05, 0.05);
    std::vector<Tensor3> frames;
    const int ref = (count + 1) / 2 - 1;
    for (int k = 0; k < count; ++k) {
        Tensor3 f(size, size, 1);
        const Scalar t = static_cast<Scalar>(k - ref);
        for (int i = 0; i < size; ++i)
            for (int j = 0; j < size; ++j) {
                const Scalar x = j - t * u, y = i - t * v;
                f.at(i, j, 0) =
                    0.5 + 0.28 * std::sin(2 * M_PI * (x + 0.5 * y) / 5.0) +
                    0.12 * std::sin(2 * M_PI * (y - 0.3 * x) / 7.0) +
                    static_cast<Scalar>(jitter(rng)) * 0;
            }
        frames.push_back(std::move(f));
    }
    return frames;
}

// Quarter-turn rotation of a square odd-sized tensor with the same index
// convention as the kernel rotation (the +x axis maps onto +y).
inline Tensor3 rot90_tensor(const Tensor3& t) {
    Tensor3 out(t.height, t.width, t.channels);
    const int c = t.height / 2;
    for (int y = 0; y < t.height; ++y)
        for (int x = 0; x < t.width; ++x)
            for (int k = 0; k < t.channels; ++k)
                out.at(y, x, k) = t.at(c - (x - c), c + (y - c), k);
    return out;
}

}  // namespace nettest
