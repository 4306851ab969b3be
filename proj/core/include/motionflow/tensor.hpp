#pragma once

// Dense rank-3 tensors (height x width x channels, channel-innermost) and the
// spatial kernels the network is built from: 2D/3D convolution (correlation
// convention, replicate-border padding), max-pooling, bilinear resize / rotate
// / warp, plus the adjoint of each differentiable operation.
//
// All operations are pure: inputs are never modified. With a fixed thread
// count the results are bit-deterministic; per-output-plane parallelism in the
// banked convolutions does not change the per-plane summation order.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace motionflow {

#ifdef MOTIONFLOW_FLOAT32
using Scalar = float;   // inference-only build; gradient checks need doubles
#else
using Scalar = double;
#endif

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// Row-major (i, j, k): i = row, j = column, k = channel (innermost).
struct Tensor3 {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<Scalar> data;

    Tensor3() = default;
    Tensor3(int h, int w, int c) : height(h), width(w), channels(c) {
        require(h > 0 && w > 0 && c > 0, "Tensor3: dimensions must be positive");
        data.assign(static_cast<size_t>(h) * w * c, Scalar(0));
    }

    Scalar& at(int i, int j, int k) {
        return data[(static_cast<size_t>(i) * width + j) * channels + k];
    }
    Scalar at(int i, int j, int k) const {
        return data[(static_cast<size_t>(i) * width + j) * channels + k];
    }
    size_t size() const { return data.size(); }
    bool same_shape(const Tensor3& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
    void fill(Scalar v) { std::fill(data.begin(), data.end(), v); }
};

// A 2D flow map stored as a 2-channel tensor: channel 0 = u (px/frame,
// rightward), channel 1 = v (px/frame, downward).
using FlowField = Tensor3;

// Convolution kernel with odd spatial support; depth spans input channels
// (or frames for the first layer). Weights in (ky, kx, kc) order.
struct Kernel3 {
    int size_y = 0;
    int size_x = 0;
    int depth = 0;
    std::vector<Scalar> weights;

    Kernel3() = default;
    Kernel3(int sy, int sx, int d) : size_y(sy), size_x(sx), depth(d) {
        require(sy > 0 && sx > 0 && d > 0, "Kernel3: dimensions must be positive");
        require(sy % 2 == 1 && sx % 2 == 1, "Kernel3: spatial size must be odd");
        weights.assign(static_cast<size_t>(sy) * sx * d, Scalar(0));
    }

    Scalar& at(int ky, int kx, int kc) {
        return weights[(static_cast<size_t>(ky) * size_x + kx) * depth + kc];
    }
    Scalar at(int ky, int kx, int kc) const {
        return weights[(static_cast<size_t>(ky) * size_x + kx) * depth + kc];
    }
};

// Only replicate-border is supported; it preserves constants under unit-sum
// kernels and avoids dark-frame artifacts in the normalization layers.
enum class PaddingPolicy { ReplicateBorder };

// Winning input position (flat index into the pooled tensor's source) for
// every output element; consumed by maxpool_grad.
struct ArgmaxRecord {
    int input_height = 0;
    int input_width = 0;
    int channels = 0;
    std::vector<int32_t> index;
};

inline int clamp_index(int v, int n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); }

// ---- forward operations ----

// Single-plane 2D correlation (no kernel flip), stride 1, replicate padding.
Tensor3 conv2d(const Tensor3& input, const Kernel3& kernel,
               PaddingPolicy padding = PaddingPolicy::ReplicateBorder);

// Correlation of a multi-channel input with one 3D kernel, summed over all
// input channels, plus bias. Produces a single output plane.
Tensor3 conv3d(const Tensor3& input, const Kernel3& kernel, Scalar bias,
               PaddingPolicy padding = PaddingPolicy::ReplicateBorder);

// One conv3d per kernel, concatenated channel-wise. Output channel k is
// conv3d(input, kernels[k], biases[k]).
Tensor3 conv3d_bank(const Tensor3& input, const std::vector<Kernel3>& kernels,
                    const std::vector<Scalar>& biases);

// Per-channel max over square windows centered at even coordinates (stride 2).
// Output is ceil(H/2) x ceil(W/2); even window sizes extend one extra element
// right/down. Border windows clamp (equivalent to replicate padding).
std::pair<Tensor3, ArgmaxRecord> maxpool(const Tensor3& input, int window);

// Per-channel bilinear interpolation on the corner-aligned grid (source
// corners map to target corners, so resizing to the same size is exact
// identity).
Tensor3 resize_bilinear(const Tensor3& input, int new_height, int new_width);

// Rotate every depth slice about the spatial center by `angle` (radians,
// counterclockwise in (x right, y down) pixel coordinates). Samples outside
// the source read as zero. Angles within 1e-9 of a quarter turn take an exact
// index-permutation path.
Kernel3 rotate_bilinear(const Kernel3& kernel, Scalar angle);

// Backward-warp a single-channel plane: output(i,j) samples the frame at
// (i + scale*v(i,j), j + scale*u(i,j)); out-of-image positions clamp to the
// border.
Tensor3 warp_bilinear(const Tensor3& frame, const FlowField& flow, Scalar scale);

// ---- adjoints (cotangent of output -> cotangent of input / parameters) ----

Tensor3 conv2d_grad_input(const Tensor3& upstream, const Kernel3& kernel,
                          int input_height, int input_width);
Kernel3 conv2d_grad_kernel(const Tensor3& upstream, const Tensor3& input,
                           int size_y, int size_x);

// Accumulates into input_grad (callers sum the contribution of every kernel
// in a bank).
void conv3d_grad_input(const Tensor3& upstream, const Kernel3& kernel,
                       Tensor3& input_grad);
Kernel3 conv3d_grad_weights(const Tensor3& upstream, const Tensor3& input,
                            int size_y, int size_x);
Scalar conv3d_grad_bias(const Tensor3& upstream);

// Routes each output cotangent to the recorded winning input position.
Tensor3 maxpool_grad(const Tensor3& upstream, const ArgmaxRecord& record);

Tensor3 resize_bilinear_grad(const Tensor3& upstream, int input_height,
                             int input_width);

// Exact adjoint of rotate_bilinear at the same angle (scatter through the
// same interpolation weights; not the inverse rotation).
Kernel3 rotate_bilinear_adjoint(const Kernel3& upstream, Scalar angle);

// ---- small helpers used across modules ----

Tensor3 extract_channel(const Tensor3& t, int k);
void set_channel(Tensor3& t, int k, const Tensor3& plane);

}  // namespace motionflow
