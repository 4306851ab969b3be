#pragma once

// The motion network.
//
// Single-scale pipeline, applied per pyramid level:
//   stack F grayscale frames -> subtract local low-frequency component
//   -> divide by local standard deviation -> bank of MO learned w x w x F
//   spatiotemporal filters -> pointwise rectification (squaring) + max-pool
//   (stride 2) -> L1 normalization across the O orientation variants of each
//   kernel -> bank of MO learned w x w x MO interaction filters -> ReLU.
//
// Multiscale: the feature extractor runs on downsized copies of the input;
// feature maps are bilinearly upsampled to the half-resolution grid of the
// base scale and concatenated (orientation-major) before decoding. Decoding
// is pixelwise: a 1x1 layer to T*O motion scores, a per-pixel softmax (the
// distributed motion representation), and a 1x1 layer projecting onto (u, v).
//
// Recurrence: the input frames are re-warped by the accumulated flow estimate
// and the network re-run; increments are summed. Gradients flow through each
// unfolded iteration but not through the warp (the accumulated flow is a
// constant for the backward pass).
//
// Channel layouts (all orientation-major):
//   features:       k = o*M + m
//   scores/softmax: k = o*T + t
//   concatenation:  k = o*(M*S) + s*M + m     (S = scales present)

#include <cstdint>
#include <utility>
#include <vector>

#include "motionflow/rotation.hpp"
#include "motionflow/tensor.hpp"

namespace motionflow {

struct PipelineOptions {
    bool center_surround = true;
    bool contrast_norm = true;
    bool orientation_norm = true;
    // false replaces the max-pool with a plain stride-2 subsample (window 1)
    bool phase_pooling = true;
    enum class Rectifier { Square, Relu };
    Rectifier rectifier = Rectifier::Square;
    bool rotation_tied = true;
    // Fixed derivative-of-Gaussian first-layer filters, excluded from training.
    bool fixed_gaussian_h1 = false;
};

struct NetworkConfig {
    int frames = 3;                  // F
    int kernel_size = 11;            // w, odd
    int kernels_per_orientation = 4; // M
    int orientations = 12;           // O, even
    int speeds = 8;                  // T
    int num_scales = 10;
    Scalar scale_factor = 0.70710678118654752;  // 1/sqrt(2)
    int recurrent_iters = 1;
    Scalar epsilon = 0.01;   // orientation-norm denominator floor
    Scalar std_floor = 0.01; // contrast-norm standard-deviation floor
    // T speed magnitudes; the classification target set is their cross
    // product with the O orientations: target(t, o) = speed_t*(cos, sin).
    std::vector<Scalar> target_speeds;
    PipelineOptions options;

    void validate() const;
    int pool_window() const { return (kernel_size + 3) / 4; }  // ceil(w/4)
    int reference_frame() const { return (frames + 1) / 2 - 1; }
    int target_count() const { return speeds * orientations; }
    int target_index(int t, int o) const { return o * speeds + t; }
    // (u, v) of classification target (t, o)
    std::pair<Scalar, Scalar> classification_target(int t, int o) const;

    TiedLayerSpec spec_h1() const;
    TiedLayerSpec spec_h2() const;
    TiedLayerSpec spec_h3() const;
    TiedLayerSpec spec_h4() const;
};

struct NetworkWeights {
    CanonicalWeights h1, h2, h3, h4;
};

struct ExpandedNetwork {
    ExpandedWeights h1, h2, h3, h4;
};

// Canonical-shaped cotangents.
using NetworkGrads = NetworkWeights;

// Random first/second-layer filters (or the fixed Gaussian-derivative bank),
// zero hidden decoding weights, output projection built from the
// classification targets. Requires target_speeds.
NetworkWeights init_weights(const NetworkConfig& cfg, uint64_t seed);

// Rebuilds the output projection from the classification targets: with a
// one-hot softmax at (t, o) the decoded flow is exactly target(t, o); biases
// zero. The construction is tie-consistent because the target set is closed
// under rotation by 2*pi/O.
CanonicalWeights init_output_layer(const NetworkConfig& cfg);

// Fixed first-layer bank: first/second x-derivative-of-Gaussian spatial
// profiles crossed with derivative/smoothing temporal profiles, unit L2 norm.
CanonicalWeights gaussian_derivative_h1(const NetworkConfig& cfg);

ExpandedNetwork expand_network(const NetworkWeights& w, const NetworkConfig& cfg);
NetworkGrads make_grads(const NetworkConfig& cfg);

// ---- layer operations ----

// H x W x F tensor from F equal-sized grayscale planes in [0, 1].
Tensor3 stack_input(const std::vector<Tensor3>& frames);

// Unit-sum 2D Gaussian, sigma = kernel_size/3, radius ceil(3*sigma).
Kernel3 center_surround_kernel(int kernel_size);

// Per channel: x minus its Gaussian-blurred copy (replicate borders).
Tensor3 center_surround(const Tensor3& x, int kernel_size);

// Per channel: x / max(std over the w x w window, std_floor).
Tensor3 local_contrast_norm(const Tensor3& x, int kernel_size, Scalar std_floor);

// x / (sum of the O orientation variants of its group + epsilon).
Tensor3 orientation_norm(const Tensor3& x, int per_group, int orientations,
                         Scalar epsilon);
Tensor3 orientation_norm_backward(const Tensor3& upstream, const Tensor3& input,
                                  int per_group, int orientations,
                                  Scalar epsilon);

// Per-pixel softmax across channels.
Tensor3 softmax_channels(const Tensor3& scores);
Tensor3 softmax_backward(const Tensor3& upstream, const Tensor3& softmax_out);

// ---- pipelines ----

struct ScaleTrace {
    int scale_index = 0;
    Tensor3 conv1_input;
    Tensor3 motion_response;  // first bank output, pre-rectifier
    ArgmaxRecord pool_argmax;
    Tensor3 pooled;           // rectified + pooled, pre orientation-norm
    Tensor3 norm_output;      // second bank input
    Tensor3 smoothing_response;  // second bank output, pre-ReLU
};

struct ForwardTrace {
    std::vector<ScaleTrace> scales;
    Tensor3 concat;        // decode input
    Tensor3 distribution;  // softmax output
};

struct ForwardResult {
    Tensor3 distribution;  // ceil(H/2) x ceil(W/2) x T*O
    Tensor3 flow;          // ceil(H/2) x ceil(W/2) x 2
    int usable_scales = 0;
    std::vector<int> skipped_scales;
};

// The full feedforward pass over the scale pyramid. `trace` may be null
// (inference). Requires min(H, W) >= kernel_size so at least scale 0 runs.
ForwardResult forward_multiscale(const Tensor3& stacked,
                                 const ExpandedNetwork& net,
                                 const NetworkConfig& cfg,
                                 ForwardTrace* trace = nullptr);

// Convenience wrapper: the single-scale network (scale count 1).
ForwardResult forward_single_scale(const Tensor3& stacked,
                                   const ExpandedNetwork& net,
                                   const NetworkConfig& cfg,
                                   ForwardTrace* trace = nullptr);

struct RecurrentIteration {
    ForwardResult result;   // per-iteration increment
    Tensor3 accum_before;   // accumulated flow entering this iteration
    Tensor3 accum_after;
};

struct RecurrentResult {
    Tensor3 flow;  // final accumulated half-resolution flow
    std::vector<RecurrentIteration> iterations;
    std::vector<ForwardTrace> traces;  // filled when want_traces
};

RecurrentResult forward_recurrent(const Tensor3& stacked,
                                  const ExpandedNetwork& net,
                                  const NetworkConfig& cfg, int iterations,
                                  bool want_traces = false);

// Backward through one traced multiscale pass. flow_cot / dist_cot are the
// loss cotangents on the decoded flow and on the softmax output (either may
// be empty for a zero cotangent). Accumulates canonical-shaped gradients.
void backward_multiscale(const ForwardTrace& trace, const Tensor3& flow_cot,
                         const Tensor3& dist_cot, const ExpandedNetwork& net,
                         const NetworkConfig& cfg, NetworkGrads& grads);

// Upsamples a half-resolution flow to full resolution (values unchanged;
// flow is stored in full-resolution pixel units throughout).
Tensor3 upsample_flow(const Tensor3& half_res_flow, int height, int width);

}  // namespace motionflow
