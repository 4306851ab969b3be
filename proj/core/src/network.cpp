#include "motionflow/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "motionflow/parallel.hpp"

namespace motionflow {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

void NetworkConfig::validate() const {
    require(frames >= 2, "config: need at least two frames");
    require(kernel_size >= 1 && kernel_size % 2 == 1, "config: kernel size must be odd");
    require(orientations >= 2 && orientations % 2 == 0,
            "config: orientation count must be even");
    require(kernels_per_orientation >= 1 && speeds >= 1 && num_scales >= 1 &&
                recurrent_iters >= 1,
            "config: counts must be >= 1");
    require(scale_factor > 0 && scale_factor < 1,
            "config: scale factor must be in (0, 1)");
    require(epsilon > 0 && std_floor > 0, "config: floors must be positive");
    require(target_speeds.empty() ||
                static_cast<int>(target_speeds.size()) == speeds,
            "config: target_speeds must have one entry per speed");
}

std::pair<Scalar, Scalar> NetworkConfig::classification_target(int t, int o) const {
    require(!target_speeds.empty(), "config: target speeds not set");
    const Scalar theta = 2.0 * M_PI * o / orientations;
    return {target_speeds[t] * std::cos(theta), target_speeds[t] * std::sin(theta)};
}

TiedLayerSpec NetworkConfig::spec_h1() const {
    TiedLayerSpec s;
    s.input_orientations = OrientationSet::regular(1);
    s.output_orientations = OrientationSet::regular(orientations);
    s.channels_per_input_group = frames;
    s.channels_per_output_group = kernels_per_orientation;
    s.kernel_y = s.kernel_x = kernel_size;
    s.spatially_rotated = true;
    s.tied = options.rotation_tied;
    s.isotropic_input = true;  // raw frames carry no reference orientation
    return s;
}

TiedLayerSpec NetworkConfig::spec_h2() const {
    TiedLayerSpec s;
    s.input_orientations = OrientationSet::regular(orientations);
    s.output_orientations = OrientationSet::regular(orientations);
    s.channels_per_input_group = kernels_per_orientation;
    s.channels_per_output_group = kernels_per_orientation;
    s.kernel_y = s.kernel_x = kernel_size;
    s.spatially_rotated = true;
    s.tied = options.rotation_tied;
    return s;
}

TiedLayerSpec NetworkConfig::spec_h3() const {
    TiedLayerSpec s;
    s.input_orientations = OrientationSet::regular(orientations);
    s.output_orientations = OrientationSet::regular(orientations);
    s.channels_per_input_group = kernels_per_orientation * num_scales;
    s.channels_per_output_group = speeds;
    s.kernel_y = s.kernel_x = 1;
    s.spatially_rotated = false;
    s.tied = options.rotation_tied;
    return s;
}

TiedLayerSpec NetworkConfig::spec_h4() const {
    TiedLayerSpec s;
    s.input_orientations = OrientationSet::regular(orientations);
    s.output_orientations = OrientationSet::flow_uv();
    s.channels_per_input_group = speeds;
    s.channels_per_output_group = 1;
    s.kernel_y = s.kernel_x = 1;
    s.spatially_rotated = false;
    s.tied = options.rotation_tied;
    return s;
}

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

namespace {

// Gaussian and its first/second derivatives, evaluated at integer offsets.
Scalar gauss(Scalar x, Scalar s) { return std::exp(-x * x / (2 * s * s)); }
Scalar dgauss(Scalar x, Scalar s) { return -x / (s * s) * gauss(x, s); }
Scalar d2gauss(Scalar x, Scalar s) {
    return (x * x / (s * s * s * s) - 1 / (s * s)) * gauss(x, s);
}

}  // namespace

CanonicalWeights gaussian_derivative_h1(const NetworkConfig& cfg) {
    const TiedLayerSpec spec = cfg.spec_h1();
    CanonicalWeights c = make_canonical(spec);
    const int w = cfg.kernel_size, F = cfg.frames;
    const Scalar ss = static_cast<Scalar>(w) / 4;
    const Scalar st = 0.8;
    const int cs = w / 2;
    const Scalar ct = static_cast<Scalar>(F - 1) / 2;

    // Slot layout differs between tied (class) and untied (group pair)
    // storage, but the fixed bank is orientation-agnostic at the canonical
    // level: every slot holds the same rightward-tuned kernels.
    for (int slot = 0; slot < c.slots; ++slot) {
        for (int n = 0; n < c.out_per_group; ++n) {
            const int pattern = n % 4;
            Scalar norm2 = 0;
            for (int m = 0; m < F; ++m) {
                Scalar* dst = c.slice(slot, m, n);
                const Scalar t = static_cast<Scalar>(m) - ct;
                const Scalar tv = (pattern < 2) ? dgauss(t, st) : gauss(t, st);
                for (int y = 0; y < w; ++y)
                    for (int x = 0; x < w; ++x) {
                        const Scalar sx = (pattern % 2)
                                              ? d2gauss(x - cs, ss)
                                              : dgauss(x - cs, ss);
                        const Scalar v = sx * gauss(y - cs, ss) * tv;
                        dst[static_cast<size_t>(y) * w + x] = v;
                        norm2 += v * v;
                    }
            }
            const Scalar inv = norm2 > 0 ? 1 / std::sqrt(norm2) : 1;
            for (int m = 0; m < F; ++m) {
                Scalar* dst = c.slice(slot, m, n);
                for (size_t p = 0; p < c.slice_elems(); ++p) dst[p] *= inv;
            }
        }
    }
    return c;
}

CanonicalWeights init_output_layer(const NetworkConfig& cfg) {
    require(!cfg.target_speeds.empty(), "init_output_layer: target speeds not set");
    const TiedLayerSpec spec = cfg.spec_h4();
    CanonicalWeights c = make_canonical(spec);
    if (spec.tied) {
        // Weight on the (t, o) score for an output at relative angle a is
        // speed_t * cos(a); expanding reproduces target(t, o) exactly.
        for (int cls = 0; cls < c.slots; ++cls) {
            const Scalar ca = std::cos(tie_class_angle(cls, spec));
            for (int t = 0; t < cfg.speeds; ++t)
                c.slice(cls, t, 0)[0] = cfg.target_speeds[t] * ca;
        }
    } else {
        for (int j = 0; j < spec.output_groups(); ++j)
            for (int i = 0; i < spec.input_groups(); ++i) {
                const Scalar a = spec.output_orientations.angle(j) -
                                 spec.input_orientations.angle(i);
                for (int t = 0; t < cfg.speeds; ++t)
                    c.slice(j * spec.input_groups() + i, t, 0)[0] =
                        cfg.target_speeds[t] * std::cos(a);
            }
    }
    return c;
}

namespace {

// Rewrites tied canonical storage as an independent (untied) bank holding the
// same expanded kernels, so ablations without the rotation constraint start
// from the same function.
CanonicalWeights untie(const CanonicalWeights& tied, TiedLayerSpec spec) {
    TiedLayerSpec tied_spec = spec;
    tied_spec.tied = true;
    const ExpandedWeights e = expand(tied, tied_spec);
    spec.tied = false;
    CanonicalWeights c = make_canonical(spec);
    const int M = spec.channels_per_input_group;
    const int N = spec.channels_per_output_group;
    for (int j = 0; j < spec.output_groups(); ++j)
        for (int n = 0; n < N; ++n) {
            const Kernel3& k = e.kernels[j * N + n];
            for (int i = 0; i < spec.input_groups(); ++i)
                for (int m = 0; m < M; ++m) {
                    Scalar* dst = c.slice(j * spec.input_groups() + i, m, n);
                    for (int y = 0; y < spec.kernel_y; ++y)
                        for (int x = 0; x < spec.kernel_x; ++x)
                            dst[static_cast<size_t>(y) * spec.kernel_x + x] =
                                k.at(y, x, i * M + m);
                }
            c.bias[j * N + n] = e.bias[j * N + n];
        }
    return c;
}

}  // namespace

NetworkWeights init_weights(const NetworkConfig& cfg, uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    NetworkWeights w;

    // Build the tied initialization first, even for untied ablations.
    NetworkConfig tied_cfg = cfg;
    tied_cfg.options.rotation_tied = true;

    // First layer: derivative-of-Gaussian bank plus noise. Starting from
    // oriented filters gives the decoding layers a first harmonic to read out
    // from step one; a purely random bank leaves the orientation channels
    // nearly interchangeable and training stalls near the uniform softmax.
    w.h1 = gaussian_derivative_h1(tied_cfg);
    if (!cfg.options.fixed_gaussian_h1) {
        std::normal_distribution<double> jitter(
            0.0, 0.03 / std::sqrt(static_cast<double>(cfg.frames)));
        for (Scalar& v : w.h1.slices) v += static_cast<Scalar>(jitter(rng));
    }

    // Interaction layer: same-orientation spatial smoothing (the classical
    // choice) plus noise. The zero-relative-angle slice gets a centered
    // Gaussian on the matching channel; cross-orientation slices start at
    // noise level.
    w.h2 = make_canonical(tied_cfg.spec_h2());
    {
        const int ws = cfg.kernel_size;
        const Scalar sigma = static_cast<Scalar>(ws) / 4;
        const int c = ws / 2;
        for (int m = 0; m < cfg.kernels_per_orientation; ++m) {
            Scalar* dst = w.h2.slice(0, m, m);  // class 0 = relative angle 0
            Scalar sum = 0;
            for (int y = 0; y < ws; ++y)
                for (int x = 0; x < ws; ++x) {
                    const Scalar g = gauss(y - c, sigma) * gauss(x - c, sigma);
                    dst[static_cast<size_t>(y) * ws + x] = g;
                    sum += g;
                }
            for (size_t p = 0; p < w.h2.slice_elems(); ++p) dst[p] /= sum;
        }
        std::normal_distribution<double> jitter(0.0, 0.01);
        for (Scalar& v : w.h2.slices) v += static_cast<Scalar>(jitter(rng));
    }

    if (!cfg.options.rotation_tied) {
        w.h1 = untie(w.h1, cfg.spec_h1());
        w.h2 = untie(w.h2, cfg.spec_h2());
    }

    // Zero hidden decoding weights: scores start at zero (uniform softmax) and
    // pyramid levels never reached during training keep contributing nothing.
    w.h3 = make_canonical(cfg.spec_h3());
    w.h4 = init_output_layer(cfg);
    return w;
}

ExpandedNetwork expand_network(const NetworkWeights& w, const NetworkConfig& cfg) {
    ExpandedNetwork net;
    net.h1 = expand(w.h1, cfg.spec_h1());
    net.h2 = expand(w.h2, cfg.spec_h2());
    net.h3 = expand(w.h3, cfg.spec_h3());
    net.h4 = expand(w.h4, cfg.spec_h4());
    return net;
}

NetworkGrads make_grads(const NetworkConfig& cfg) {
    NetworkGrads g;
    g.h1 = make_canonical(cfg.spec_h1());
    g.h2 = make_canonical(cfg.spec_h2());
    g.h3 = make_canonical(cfg.spec_h3());
    g.h4 = make_canonical(cfg.spec_h4());
    return g;
}

// ---------------------------------------------------------------------------
// layer operations
// ---------------------------------------------------------------------------

Tensor3 stack_input(const std::vector<Tensor3>& frames) {
    require(!frames.empty(), "stack_input: no frames");
    const int H = frames[0].height, W = frames[0].width;
    for (const Tensor3& f : frames) {
        require(f.channels == 1, "stack_input: frames must be single-channel");
        require(f.height == H && f.width == W,
                "stack_input: frame dimensions differ");
    }
    Tensor3 out(H, W, static_cast<int>(frames.size()));
    for (int k = 0; k < out.channels; ++k) set_channel(out, k, frames[k]);
    return out;
}

namespace {

std::vector<Scalar> gaussian_taps(Scalar sigma) {
    const int radius = static_cast<int>(std::ceil(3 * sigma));
    std::vector<Scalar> g(2 * radius + 1);
    Scalar sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        g[i + radius] = gauss(static_cast<Scalar>(i), sigma);
        sum += g[i + radius];
    }
    for (Scalar& v : g) v /= sum;
    return g;
}

// Separable pass along one axis with clamped (replicate) borders. The term
// set per output equals the full 2D kernel's, so this matches the direct
// convolution up to summation order.
Tensor3 blur_axis(const Tensor3& x, const std::vector<Scalar>& taps, bool rows) {
    const int H = x.height, W = x.width, C = x.channels;
    const int r = static_cast<int>(taps.size()) / 2;
    Tensor3 out(H, W, C);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
            for (int k = 0; k < C; ++k) {
                Scalar acc = 0;
                for (int d = -r; d <= r; ++d) {
                    const int ii = rows ? i : clamp_index(i + d, H);
                    const int jj = rows ? clamp_index(j + d, W) : j;
                    acc += taps[d + r] * x.at(ii, jj, k);
                }
                out.at(i, j, k) = acc;
            }
    return out;
}

}  // namespace

Kernel3 center_surround_kernel(int kernel_size) {
    const std::vector<Scalar> g = gaussian_taps(static_cast<Scalar>(kernel_size) / 3);
    const int n = static_cast<int>(g.size());
    Kernel3 k(n, n, 1);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) k.at(y, x, 0) = g[y] * g[x];
    return k;
}

Tensor3 center_surround(const Tensor3& x, int kernel_size) {
    const std::vector<Scalar> g = gaussian_taps(static_cast<Scalar>(kernel_size) / 3);
    Tensor3 blurred = blur_axis(blur_axis(x, g, /*rows=*/true), g, /*rows=*/false);
    Tensor3 out = x;
    for (size_t p = 0; p < out.data.size(); ++p) out.data[p] -= blurred.data[p];
    return out;
}

namespace {

// Clamped box sum of window size w along one axis.
Tensor3 box_axis(const Tensor3& x, int w, bool rows) {
    const int H = x.height, W = x.width, C = x.channels;
    const int r = w / 2;
    Tensor3 out(H, W, C);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
            for (int k = 0; k < C; ++k) {
                Scalar acc = 0;
                for (int d = -r; d <= r; ++d) {
                    const int ii = rows ? i : clamp_index(i + d, H);
                    const int jj = rows ? clamp_index(j + d, W) : j;
                    acc += x.at(ii, jj, k);
                }
                out.at(i, j, k) = acc;
            }
    return out;
}

}  // namespace

Tensor3 local_contrast_norm(const Tensor3& x, int kernel_size, Scalar std_floor) {
    require(kernel_size % 2 == 1, "local_contrast_norm: window must be odd");
    Tensor3 sq(x.height, x.width, x.channels);
    for (size_t p = 0; p < x.data.size(); ++p) sq.data[p] = x.data[p] * x.data[p];
    Tensor3 sum1 = box_axis(box_axis(x, kernel_size, true), kernel_size, false);
    Tensor3 sum2 = box_axis(box_axis(sq, kernel_size, true), kernel_size, false);
    const Scalar inv_n = 1 / (static_cast<Scalar>(kernel_size) * kernel_size);
    Tensor3 out(x.height, x.width, x.channels);
    for (size_t p = 0; p < x.data.size(); ++p) {
        const Scalar mean = sum1.data[p] * inv_n;
        const Scalar var = std::max(Scalar(0), sum2.data[p] * inv_n - mean * mean);
        const Scalar sd = std::max(std::sqrt(var), std_floor);
        out.data[p] = x.data[p] / sd;
    }
    return out;
}

Tensor3 orientation_norm(const Tensor3& x, int per_group, int orientations,
                         Scalar epsilon) {
    require(x.channels == per_group * orientations,
            "orientation_norm: channel count must be per_group * orientations");
    Tensor3 out(x.height, x.width, x.channels);
    const size_t pixels = static_cast<size_t>(x.height) * x.width;
    for (size_t p = 0; p < pixels; ++p) {
        const Scalar* px = &x.data[p * x.channels];
        Scalar* po = &out.data[p * x.channels];
        for (int m = 0; m < per_group; ++m) {
            Scalar denom = epsilon;
            for (int o = 0; o < orientations; ++o) denom += px[o * per_group + m];
            for (int o = 0; o < orientations; ++o)
                po[o * per_group + m] = px[o * per_group + m] / denom;
        }
    }
    return out;
}

Tensor3 orientation_norm_backward(const Tensor3& upstream, const Tensor3& input,
                                  int per_group, int orientations,
                                  Scalar epsilon) {
    require(upstream.same_shape(input), "orientation_norm_backward: shape mismatch");
    Tensor3 grad(input.height, input.width, input.channels);
    const size_t pixels = static_cast<size_t>(input.height) * input.width;
    for (size_t p = 0; p < pixels; ++p) {
        const Scalar* px = &input.data[p * input.channels];
        const Scalar* pg = &upstream.data[p * input.channels];
        Scalar* po = &grad.data[p * input.channels];
        for (int m = 0; m < per_group; ++m) {
            Scalar denom = epsilon, dot = 0;
            for (int o = 0; o < orientations; ++o) {
                denom += px[o * per_group + m];
                dot += pg[o * per_group + m] * px[o * per_group + m];
            }
            const Scalar inv = 1 / denom;
            const Scalar shared = dot * inv * inv;
            for (int o = 0; o < orientations; ++o)
                po[o * per_group + m] = pg[o * per_group + m] * inv - shared;
        }
    }
    return grad;
}

Tensor3 softmax_channels(const Tensor3& scores) {
    Tensor3 out(scores.height, scores.width, scores.channels);
    const int C = scores.channels;
    const size_t pixels = static_cast<size_t>(scores.height) * scores.width;
    for (size_t p = 0; p < pixels; ++p) {
        const Scalar* z = &scores.data[p * C];
        Scalar* q = &out.data[p * C];
        Scalar zmax = z[0];
        for (int k = 1; k < C; ++k) zmax = std::max(zmax, z[k]);
        Scalar sum = 0;
        for (int k = 0; k < C; ++k) {
            q[k] = std::exp(z[k] - zmax);
            sum += q[k];
        }
        const Scalar inv = 1 / sum;
        for (int k = 0; k < C; ++k) q[k] *= inv;
    }
    return out;
}

Tensor3 softmax_backward(const Tensor3& upstream, const Tensor3& softmax_out) {
    require(upstream.same_shape(softmax_out), "softmax_backward: shape mismatch");
    Tensor3 grad(upstream.height, upstream.width, upstream.channels);
    const int C = upstream.channels;
    const size_t pixels = static_cast<size_t>(upstream.height) * upstream.width;
    for (size_t p = 0; p < pixels; ++p) {
        const Scalar* g = &upstream.data[p * C];
        const Scalar* q = &softmax_out.data[p * C];
        Scalar* o = &grad.data[p * C];
        Scalar dot = 0;
        for (int k = 0; k < C; ++k) dot += g[k] * q[k];
        for (int k = 0; k < C; ++k) o[k] = q[k] * (g[k] - dot);
    }
    return grad;
}

// ---------------------------------------------------------------------------
// pipelines
// ---------------------------------------------------------------------------

namespace {

Tensor3 maybe_resize(const Tensor3& t, int h, int w) {
    if (t.height == h && t.width == w) return t;
    return resize_bilinear(t, h, w);
}

// Kernels of the hidden decoding layer restricted to the pyramid levels
// actually present (a contiguous prefix of the trained levels).
std::vector<Kernel3> slice_decode_kernels(const ExpandedWeights& h3,
                                          const NetworkConfig& cfg,
                                          int scales_present) {
    if (scales_present == cfg.num_scales) return h3.kernels;
    const int M = cfg.kernels_per_orientation;
    const int O = cfg.orientations;
    const int S = cfg.num_scales;
    std::vector<Kernel3> sliced;
    sliced.reserve(h3.kernels.size());
    for (const Kernel3& k : h3.kernels) {
        Kernel3 s(1, 1, O * M * scales_present);
        for (int o = 0; o < O; ++o)
            for (int sc = 0; sc < scales_present; ++sc)
                for (int m = 0; m < M; ++m)
                    s.at(0, 0, (o * scales_present + sc) * M + m) =
                        k.at(0, 0, (o * S + sc) * M + m);
        sliced.push_back(std::move(s));
    }
    return sliced;
}

struct ScaleFeatures {
    Tensor3 features;  // MO channels at this scale's half resolution
    ScaleTrace trace;  // filled when tracing
};

ScaleFeatures run_feature_extractor(const Tensor3& stacked,
                                    const ExpandedNetwork& net,
                                    const NetworkConfig& cfg, int scale_index,
                                    bool tracing) {
    const PipelineOptions& opt = cfg.options;
    ScaleFeatures out;
    out.trace.scale_index = scale_index;

    Tensor3 x = stacked;
    if (opt.center_surround) x = center_surround(x, cfg.kernel_size);
    if (opt.contrast_norm)
        x = local_contrast_norm(x, cfg.kernel_size, cfg.std_floor);

    Tensor3 response = conv3d_bank(x, net.h1.kernels, net.h1.bias);
    if (tracing) {
        out.trace.conv1_input = x;
        out.trace.motion_response = response;
    }

    Tensor3 rectified(response.height, response.width, response.channels);
    if (opt.rectifier == PipelineOptions::Rectifier::Square) {
        for (size_t p = 0; p < response.data.size(); ++p)
            rectified.data[p] = response.data[p] * response.data[p];
    } else {
        for (size_t p = 0; p < response.data.size(); ++p)
            rectified.data[p] = std::max(Scalar(0), response.data[p]);
    }
    auto [pooled, argmax] =
        maxpool(rectified, opt.phase_pooling ? cfg.pool_window() : 1);
    if (tracing) {
        out.trace.pool_argmax = argmax;
        out.trace.pooled = pooled;
    }

    Tensor3 normed = opt.orientation_norm
                         ? orientation_norm(pooled, cfg.kernels_per_orientation,
                                            cfg.orientations, cfg.epsilon)
                         : pooled;
    Tensor3 smooth = conv3d_bank(normed, net.h2.kernels, net.h2.bias);
    if (tracing) {
        out.trace.norm_output = normed;
        out.trace.smoothing_response = smooth;
    }

    out.features = Tensor3(smooth.height, smooth.width, smooth.channels);
    for (size_t p = 0; p < smooth.data.size(); ++p)
        out.features.data[p] = std::max(Scalar(0), smooth.data[p]);
    return out;
}

}  // namespace

ForwardResult forward_multiscale(const Tensor3& stacked,
                                 const ExpandedNetwork& net,
                                 const NetworkConfig& cfg, ForwardTrace* trace) {
    require(stacked.channels == cfg.frames,
            "forward: input must have one channel per frame");
    require(std::min(stacked.height, stacked.width) >= cfg.kernel_size,
            "forward: input smaller than the kernel support");
    const int H = stacked.height, W = stacked.width;
    const int ch = (H + 1) / 2, cw = (W + 1) / 2;
    const int M = cfg.kernels_per_orientation, O = cfg.orientations;

    ForwardResult result;
    std::vector<Tensor3> upsampled;
    for (int s = 0; s < cfg.num_scales; ++s) {
        const Scalar zoom = std::pow(cfg.scale_factor, s);
        const int hs = static_cast<int>(std::lround(H * zoom));
        const int ws = static_cast<int>(std::lround(W * zoom));
        if (std::min(hs, ws) < cfg.kernel_size) {
            result.skipped_scales.push_back(s);
            continue;
        }
        Tensor3 scaled = maybe_resize(stacked, hs, ws);
        ScaleFeatures sf =
            run_feature_extractor(scaled, net, cfg, s, trace != nullptr);
        upsampled.push_back(maybe_resize(sf.features, ch, cw));
        if (trace) trace->scales.push_back(std::move(sf.trace));
    }
    const int Su = static_cast<int>(upsampled.size());
    result.usable_scales = Su;

    // Orientation-major concatenation: k = o*(M*Su) + s*M + m.
    Tensor3 concat(ch, cw, O * M * Su);
    for (int s = 0; s < Su; ++s) {
        const Tensor3& f = upsampled[s];
        const size_t pixels = static_cast<size_t>(ch) * cw;
        for (size_t p = 0; p < pixels; ++p) {
            const Scalar* src = &f.data[p * f.channels];
            Scalar* dst = &concat.data[p * concat.channels];
            for (int o = 0; o < O; ++o)
                for (int m = 0; m < M; ++m)
                    dst[(o * Su + s) * M + m] = src[o * M + m];
        }
    }

    std::vector<Kernel3> h3k = slice_decode_kernels(net.h3, cfg, Su);
    Tensor3 scores = conv3d_bank(concat, h3k, net.h3.bias);
    result.distribution = softmax_channels(scores);
    result.flow = conv3d_bank(result.distribution, net.h4.kernels, net.h4.bias);

    if (trace) {
        trace->concat = std::move(concat);
        trace->distribution = result.distribution;
    }
    return result;
}

ForwardResult forward_single_scale(const Tensor3& stacked,
                                   const ExpandedNetwork& net,
                                   const NetworkConfig& cfg,
                                   ForwardTrace* trace) {
    require(cfg.num_scales == 1,
            "forward_single_scale: config must have a single scale");
    return forward_multiscale(stacked, net, cfg, trace);
}

Tensor3 upsample_flow(const Tensor3& half_res_flow, int height, int width) {
    require(half_res_flow.channels == 2, "upsample_flow: flow must have 2 channels");
    return resize_bilinear(half_res_flow, height, width);
}

RecurrentResult forward_recurrent(const Tensor3& stacked,
                                  const ExpandedNetwork& net,
                                  const NetworkConfig& cfg, int iterations,
                                  bool want_traces) {
    require(iterations >= 1, "forward_recurrent: need at least one iteration");
    const int H = stacked.height, W = stacked.width, F = cfg.frames;
    const int ref = cfg.reference_frame();

    RecurrentResult rr;
    Tensor3 accum((H + 1) / 2, (W + 1) / 2, 2);
    for (int it = 0; it < iterations; ++it) {
        Tensor3 input = stacked;
        if (it > 0) {
            // Stabilize the reference frame: frame k is pulled back along the
            // accumulated flow in proportion to its temporal distance, so the
            // network sees only residual motion. The warp reads the flow as a
            // constant (no gradient flows through it).
            Tensor3 full = upsample_flow(accum, H, W);
            input = Tensor3(H, W, F);
            for (int k = 0; k < F; ++k) {
                Tensor3 frame = extract_channel(stacked, k);
                if (k != ref)
                    frame = warp_bilinear(frame, full, static_cast<Scalar>(k - ref));
                set_channel(input, k, frame);
            }
        }
        RecurrentIteration rit;
        rit.accum_before = accum;
        ForwardTrace trace;
        rit.result = forward_multiscale(input, net, cfg,
                                        want_traces ? &trace : nullptr);
        for (size_t p = 0; p < accum.data.size(); ++p)
            accum.data[p] += rit.result.flow.data[p];
        rit.accum_after = accum;
        rr.iterations.push_back(std::move(rit));
        if (want_traces) rr.traces.push_back(std::move(trace));
    }
    rr.flow = accum;
    return rr;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

namespace {

ExpandedWeights zero_like(const ExpandedWeights& w) {
    ExpandedWeights z;
    z.kernels.reserve(w.kernels.size());
    for (const Kernel3& k : w.kernels)
        z.kernels.emplace_back(k.size_y, k.size_x, k.depth);
    z.bias.assign(w.bias.size(), 0);
    return z;
}

void add_canonical(CanonicalWeights& dst, const CanonicalWeights& src) {
    for (size_t p = 0; p < dst.slices.size(); ++p) dst.slices[p] += src.slices[p];
    for (size_t p = 0; p < dst.bias.size(); ++p) dst.bias[p] += src.bias[p];
}

}  // namespace

void backward_multiscale(const ForwardTrace& trace, const Tensor3& flow_cot,
                         const Tensor3& dist_cot, const ExpandedNetwork& net,
                         const NetworkConfig& cfg, NetworkGrads& grads) {
    require(!trace.scales.empty(), "backward: forward trace is empty");
    const int M = cfg.kernels_per_orientation, O = cfg.orientations;
    const int MO = M * O;
    const int Su = static_cast<int>(trace.scales.size());
    const int ch = trace.distribution.height, cw = trace.distribution.width;

    // output layer
    Tensor3 gdist(ch, cw, trace.distribution.channels);
    if (dist_cot.size() > 0) gdist = dist_cot;
    ExpandedWeights g4 = zero_like(net.h4);
    if (flow_cot.size() > 0) {
        for (int k = 0; k < 2; ++k) {
            Tensor3 up = extract_channel(flow_cot, k);
            g4.kernels[k] = conv3d_grad_weights(up, trace.distribution, 1, 1);
            g4.bias[k] = conv3d_grad_bias(up);
            conv3d_grad_input(up, net.h4.kernels[k], gdist);
        }
    }
    add_canonical(grads.h4, fold_gradients(g4, cfg.spec_h4()));

    // softmax and hidden decoding layer
    Tensor3 gscores = softmax_backward(gdist, trace.distribution);
    std::vector<Kernel3> h3k = slice_decode_kernels(net.h3, cfg, Su);
    ExpandedWeights g3 = zero_like(net.h3);
    Tensor3 gconcat(ch, cw, trace.concat.channels);
    for (int k = 0; k < gscores.channels; ++k) {
        Tensor3 up = extract_channel(gscores, k);
        Kernel3 gk = conv3d_grad_weights(up, trace.concat, 1, 1);
        // scatter the present pyramid levels back into the full-depth kernel
        for (int o = 0; o < O; ++o)
            for (int s = 0; s < Su; ++s)
                for (int m = 0; m < M; ++m)
                    g3.kernels[k].at(0, 0, (o * cfg.num_scales + s) * M + m) =
                        gk.at(0, 0, (o * Su + s) * M + m);
        g3.bias[k] = conv3d_grad_bias(up);
        conv3d_grad_input(up, h3k[k], gconcat);
    }
    add_canonical(grads.h3, fold_gradients(g3, cfg.spec_h3()));

    // feature extractor, per scale
    ExpandedWeights g2 = zero_like(net.h2);
    ExpandedWeights g1 = zero_like(net.h1);
    const bool train_h1 = !cfg.options.fixed_gaussian_h1;
    for (int s = 0; s < Su; ++s) {
        const ScaleTrace& st = trace.scales[s];
        const int fh = st.pooled.height, fw = st.pooled.width;

        // de-concatenate this scale's channels
        Tensor3 gup(ch, cw, MO);
        const size_t pixels = static_cast<size_t>(ch) * cw;
        for (size_t p = 0; p < pixels; ++p) {
            const Scalar* src = &gconcat.data[p * gconcat.channels];
            Scalar* dst = &gup.data[p * MO];
            for (int o = 0; o < O; ++o)
                for (int m = 0; m < M; ++m)
                    dst[o * M + m] = src[(o * Su + s) * M + m];
        }
        Tensor3 gfeat = (fh == ch && fw == cw)
                            ? std::move(gup)
                            : resize_bilinear_grad(gup, fh, fw);

        // ReLU after the interaction filters
        for (size_t p = 0; p < gfeat.data.size(); ++p)
            if (st.smoothing_response.data[p] <= 0) gfeat.data[p] = 0;

        Tensor3 gnorm(fh, fw, MO);
        for (int k = 0; k < MO; ++k) {
            Tensor3 up = extract_channel(gfeat, k);
            Kernel3 gk = conv3d_grad_weights(up, st.norm_output, cfg.kernel_size,
                                             cfg.kernel_size);
            for (size_t p = 0; p < gk.weights.size(); ++p)
                g2.kernels[k].weights[p] += gk.weights[p];
            g2.bias[k] += conv3d_grad_bias(up);
            conv3d_grad_input(up, net.h2.kernels[k], gnorm);
        }

        Tensor3 gpooled =
            cfg.options.orientation_norm
                ? orientation_norm_backward(gnorm, st.pooled, M, O, cfg.epsilon)
                : std::move(gnorm);
        Tensor3 grect = maxpool_grad(gpooled, st.pool_argmax);

        if (cfg.options.rectifier == PipelineOptions::Rectifier::Square) {
            for (size_t p = 0; p < grect.data.size(); ++p)
                grect.data[p] *= 2 * st.motion_response.data[p];
        } else {
            for (size_t p = 0; p < grect.data.size(); ++p)
                if (st.motion_response.data[p] <= 0) grect.data[p] = 0;
        }

        if (train_h1) {
            for (int k = 0; k < MO; ++k) {
                Tensor3 up = extract_channel(grect, k);
                Kernel3 gk = conv3d_grad_weights(up, st.conv1_input,
                                                 cfg.kernel_size, cfg.kernel_size);
                for (size_t p = 0; p < gk.weights.size(); ++p)
                    g1.kernels[k].weights[p] += gk.weights[p];
                g1.bias[k] += conv3d_grad_bias(up);
            }
        }
    }
    add_canonical(grads.h2, fold_gradients(g2, cfg.spec_h2()));
    if (train_h1) add_canonical(grads.h1, fold_gradients(g1, cfg.spec_h1()));
}

}  // namespace motionflow
