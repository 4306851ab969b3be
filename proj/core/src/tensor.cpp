#include "motionflow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "motionflow/parallel.hpp"

namespace motionflow {

int thread_budget() {
    static const int budget = [] {
        if (const char* env = std::getenv("MOTIONFLOW_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hc = std::thread::hardware_concurrency();
        return hc == 0 ? 1 : static_cast<int>(hc);
    }();
    return budget;
}

namespace {
thread_local bool inside_parallel = false;
}

void parallel_for(int n, const std::function<void(int)>& fn) {
    const int workers = std::min(n, thread_budget());
    if (workers <= 1 || inside_parallel) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            inside_parallel = true;
            for (int i = w; i < n; i += workers) fn(i);
            inside_parallel = false;
        });
    }
    for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

Tensor3 conv2d(const Tensor3& input, const Kernel3& kernel, PaddingPolicy) {
    require(input.channels == 1, "conv2d: input must be a single plane");
    require(kernel.depth == 1, "conv2d: kernel depth must be 1");
    const int H = input.height, W = input.width;
    const int ry = kernel.size_y / 2, rx = kernel.size_x / 2;
    Tensor3 out(H, W, 1);
    for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
            Scalar acc = 0;
            for (int ky = 0; ky < kernel.size_y; ++ky) {
                const int y = clamp_index(i + ky - ry, H);
                const Scalar* row = &input.data[static_cast<size_t>(y) * W];
                for (int kx = 0; kx < kernel.size_x; ++kx) {
                    const int x = clamp_index(j + kx - rx, W);
                    acc += kernel.at(ky, kx, 0) * row[x];
                }
            }
            out.at(i, j, 0) = acc;
        }
    }
    return out;
}

Tensor3 conv3d(const Tensor3& input, const Kernel3& kernel, Scalar bias,
               PaddingPolicy) {
    require(kernel.depth == input.channels,
            "conv3d: kernel depth must match input channels");
    const int H = input.height, W = input.width, C = input.channels;
    const int sy = kernel.size_y, sx = kernel.size_x;
    const int ry = sy / 2, rx = sx / 2;
    Tensor3 out(H, W, 1);
    for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
            Scalar acc = bias;
            const bool interior =
                i >= ry && i < H - ry && j >= rx && j < W - rx;
            for (int ky = 0; ky < sy; ++ky) {
                const int y = interior ? i + ky - ry : clamp_index(i + ky - ry, H);
                const Scalar* row = &input.data[static_cast<size_t>(y) * W * C];
                const Scalar* krow = &kernel.weights[static_cast<size_t>(ky) * sx * C];
                if (interior) {
                    const Scalar* px = row + static_cast<size_t>(j - rx) * C;
                    const size_t span = static_cast<size_t>(sx) * C;
                    for (size_t t = 0; t < span; ++t) acc += krow[t] * px[t];
                } else {
                    for (int kx = 0; kx < sx; ++kx) {
                        const int x = clamp_index(j + kx - rx, W);
                        const Scalar* px = row + static_cast<size_t>(x) * C;
                        const Scalar* kw = krow + static_cast<size_t>(kx) * C;
                        for (int c = 0; c < C; ++c) acc += kw[c] * px[c];
                    }
                }
            }
            out.at(i, j, 0) = acc;
        }
    }
    return out;
}

Tensor3 conv3d_bank(const Tensor3& input, const std::vector<Kernel3>& kernels,
                    const std::vector<Scalar>& biases) {
    require(kernels.size() == biases.size(),
            "conv3d_bank: one bias per kernel");
    require(!kernels.empty(), "conv3d_bank: empty bank");
    const int K = static_cast<int>(kernels.size());
    Tensor3 out(input.height, input.width, K);
    parallel_for(K, [&](int k) {
        Tensor3 plane = conv3d(input, kernels[k], biases[k]);
        const size_t n = plane.size();
        for (size_t p = 0; p < n; ++p) out.data[p * K + k] = plane.data[p];
    });
    return out;
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

std::pair<Tensor3, ArgmaxRecord> maxpool(const Tensor3& input, int window) {
    require(window >= 1, "maxpool: window must be >= 1");
    const int H = input.height, W = input.width, C = input.channels;
    const int oh = (H + 1) / 2, ow = (W + 1) / 2;
    // Even windows reach one element further right/down than left/up.
    const int lo = (window - 1) / 2;
    const int hi = window - 1 - lo;
    Tensor3 out(oh, ow, C);
    ArgmaxRecord rec;
    rec.input_height = H;
    rec.input_width = W;
    rec.channels = C;
    rec.index.assign(out.size(), 0);
    for (int oi = 0; oi < oh; ++oi) {
        const int y0 = std::max(0, 2 * oi - lo);
        const int y1 = std::min(H - 1, 2 * oi + hi);
        for (int oj = 0; oj < ow; ++oj) {
            const int x0 = std::max(0, 2 * oj - lo);
            const int x1 = std::min(W - 1, 2 * oj + hi);
            for (int k = 0; k < C; ++k) {
                Scalar best = input.at(y0, x0, k);
                int32_t best_idx =
                    static_cast<int32_t>((static_cast<size_t>(y0) * W + x0) * C + k);
                for (int y = y0; y <= y1; ++y) {
                    for (int x = x0; x <= x1; ++x) {
                        const Scalar v = input.at(y, x, k);
                        if (v > best) {
                            best = v;
                            best_idx = static_cast<int32_t>(
                                (static_cast<size_t>(y) * W + x) * C + k);
                        }
                    }
                }
                out.at(oi, oj, k) = best;
                rec.index[(static_cast<size_t>(oi) * ow + oj) * C + k] = best_idx;
            }
        }
    }
    return {std::move(out), std::move(rec)};
}

Tensor3 maxpool_grad(const Tensor3& upstream, const ArgmaxRecord& record) {
    require(upstream.size() == record.index.size(),
            "maxpool_grad: upstream shape does not match the forward record");
    Tensor3 grad(record.input_height, record.input_width, record.channels);
    for (size_t p = 0; p < record.index.size(); ++p)
        grad.data[record.index[p]] += upstream.data[p];
    return grad;
}

// ---------------------------------------------------------------------------
// bilinear resize
// ---------------------------------------------------------------------------

namespace {
// Corner-aligned source coordinate for target index i; a single-row/column
// target collapses to the first source corner.
inline Scalar src_coord(int i, int dst_n, int src_n) {
    if (dst_n <= 1 || src_n <= 1) return 0;
    return static_cast<Scalar>(i) *
           (static_cast<Scalar>(src_n - 1) / static_cast<Scalar>(dst_n - 1));
}

struct Taps {
    int y0, y1, x0, x1;
    Scalar fy, fx;
};

inline Taps bilinear_taps(Scalar gy, Scalar gx, int H, int W) {
    Taps t;
    const Scalar fy0 = std::floor(gy);
    const Scalar fx0 = std::floor(gx);
    t.y0 = static_cast<int>(fy0);
    t.x0 = static_cast<int>(fx0);
    t.fy = gy - fy0;
    t.fx = gx - fx0;
    t.y1 = std::min(t.y0 + 1, H - 1);
    t.x1 = std::min(t.x0 + 1, W - 1);
    t.y0 = clamp_index(t.y0, H);
    t.x0 = clamp_index(t.x0, W);
    return t;
}
}  // namespace

Tensor3 resize_bilinear(const Tensor3& input, int new_height, int new_width) {
    require(new_height >= 1 && new_width >= 1,
            "resize_bilinear: target dimensions must be >= 1");
    const int H = input.height, W = input.width, C = input.channels;
    Tensor3 out(new_height, new_width, C);
    for (int i = 0; i < new_height; ++i) {
        const Scalar gy = src_coord(i, new_height, H);
        for (int j = 0; j < new_width; ++j) {
            const Scalar gx = src_coord(j, new_width, W);
            const Taps t = bilinear_taps(gy, gx, H, W);
            for (int k = 0; k < C; ++k) {
                const Scalar a = input.at(t.y0, t.x0, k);
                const Scalar b = input.at(t.y0, t.x1, k);
                const Scalar c = input.at(t.y1, t.x0, k);
                const Scalar d = input.at(t.y1, t.x1, k);
                out.at(i, j, k) = (1 - t.fy) * ((1 - t.fx) * a + t.fx * b) +
                                  t.fy * ((1 - t.fx) * c + t.fx * d);
            }
        }
    }
    return out;
}

Tensor3 resize_bilinear_grad(const Tensor3& upstream, int input_height,
                             int input_width) {
    const int H = input_height, W = input_width, C = upstream.channels;
    Tensor3 grad(H, W, C);
    for (int i = 0; i < upstream.height; ++i) {
        const Scalar gy = src_coord(i, upstream.height, H);
        for (int j = 0; j < upstream.width; ++j) {
            const Scalar gx = src_coord(j, upstream.width, W);
            const Taps t = bilinear_taps(gy, gx, H, W);
            for (int k = 0; k < C; ++k) {
                const Scalar g = upstream.at(i, j, k);
                grad.at(t.y0, t.x0, k) += (1 - t.fy) * (1 - t.fx) * g;
                grad.at(t.y0, t.x1, k) += (1 - t.fy) * t.fx * g;
                grad.at(t.y1, t.x0, k) += t.fy * (1 - t.fx) * g;
                grad.at(t.y1, t.x1, k) += t.fy * t.fx * g;
            }
        }
    }
    return grad;
}

// ---------------------------------------------------------------------------
// rotation
// ---------------------------------------------------------------------------

namespace {
constexpr Scalar kQuarterTurnSnap = 1e-9;

// Returns 0..3 if angle is within snap distance of q * pi/2, else -1.
int quarter_turn(Scalar angle) {
    const Scalar half_pi = static_cast<Scalar>(M_PI) / 2;
    Scalar q = angle / half_pi;
    Scalar qr = std::round(q);
    if (std::abs(q - qr) * half_pi > kQuarterTurnSnap) return -1;
    long qi = static_cast<long>(qr) % 4;
    if (qi < 0) qi += 4;
    return static_cast<int>(qi);
}

// Source offset (sy, sx) for an output offset (dy, dx) under rotation by q
// quarter turns: the inverse rotation applied to the output offset. Angles
// increase from +x (right) toward +y (down).
inline void quarter_source(int q, int dy, int dx, int& sy, int& sx) {
    switch (q) {
        case 0: sy = dy; sx = dx; break;
        case 1: sy = -dx; sx = dy; break;
        case 2: sy = -dy; sx = -dx; break;
        default: sy = dx; sx = -dy; break;
    }
}
}  // namespace

Kernel3 rotate_bilinear(const Kernel3& kernel, Scalar angle) {
    require(kernel.size_y == kernel.size_x,
            "rotate_bilinear: kernel must be spatially square");
    const int S = kernel.size_y, D = kernel.depth;
    const int c0 = S / 2;
    Kernel3 out(S, S, D);

    const int q = quarter_turn(angle);
    if (q >= 0) {
        for (int y = 0; y < S; ++y) {
            for (int x = 0; x < S; ++x) {
                int sy, sx;
                quarter_source(q, y - c0, x - c0, sy, sx);
                for (int d = 0; d < D; ++d)
                    out.at(y, x, d) = kernel.at(c0 + sy, c0 + sx, d);
            }
        }
        return out;
    }

    const Scalar cs = std::cos(angle), sn = std::sin(angle);
    for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
            const Scalar dy = static_cast<Scalar>(y - c0);
            const Scalar dx = static_cast<Scalar>(x - c0);
            // inverse rotation of the output offset
            const Scalar gx = cs * dx + sn * dy + c0;
            const Scalar gy = -sn * dx + cs * dy + c0;
            const int x0 = static_cast<int>(std::floor(gx));
            const int y0 = static_cast<int>(std::floor(gy));
            const Scalar fx = gx - x0, fy = gy - y0;
            for (int d = 0; d < D; ++d) {
                Scalar acc = 0;
                for (int ty = 0; ty <= 1; ++ty) {
                    const int yy = y0 + ty;
                    if (yy < 0 || yy >= S) continue;
                    const Scalar wy = ty ? fy : 1 - fy;
                    for (int tx = 0; tx <= 1; ++tx) {
                        const int xx = x0 + tx;
                        if (xx < 0 || xx >= S) continue;
                        const Scalar wx = tx ? fx : 1 - fx;
                        acc += wy * wx * kernel.at(yy, xx, d);
                    }
                }
                out.at(y, x, d) = acc;
            }
        }
    }
    return out;
}

Kernel3 rotate_bilinear_adjoint(const Kernel3& upstream, Scalar angle) {
    require(upstream.size_y == upstream.size_x,
            "rotate_bilinear_adjoint: kernel must be spatially square");
    const int S = upstream.size_y, D = upstream.depth;
    const int c0 = S / 2;
    Kernel3 grad(S, S, D);

    const int q = quarter_turn(angle);
    if (q >= 0) {
        for (int y = 0; y < S; ++y) {
            for (int x = 0; x < S; ++x) {
                int sy, sx;
                quarter_source(q, y - c0, x - c0, sy, sx);
                for (int d = 0; d < D; ++d)
                    grad.at(c0 + sy, c0 + sx, d) += upstream.at(y, x, d);
            }
        }
        return grad;
    }

    const Scalar cs = std::cos(angle), sn = std::sin(angle);
    for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
            const Scalar dy = static_cast<Scalar>(y - c0);
            const Scalar dx = static_cast<Scalar>(x - c0);
            const Scalar gx = cs * dx + sn * dy + c0;
            const Scalar gy = -sn * dx + cs * dy + c0;
            const int x0 = static_cast<int>(std::floor(gx));
            const int y0 = static_cast<int>(std::floor(gy));
            const Scalar fx = gx - x0, fy = gy - y0;
            for (int d = 0; d < D; ++d) {
                const Scalar g = upstream.at(y, x, d);
                for (int ty = 0; ty <= 1; ++ty) {
                    const int yy = y0 + ty;
                    if (yy < 0 || yy >= S) continue;
                    const Scalar wy = ty ? fy : 1 - fy;
                    for (int tx = 0; tx <= 1; ++tx) {
                        const int xx = x0 + tx;
                        if (xx < 0 || xx >= S) continue;
                        const Scalar wx = tx ? fx : 1 - fx;
                        grad.at(yy, xx, d) += wy * wx * g;
                    }
                }
            }
        }
    }
    return grad;
}

// ---------------------------------------------------------------------------
// warping
// ---------------------------------------------------------------------------

Tensor3 warp_bilinear(const Tensor3& frame, const FlowField& flow, Scalar scale) {
    require(frame.channels == 1, "warp_bilinear: frame must be a single plane");
    require(flow.channels == 2, "warp_bilinear: flow must have 2 channels");
    require(flow.height == frame.height && flow.width == frame.width,
            "warp_bilinear: flow and frame dimensions must match");
    const int H = frame.height, W = frame.width;
    Tensor3 out(H, W, 1);
    for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
            Scalar gy = i + scale * flow.at(i, j, 1);
            Scalar gx = j + scale * flow.at(i, j, 0);
            gy = std::min(std::max(gy, Scalar(0)), static_cast<Scalar>(H - 1));
            gx = std::min(std::max(gx, Scalar(0)), static_cast<Scalar>(W - 1));
            const Taps t = bilinear_taps(gy, gx, H, W);
            out.at(i, j, 0) =
                (1 - t.fy) * ((1 - t.fx) * frame.at(t.y0, t.x0, 0) +
                              t.fx * frame.at(t.y0, t.x1, 0)) +
                t.fy * ((1 - t.fx) * frame.at(t.y1, t.x0, 0) +
                        t.fx * frame.at(t.y1, t.x1, 0));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv adjoints
// ---------------------------------------------------------------------------

Tensor3 conv2d_grad_input(const Tensor3& upstream, const Kernel3& kernel,
                          int input_height, int input_width) {
    require(upstream.channels == 1, "conv2d_grad_input: upstream must be a plane");
    const int H = input_height, W = input_width;
    const int ry = kernel.size_y / 2, rx = kernel.size_x / 2;
    Tensor3 grad(H, W, 1);
    for (int i = 0; i < upstream.height; ++i) {
        for (int j = 0; j < upstream.width; ++j) {
            const Scalar g = upstream.at(i, j, 0);
            if (g == 0) continue;
            for (int ky = 0; ky < kernel.size_y; ++ky) {
                const int y = clamp_index(i + ky - ry, H);
                for (int kx = 0; kx < kernel.size_x; ++kx) {
                    const int x = clamp_index(j + kx - rx, W);
                    grad.at(y, x, 0) += kernel.at(ky, kx, 0) * g;
                }
            }
        }
    }
    return grad;
}

Kernel3 conv2d_grad_kernel(const Tensor3& upstream, const Tensor3& input,
                           int size_y, int size_x) {
    Kernel3 grad(size_y, size_x, 1);
    const int H = input.height, W = input.width;
    const int ry = size_y / 2, rx = size_x / 2;
    for (int i = 0; i < upstream.height; ++i) {
        for (int j = 0; j < upstream.width; ++j) {
            const Scalar g = upstream.at(i, j, 0);
            if (g == 0) continue;
            for (int ky = 0; ky < size_y; ++ky) {
                const int y = clamp_index(i + ky - ry, H);
                for (int kx = 0; kx < size_x; ++kx) {
                    const int x = clamp_index(j + kx - rx, W);
                    grad.at(ky, kx, 0) += input.at(y, x, 0) * g;
                }
            }
        }
    }
    return grad;
}

void conv3d_grad_input(const Tensor3& upstream, const Kernel3& kernel,
                       Tensor3& input_grad) {
    require(upstream.channels == 1, "conv3d_grad_input: upstream must be a plane");
    require(kernel.depth == input_grad.channels,
            "conv3d_grad_input: kernel depth must match input channels");
    const int H = input_grad.height, W = input_grad.width, C = input_grad.channels;
    const int sy = kernel.size_y, sx = kernel.size_x;
    const int ry = sy / 2, rx = sx / 2;
    for (int i = 0; i < upstream.height; ++i) {
        for (int j = 0; j < upstream.width; ++j) {
            const Scalar g = upstream.at(i, j, 0);
            if (g == 0) continue;
            const bool interior =
                i >= ry && i < H - ry && j >= rx && j < W - rx;
            for (int ky = 0; ky < sy; ++ky) {
                const int y = interior ? i + ky - ry : clamp_index(i + ky - ry, H);
                Scalar* row = &input_grad.data[static_cast<size_t>(y) * W * C];
                const Scalar* krow =
                    &kernel.weights[static_cast<size_t>(ky) * sx * C];
                if (interior) {
                    Scalar* px = row + static_cast<size_t>(j - rx) * C;
                    const size_t span = static_cast<size_t>(sx) * C;
                    for (size_t t = 0; t < span; ++t) px[t] += krow[t] * g;
                } else {
                    for (int kx = 0; kx < sx; ++kx) {
                        const int x = clamp_index(j + kx - rx, W);
                        Scalar* px = row + static_cast<size_t>(x) * C;
                        const Scalar* kw = krow + static_cast<size_t>(kx) * C;
                        for (int c = 0; c < C; ++c) px[c] += kw[c] * g;
                    }
                }
            }
        }
    }
}

Kernel3 conv3d_grad_weights(const Tensor3& upstream, const Tensor3& input,
                            int size_y, int size_x) {
    require(upstream.channels == 1, "conv3d_grad_weights: upstream must be a plane");
    Kernel3 grad(size_y, size_x, input.channels);
    const int H = input.height, W = input.width, C = input.channels;
    const int ry = size_y / 2, rx = size_x / 2;
    for (int i = 0; i < upstream.height; ++i) {
        for (int j = 0; j < upstream.width; ++j) {
            const Scalar g = upstream.at(i, j, 0);
            if (g == 0) continue;
            const bool interior =
                i >= ry && i < H - ry && j >= rx && j < W - rx;
            for (int ky = 0; ky < size_y; ++ky) {
                const int y = interior ? i + ky - ry : clamp_index(i + ky - ry, H);
                const Scalar* row = &input.data[static_cast<size_t>(y) * W * C];
                Scalar* krow = &grad.weights[static_cast<size_t>(ky) * size_x * C];
                if (interior) {
                    const Scalar* px = row + static_cast<size_t>(j - rx) * C;
                    const size_t span = static_cast<size_t>(size_x) * C;
                    for (size_t t = 0; t < span; ++t) krow[t] += px[t] * g;
                } else {
                    for (int kx = 0; kx < size_x; ++kx) {
                        const int x = clamp_index(j + kx - rx, W);
                        const Scalar* px = row + static_cast<size_t>(x) * C;
                        Scalar* kw = krow + static_cast<size_t>(kx) * C;
                        for (int c = 0; c < C; ++c) kw[c] += px[c] * g;
                    }
                }
            }
        }
    }
    return grad;
}

Scalar conv3d_grad_bias(const Tensor3& upstream) {
    Scalar acc = 0;
    for (Scalar v : upstream.data) acc += v;
    return acc;
}

// ---------------------------------------------------------------------------
// channel helpers
// ---------------------------------------------------------------------------

Tensor3 extract_channel(const Tensor3& t, int k) {
    require(k >= 0 && k < t.channels, "extract_channel: channel out of range");
    Tensor3 plane(t.height, t.width, 1);
    const size_t n = plane.size();
    for (size_t p = 0; p < n; ++p) plane.data[p] = t.data[p * t.channels + k];
    return plane;
}

void set_channel(Tensor3& t, int k, const Tensor3& plane) {
    require(k >= 0 && k < t.channels, "set_channel: channel out of range");
    require(plane.height == t.height && plane.width == t.width &&
                plane.channels == 1,
            "set_channel: plane shape mismatch");
    const size_t n = plane.size();
    for (size_t p = 0; p < n; ++p) t.data[p * t.channels + k] = plane.data[p];
}

}  // namespace motionflow
