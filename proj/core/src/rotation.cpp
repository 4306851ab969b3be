#include "motionflow/rotation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace motionflow {

namespace {
constexpr Scalar kTwoPi = 2.0 * M_PI;
}

Scalar OrientationSet::angle(int g) const {
    return kTwoPi * static_cast<Scalar>(numerators[g]) / static_cast<Scalar>(denom);
}

OrientationSet OrientationSet::regular(int n) {
    require(n >= 1, "OrientationSet: need at least one orientation");
    OrientationSet s;
    s.denom = n;
    s.numerators.resize(n);
    std::iota(s.numerators.begin(), s.numerators.end(), 0);
    return s;
}

OrientationSet OrientationSet::flow_uv() {
    OrientationSet s;
    s.denom = 4;
    s.numerators = {0, 1};
    return s;
}

namespace {

// Relative angle of pair (i, j) as an integer numerator over lcm denominator,
// folded to [0, L/2] (same fold as taking the cosine).
struct ClassKeys {
    int lcm;
    std::vector<int> sorted_keys;  // distinct folded numerators, ascending
};

int folded_key(int i, int j, const TiedLayerSpec& spec, int L) {
    if (spec.isotropic_input) return 0;
    const int oi = spec.input_orientations.numerators[i] *
                   (L / spec.input_orientations.denom);
    const int oj = spec.output_orientations.numerators[j] *
                   (L / spec.output_orientations.denom);
    int r = (oj - oi) % L;
    if (r < 0) r += L;
    return std::min(r, L - r);
}

ClassKeys class_keys(const TiedLayerSpec& spec) {
    ClassKeys ck;
    ck.lcm = std::lcm(spec.input_orientations.denom,
                      spec.output_orientations.denom);
    for (int j = 0; j < spec.output_groups(); ++j)
        for (int i = 0; i < spec.input_groups(); ++i)
            ck.sorted_keys.push_back(folded_key(i, j, spec, ck.lcm));
    std::sort(ck.sorted_keys.begin(), ck.sorted_keys.end());
    ck.sorted_keys.erase(
        std::unique(ck.sorted_keys.begin(), ck.sorted_keys.end()),
        ck.sorted_keys.end());
    return ck;
}

int class_of(int i, int j, const TiedLayerSpec& spec, const ClassKeys& ck) {
    const int key = folded_key(i, j, spec, ck.lcm);
    const auto it =
        std::lower_bound(ck.sorted_keys.begin(), ck.sorted_keys.end(), key);
    return static_cast<int>(it - ck.sorted_keys.begin());
}

bool is_quarter_turn(int numer, int denom) {
    // angle numer/denom of a full turn is a multiple of 1/4 turn
    return (4 * numer) % denom == 0;
}

}  // namespace

int tie_class_count(const TiedLayerSpec& spec) {
    return static_cast<int>(class_keys(spec).sorted_keys.size());
}

int relative_orientation_class(int input_group, int output_group,
                               const TiedLayerSpec& spec) {
    require(input_group >= 0 && input_group < spec.input_groups(),
            "relative_orientation_class: input group out of range");
    require(output_group >= 0 && output_group < spec.output_groups(),
            "relative_orientation_class: output group out of range");
    const ClassKeys ck = class_keys(spec);
    return class_of(input_group, output_group, spec, ck);
}

Scalar tie_class_angle(int cls, const TiedLayerSpec& spec) {
    const ClassKeys ck = class_keys(spec);
    require(cls >= 0 && cls < static_cast<int>(ck.sorted_keys.size()),
            "tie_class_angle: class out of range");
    return kTwoPi * static_cast<Scalar>(ck.sorted_keys[cls]) /
           static_cast<Scalar>(ck.lcm);
}

CanonicalWeights make_canonical(const TiedLayerSpec& spec) {
    CanonicalWeights c;
    c.in_per_group = spec.channels_per_input_group;
    c.out_per_group = spec.channels_per_output_group;
    c.kernel_y = spec.kernel_y;
    c.kernel_x = spec.kernel_x;
    if (spec.tied) {
        c.slots = tie_class_count(spec);
        c.bias.assign(spec.channels_per_output_group, 0);
    } else {
        c.slots = spec.output_groups() * spec.input_groups();
        c.bias.assign(spec.output_channels(), 0);
    }
    c.slices.assign(static_cast<size_t>(c.slots) * c.in_per_group *
                        c.out_per_group * c.slice_elems(),
                    0);
    return c;
}

size_t canonical_slice_count(const TiedLayerSpec& spec) {
    const size_t slots = spec.tied
                             ? static_cast<size_t>(tie_class_count(spec))
                             : static_cast<size_t>(spec.output_groups()) *
                                   spec.input_groups();
    return slots * spec.channels_per_input_group * spec.channels_per_output_group;
}

size_t expanded_slice_count(const TiedLayerSpec& spec) {
    return static_cast<size_t>(spec.input_channels()) * spec.output_channels();
}

namespace {

// Copies a canonical (or rotated) 2D slice into depth position d of kernel k.
void write_slice(Kernel3& k, int d, const Scalar* plane) {
    const int sy = k.size_y, sx = k.size_x;
    for (int y = 0; y < sy; ++y)
        for (int x = 0; x < sx; ++x)
            k.at(y, x, d) = plane[static_cast<size_t>(y) * sx + x];
}

Kernel3 slice_as_kernel(const Scalar* plane, int sy, int sx) {
    Kernel3 k(sy, sx, 1);
    std::memcpy(k.weights.data(), plane,
                static_cast<size_t>(sy) * sx * sizeof(Scalar));
    return k;
}

}  // namespace

ExpandedWeights expand(const CanonicalWeights& canonical,
                       const TiedLayerSpec& spec) {
    const int M = spec.channels_per_input_group;
    const int N = spec.channels_per_output_group;
    const int Oin = spec.input_groups();
    const int P = spec.output_groups();
    const int sy = spec.kernel_y, sx = spec.kernel_x;
    require(canonical.in_per_group == M && canonical.out_per_group == N &&
                canonical.kernel_y == sy && canonical.kernel_x == sx,
            "expand: canonical shape does not match the layer spec");

    ExpandedWeights ew;
    ew.kernels.assign(spec.output_channels(), Kernel3(sy, sx, Oin * M));
    ew.bias.assign(spec.output_channels(), 0);

    if (!spec.tied) {
        require(canonical.slots == P * Oin, "expand: untied slot count mismatch");
        for (int j = 0; j < P; ++j)
            for (int n = 0; n < N; ++n) {
                Kernel3& k = ew.kernels[j * N + n];
                for (int i = 0; i < Oin; ++i)
                    for (int m = 0; m < M; ++m)
                        write_slice(k, i * M + m,
                                    canonical.slice(j * Oin + i, m, n));
                ew.bias[j * N + n] = canonical.bias[j * N + n];
            }
        return ew;
    }

    const ClassKeys ck = class_keys(spec);
    require(canonical.slots == static_cast<int>(ck.sorted_keys.size()),
            "expand: canonical slot count does not match the tie classes");

    // One rotation per (output group, class, m, n); tied copies share it.
    const size_t plane = canonical.slice_elems();
    std::vector<Scalar> rotated(static_cast<size_t>(canonical.slots) * M * N *
                                plane);
    auto rotated_slice = [&](int cls, int m, int n) {
        return &rotated[(((static_cast<size_t>(cls) * M + m) * N) + n) * plane];
    };

    for (int j = 0; j < P; ++j) {
        const Scalar theta = spec.output_orientations.angle(j);
        if (spec.spatially_rotated) {
            for (int cls = 0; cls < canonical.slots; ++cls)
                for (int m = 0; m < M; ++m)
                    for (int n = 0; n < N; ++n) {
                        Kernel3 r = rotate_bilinear(
                            slice_as_kernel(canonical.slice(cls, m, n), sy, sx),
                            theta);
                        std::memcpy(rotated_slice(cls, m, n), r.weights.data(),
                                    plane * sizeof(Scalar));
                    }
        } else {
            std::memcpy(rotated.data(), canonical.slices.data(),
                        rotated.size() * sizeof(Scalar));
        }
        for (int n = 0; n < N; ++n) {
            Kernel3& k = ew.kernels[j * N + n];
            for (int i = 0; i < Oin; ++i) {
                const int cls = class_of(i, j, spec, ck);
                for (int m = 0; m < M; ++m)
                    write_slice(k, i * M + m, rotated_slice(cls, m, n));
            }
            ew.bias[j * N + n] = canonical.bias[n];
        }
    }
    return ew;
}

CanonicalWeights fold_gradients(const ExpandedWeights& expanded_grads,
                                const TiedLayerSpec& spec) {
    const int M = spec.channels_per_input_group;
    const int N = spec.channels_per_output_group;
    const int Oin = spec.input_groups();
    const int P = spec.output_groups();
    const int sy = spec.kernel_y, sx = spec.kernel_x;
    require(static_cast<int>(expanded_grads.kernels.size()) ==
                spec.output_channels(),
            "fold_gradients: expanded kernel count mismatch");

    CanonicalWeights g = make_canonical(spec);
    const size_t plane = g.slice_elems();

    if (!spec.tied) {
        for (int j = 0; j < P; ++j)
            for (int n = 0; n < N; ++n) {
                const Kernel3& k = expanded_grads.kernels[j * N + n];
                for (int i = 0; i < Oin; ++i)
                    for (int m = 0; m < M; ++m) {
                        Scalar* dst = g.slice(j * Oin + i, m, n);
                        for (int y = 0; y < sy; ++y)
                            for (int x = 0; x < sx; ++x)
                                dst[static_cast<size_t>(y) * sx + x] +=
                                    k.at(y, x, i * M + m);
                    }
                g.bias[j * N + n] += expanded_grads.bias[j * N + n];
            }
        return g;
    }

    const ClassKeys ck = class_keys(spec);
    for (int j = 0; j < P; ++j) {
        const Scalar theta = spec.output_orientations.angle(j);
        // Sum the cotangents of all input groups sharing a class before the
        // one rotation pullback per (class, m, n).
        std::vector<Scalar> by_class(static_cast<size_t>(g.slots) * M * N *
                                         plane,
                                     0);
        auto class_slice = [&](int cls, int m, int n) {
            return &by_class[(((static_cast<size_t>(cls) * M + m) * N) + n) *
                             plane];
        };
        for (int n = 0; n < N; ++n) {
            const Kernel3& k = expanded_grads.kernels[j * N + n];
            for (int i = 0; i < Oin; ++i) {
                const int cls = class_of(i, j, spec, ck);
                for (int m = 0; m < M; ++m) {
                    Scalar* dst = class_slice(cls, m, n);
                    for (int y = 0; y < sy; ++y)
                        for (int x = 0; x < sx; ++x)
                            dst[static_cast<size_t>(y) * sx + x] +=
                                k.at(y, x, i * M + m);
                }
            }
            g.bias[n] += expanded_grads.bias[j * N + n];
        }
        for (int cls = 0; cls < g.slots; ++cls)
            for (int m = 0; m < M; ++m)
                for (int n = 0; n < N; ++n) {
                    Kernel3 pulled =
                        spec.spatially_rotated
                            ? rotate_bilinear_adjoint(
                                  slice_as_kernel(class_slice(cls, m, n), sy, sx),
                                  theta)
                            : slice_as_kernel(class_slice(cls, m, n), sy, sx);
                    Scalar* dst = g.slice(cls, m, n);
                    for (size_t p = 0; p < plane; ++p) dst[p] += pulled.weights[p];
                }
    }
    return g;
}

namespace {

bool slices_equal(const Kernel3& a, int da, const Kernel3& b, int db) {
    for (int y = 0; y < a.size_y; ++y)
        for (int x = 0; x < a.size_x; ++x)
            if (a.at(y, x, da) != b.at(y, x, db)) return false;
    return true;
}

std::string quad_name(int i, int j, int ip, int jp, int m, int n) {
    std::ostringstream os;
    os << "(i=" << i << ",j=" << j << ") vs (i'=" << ip << ",j'=" << jp
       << "), m=" << m << ", n=" << n;
    return os.str();
}

}  // namespace

bool check_tie_constraints(const ExpandedWeights& expanded,
                           const CanonicalWeights& canonical,
                           const TiedLayerSpec& spec, std::string* why) {
    require(spec.tied, "check_tie_constraints: spec must be tied");
    const int M = spec.channels_per_input_group;
    const int N = spec.channels_per_output_group;
    const int Oin = spec.input_groups();
    const int P = spec.output_groups();
    const ClassKeys ck = class_keys(spec);
    const int sy = spec.kernel_y, sx = spec.kernel_x;
    auto fail = [&](const std::string& msg) {
        if (why) *why = msg;
        return false;
    };

    // Generative identity: each expanded slice is the rotation of its
    // canonical source by the output-group angle.
    for (int j = 0; j < P; ++j) {
        const Scalar theta = spec.output_orientations.angle(j);
        for (int i = 0; i < Oin; ++i) {
            const int cls = class_of(i, j, spec, ck);
            for (int m = 0; m < M; ++m) {
                for (int n = 0; n < N; ++n) {
                    Kernel3 expect = slice_as_kernel(canonical.slice(cls, m, n),
                                                     sy, sx);
                    if (spec.spatially_rotated)
                        expect = rotate_bilinear(expect, theta);
                    const Kernel3& got = expanded.kernels[j * N + n];
                    for (int y = 0; y < sy; ++y)
                        for (int x = 0; x < sx; ++x)
                            if (got.at(y, x, i * M + m) != expect.at(y, x, 0))
                                return fail("generative mismatch at " +
                                            quad_name(i, j, i, j, m, n));
                }
            }
        }
    }

    // Pairwise constraints over all cosine-matched quadruples.
    for (int j = 0; j < P; ++j)
        for (int i = 0; i < Oin; ++i)
            for (int jp = 0; jp < P; ++jp)
                for (int ip = 0; ip < Oin; ++ip) {
                    if (class_of(i, j, spec, ck) != class_of(ip, jp, spec, ck))
                        continue;
                    const bool same_angle =
                        spec.output_orientations.numerators[j] ==
                        spec.output_orientations.numerators[jp];
                    const bool grid_pair =
                        !spec.spatially_rotated ||
                        (is_quarter_turn(spec.output_orientations.numerators[j],
                                         spec.output_orientations.denom) &&
                         is_quarter_turn(spec.output_orientations.numerators[jp],
                                         spec.output_orientations.denom));
                    for (int n = 0; n < N; ++n) {
                        const Kernel3& a = expanded.kernels[j * N + n];
                        const Kernel3& b = expanded.kernels[jp * N + n];
                        for (int m = 0; m < M; ++m) {
                            if (same_angle || !spec.spatially_rotated) {
                                if (!slices_equal(a, i * M + m, b, ip * M + m))
                                    return fail("equal-angle mismatch at " +
                                                quad_name(i, j, ip, jp, m, n));
                            } else if (grid_pair) {
                                // literal rotated-copy identity, exact
                                Kernel3 bs(sy, sx, 1);
                                for (int y = 0; y < sy; ++y)
                                    for (int x = 0; x < sx; ++x)
                                        bs.at(y, x, 0) = b.at(y, x, ip * M + m);
                                const Scalar dtheta =
                                    spec.output_orientations.angle(j) -
                                    spec.output_orientations.angle(jp);
                                Kernel3 rb = rotate_bilinear(bs, dtheta);
                                if (!slices_equal(a, i * M + m, rb, 0))
                                    return fail("rotated-copy mismatch at " +
                                                quad_name(i, j, ip, jp, m, n));
                            }
                        }
                    }
                }
    return true;
}

}  // namespace motionflow
