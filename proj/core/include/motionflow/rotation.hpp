#pragma once

// Rotation-tied weight storage.
//
// Feature channels are organized into orientation groups. A tied layer keeps
// one canonical copy of each 2D kernel slice at the reference output
// orientation (angle 0), indexed by the *relative-orientation class* of the
// (input group, output group) pair: two pairs share a class exactly when the
// cosines of their relative angles agree, i.e. when their relative angles
// fold to the same value in [0, pi].
//
// Expansion materializes the full kernel bank: the slice acting between input
// group i and output group j is the canonical slice of class(i, j) rotated by
// the output-group angle (bilinear rotation; quarter turns are exact index
// permutations). Pixelwise (1x1) layers skip the spatial rotation, which has
// no effect on them. Biases are stored once per within-group channel and
// replicated across orientation groups.
//
// fold_gradients is the exact adjoint of expand: every expanded copy's
// cotangent is pulled back through the rotation adjoint and summed onto its
// canonical slice, so finite differences of a canonical parameter match the
// folded analytic gradient.
//
// Class arithmetic is exact: group angles are rational fractions of a full
// turn, so relative angles reduce to integers over a common denominator.

#include <string>
#include <vector>

#include "motionflow/tensor.hpp"

namespace motionflow {

// Regularly spaced orientations expressed as numer[g]/denom of a full turn.
struct OrientationSet {
    int denom = 1;
    std::vector<int> numerators;

    int count() const { return static_cast<int>(numerators.size()); }
    Scalar angle(int g) const;  // radians in [0, 2*pi)

    // g * 2*pi / n for g = 0..n-1.
    static OrientationSet regular(int n);
    // The flow output pair: angles {0, pi/2} (u and v projections).
    static OrientationSet flow_uv();
};

struct TiedLayerSpec {
    OrientationSet input_orientations;   // O_in groups
    OrientationSet output_orientations;  // P groups
    int channels_per_input_group = 1;    // M
    int channels_per_output_group = 1;   // N
    int kernel_y = 1;
    int kernel_x = 1;
    bool spatially_rotated = true;  // false for 1x1 pixelwise layers
    bool tied = true;               // false: independent bank (ablation)
    // Orientation-free input (raw frames): rotating the input cannot permute
    // input channels, so every (input, output) pair sits at the same relative
    // orientation and the whole layer collapses to a single tie class - all
    // orientation copies are rotations of one canonical kernel.
    bool isotropic_input = false;

    int input_groups() const { return input_orientations.count(); }
    int output_groups() const { return output_orientations.count(); }
    int input_channels() const { return input_groups() * channels_per_input_group; }
    int output_channels() const { return output_groups() * channels_per_output_group; }
};

// Number of distinct relative-orientation classes of the layer. For regular
// even O (input = output) this is O/2 + 1: relative angles 0..pi inclusive,
// with 0 and pi as singletons. Note the commonly quoted ceil(O/2) storage
// count understates this by one for even O.
int tie_class_count(const TiedLayerSpec& spec);

// Class index of the (input group, output group) pair, in [0, class count).
// Classes are ordered by increasing folded relative angle, so class 0 is
// always the zero-angle class.
int relative_orientation_class(int input_group, int output_group,
                               const TiedLayerSpec& spec);

// Folded representative angle of a class, in [0, pi].
Scalar tie_class_angle(int cls, const TiedLayerSpec& spec);

// The minimal stored parameter set of one tied layer. Slice layout:
// [slot][m][n][ky][kx], where a slot is a tie class (tied) or a flat
// (output group, input group) pair (untied). Bias layout: [n] (tied,
// replicated across groups) or [j*N + n] (untied).
struct CanonicalWeights {
    int slots = 0;
    int in_per_group = 0;
    int out_per_group = 0;
    int kernel_y = 0;
    int kernel_x = 0;
    std::vector<Scalar> slices;
    std::vector<Scalar> bias;

    size_t slice_elems() const {
        return static_cast<size_t>(kernel_y) * kernel_x;
    }
    Scalar* slice(int slot, int m, int n) {
        return &slices[(((static_cast<size_t>(slot) * in_per_group + m) *
                         out_per_group) + n) * slice_elems()];
    }
    const Scalar* slice(int slot, int m, int n) const {
        return &slices[(((static_cast<size_t>(slot) * in_per_group + m) *
                         out_per_group) + n) * slice_elems()];
    }
};

// Full kernel bank for a forward pass: one kernel per output channel
// (j*N + n), depth spanning all input channels (i*M + m), plus one bias per
// output channel. Also the container for expanded-shaped cotangents.
struct ExpandedWeights {
    std::vector<Kernel3> kernels;
    std::vector<Scalar> bias;
};

// Zero-initialized canonical storage with the right shape for the spec.
CanonicalWeights make_canonical(const TiedLayerSpec& spec);

ExpandedWeights expand(const CanonicalWeights& canonical,
                       const TiedLayerSpec& spec);

// Exact adjoint of expand (sum over each tied set, rotations pulled back
// through the bilinear-rotation adjoint).
CanonicalWeights fold_gradients(const ExpandedWeights& expanded_grads,
                                const TiedLayerSpec& spec);

// Brute-force tie checker over all (i, i', j, j', m, n):
//  - every expanded slice must equal, bit for bit, the rotation of its
//    canonical source slice by its output-group angle;
//  - cosine-matched pairs at the same output angle must be bit-identical;
//  - cosine-matched pairs whose output angles are both quarter turns must
//    satisfy the literal rotated-copy identity through the exact permutation
//    path (covers every pair when all orientations are quarter turns).
// Non-grid angle pairs are rotated copies only through the shared canonical
// source; two chained bilinear resamplings do not reproduce one.
bool check_tie_constraints(const ExpandedWeights& expanded,
                           const CanonicalWeights& canonical,
                           const TiedLayerSpec& spec, std::string* why = nullptr);

// Slice/parameter bookkeeping used by tests and the storage-ratio assertions.
size_t canonical_slice_count(const TiedLayerSpec& spec);
size_t expanded_slice_count(const TiedLayerSpec& spec);

}  // namespace motionflow
