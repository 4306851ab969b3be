#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "motionflow/network.hpp"
#include "motionflow/rotation.hpp"
#include "oracles.hpp"

using namespace motionflow;

namespace {

TiedLayerSpec interaction_spec(int orientations, int per_group, int ksize) {
    TiedLayerSpec s;
    s.input_orientations = OrientationSet::regular(orientations);
    s.output_orientations = OrientationSet::regular(orientations);
    s.channels_per_input_group = per_group;
    s.channels_per_output_group = per_group;
    s.kernel_y = s.kernel_x = ksize;
    s.spatially_rotated = true;
    return s;
}

void randomize(CanonicalWeights& c, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1, 1);
    for (Scalar& v : c.slices) v = static_cast<Scalar>(d(rng));
    for (Scalar& v : c.bias) v = static_cast<Scalar>(d(rng));
}

}  // namespace

TEST_CASE("relative orientation classes") {
    TiedLayerSpec s12 = interaction_spec(12, 1, 3);
    // zero relative angle is class 0
    for (int i = 0; i < 12; ++i)
        CHECK(relative_orientation_class(i, i, s12) == 0);
    // +/- one step fold to the same class (cosine symmetry)
    CHECK(relative_orientation_class(0, 1, s12) ==
          relative_orientation_class(1, 0, s12));
    // exhaustive: relative angles 0..pi give O/2 + 1 distinct classes
    CHECK(tie_class_count(s12) == 7);
    CHECK(tie_class_count(interaction_spec(4, 1, 3)) == 3);
    CHECK(tie_class_count(interaction_spec(6, 1, 3)) == 4);

    std::vector<int> seen(7, 0);
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 12; ++j) seen[relative_orientation_class(i, j, s12)]++;
    // classes 0 and pi are singleton (12 pairs each), others doubled
    CHECK(seen[0] == 12);
    CHECK(seen[6] == 12);
    for (int c = 1; c < 6; ++c) CHECK(seen[c] == 24);
}

TEST_CASE("single-orientation expansion is the identity copy") {
    TiedLayerSpec s = interaction_spec(1, 2, 3);
    CHECK(tie_class_count(s) == 1);
    CanonicalWeights c = make_canonical(s);
    randomize(c, 5);
    ExpandedWeights e = expand(c, s);
    REQUIRE(e.kernels.size() == 2);
    for (int n = 0; n < 2; ++n)
        for (int m = 0; m < 2; ++m)
            for (int y = 0; y < 3; ++y)
                for (int x = 0; x < 3; ++x)
                    CHECK(e.kernels[n].at(y, x, m) ==
                          c.slice(0, m, n)[y * 3 + x]);
}

TEST_CASE("storage bookkeeping and the advertised reduction") {
    TiedLayerSpec s = interaction_spec(12, 3, 5);  // M = N = 3
    CHECK(expanded_slice_count(s) == 12u * 12 * 3 * 3);
    // Exact enumeration stores one more class than the nominal ceil(O/2)
    // formula for even O (relative angles 0..pi inclusive), so the advertised
    // 24x reduction for O = 12 refers to the nominal count.
    const size_t nominal = static_cast<size_t>((12 + 1) / 2) * 3 * 3;
    CHECK(expanded_slice_count(s) / nominal == 24);
    CHECK(canonical_slice_count(s) == 7u * 3 * 3);
}

TEST_CASE("expanded banks satisfy the tie constraints (O = 4 and O = 12)") {
    for (int O : {4, 12}) {
        TiedLayerSpec s = interaction_spec(O, 2, 5);
        CanonicalWeights c = make_canonical(s);
        randomize(c, 100 + O);
        ExpandedWeights e = expand(c, s);
        std::string why;
        CHECK_MESSAGE(check_tie_constraints(e, c, s, &why), why);
    }
}

TEST_CASE("O = 4 expansion matches hand-rotated canonical kernels") {
    TiedLayerSpec s = interaction_spec(4, 1, 5);
    CanonicalWeights c = make_canonical(s);
    randomize(c, 21);
    ExpandedWeights e = expand(c, s);
    // brute force over all (i, j): slice must equal the canonical slice of the
    // cosine-matched class rotated by the output angle (grid-exact here)
    for (int j = 0; j < 4; ++j)
        for (int i = 0; i < 4; ++i) {
            const int cls = relative_orientation_class(i, j, s);
            Kernel3 src(5, 5, 1);
            for (int p = 0; p < 25; ++p) src.weights[p] = c.slice(cls, 0, 0)[p];
            Kernel3 expect = rotate_bilinear(src, M_PI / 2 * j);
            for (int y = 0; y < 5; ++y)
                for (int x = 0; x < 5; ++x)
                    CHECK(e.kernels[j].at(y, x, i) == expect.at(y, x, 0));
        }
}

TEST_CASE("pixelwise layers skip the spatial rotation") {
    TiedLayerSpec s = interaction_spec(8, 3, 1);
    s.spatially_rotated = false;
    CanonicalWeights c = make_canonical(s);
    randomize(c, 33);
    ExpandedWeights e = expand(c, s);
    std::string why;
    CHECK_MESSAGE(check_tie_constraints(e, c, s, &why), why);
    // every tied copy is bit-identical to its canonical scalar
    for (int j = 0; j < 8; ++j)
        for (int i = 0; i < 8; ++i) {
            const int cls = relative_orientation_class(i, j, s);
            for (int m = 0; m < 3; ++m)
                for (int n = 0; n < 3; ++n)
                    CHECK(e.kernels[j * 3 + n].at(0, 0, i * 3 + m) ==
                          c.slice(cls, m, n)[0]);
        }
}

TEST_CASE("biases replicate across orientation groups") {
    TiedLayerSpec s = interaction_spec(6, 2, 3);
    CanonicalWeights c = make_canonical(s);
    randomize(c, 55);
    ExpandedWeights e = expand(c, s);
    for (int j = 0; j < 6; ++j)
        for (int n = 0; n < 2; ++n) CHECK(e.bias[j * 2 + n] == c.bias[n]);
}

TEST_CASE("fold_gradients is the exact adjoint of expand") {
    std::mt19937_64 rng(77);
    for (int O : {4, 6, 12}) {
        TiedLayerSpec s = interaction_spec(O, 2, 5);
        CanonicalWeights delta = make_canonical(s);
        randomize(delta, 1000 + O);
        ExpandedWeights g = expand(make_canonical(s), s);  // zero shape
        std::uniform_real_distribution<double> d(-1, 1);
        for (Kernel3& k : g.kernels)
            for (Scalar& v : k.weights) v = static_cast<Scalar>(d(rng));
        for (Scalar& v : g.bias) v = static_cast<Scalar>(d(rng));

        ExpandedWeights ed = expand(delta, s);
        CanonicalWeights fg = fold_gradients(g, s);

        Scalar lhs = 0;
        for (size_t k = 0; k < ed.kernels.size(); ++k)
            lhs += oracle::dot(ed.kernels[k].weights, g.kernels[k].weights);
        lhs += oracle::dot(ed.bias, g.bias);
        const Scalar rhs =
            oracle::dot(delta.slices, fg.slices) + oracle::dot(delta.bias, fg.bias);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    }
}

TEST_CASE("fold of a single expanded copy pulls back through the rotation") {
    TiedLayerSpec s = interaction_spec(4, 1, 5);
    ExpandedWeights g = expand(make_canonical(s), s);  // zero gradients
    std::mt19937_64 rng(88);
    // cotangent only on the copy at output group 0 acting on input group 1
    Kernel3 one = oracle::random_kernel(5, 5, 1, rng);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) g.kernels[0].at(y, x, 1) = one.at(y, x, 0);
    CanonicalWeights fg = fold_gradients(g, s);
    const int cls = relative_orientation_class(1, 0, s);
    // output angle 0: the pullback is the identity; other classes stay zero
    for (int c = 0; c < fg.slots; ++c)
        for (int p = 0; p < 25; ++p)
            CHECK(fg.slice(c, 0, 0)[p] == (c == cls ? one.weights[p] : 0));
}

TEST_CASE("finite differences through expand + convolution") {
    // d loss / d canonical must include every expanded copy's contribution
    TiedLayerSpec s = interaction_spec(4, 1, 3);
    CanonicalWeights c = make_canonical(s);
    randomize(c, 99);
    std::mt19937_64 rng(101);
    Tensor3 in = oracle::random_tensor(8, 8, 4, rng);
    Tensor3 up = oracle::random_tensor(8, 8, 4, rng);

    auto loss = [&] {
        ExpandedWeights e = expand(c, s);
        Tensor3 out = conv3d_bank(in, e.kernels, e.bias);
        return oracle::dot(out.data, up.data);
    };

    ExpandedWeights eg = expand(make_canonical(s), s);
    for (int k = 0; k < 4; ++k)
        eg.kernels[k] = conv3d_grad_weights(extract_channel(up, k), in, 3, 3);
    for (int k = 0; k < 4; ++k)
        eg.bias[k] = conv3d_grad_bias(extract_channel(up, k));
    CanonicalWeights fg = fold_gradients(eg, s);

    const Scalar h = 1e-5;
    std::mt19937_64 rng2(103);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(c.slices.size() - 1));
    for (int rep = 0; rep < 25; ++rep) {
        const int p = pick(rng2);
        const Scalar saved = c.slices[p];
        c.slices[p] = saved + h;
        const Scalar fp = loss();
        c.slices[p] = saved - h;
        const Scalar fm = loss();
        c.slices[p] = saved;
        const Scalar fd = (fp - fm) / (2 * h);
        CHECK(std::abs(fd - fg.slices[p]) /
                  std::max({std::abs(fd), std::abs(fg.slices[p]), Scalar(1e-8)}) <
              1e-6);
    }
}

TEST_CASE("output-projection construction is tie-consistent") {
    NetworkConfig cfg;
    cfg.orientations = 12;
    cfg.speeds = 3;
    cfg.target_speeds = {0.5, 1.5, 3.0};
    cfg.validate();
    CanonicalWeights h4 = init_output_layer(cfg);
    const TiedLayerSpec s = cfg.spec_h4();
    ExpandedWeights e = expand(h4, s);
    std::string why;
    CHECK_MESSAGE(check_tie_constraints(e, h4, s, &why), why);
    // expanded weights reproduce the target table exactly
    for (int o = 0; o < 12; ++o)
        for (int t = 0; t < 3; ++t) {
            const auto [tu, tv] = cfg.classification_target(t, o);
            const int k = cfg.target_index(t, o);
            CHECK(e.kernels[0].at(0, 0, k) == doctest::Approx(tu).epsilon(1e-12));
            CHECK(e.kernels[1].at(0, 0, k) == doctest::Approx(tv).epsilon(1e-12));
        }
}
