#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "motionflow/tensor.hpp"
#include "oracles.hpp"

using namespace motionflow;

TEST_CASE("conv2d identity kernel") {
    std::mt19937_64 rng(7);
    Tensor3 plane = oracle::random_tensor(9, 12, 1, rng);
    Kernel3 one(1, 1, 1);
    one.at(0, 0, 0) = 1;
    Tensor3 out = conv2d(plane, one);
    CHECK(oracle::max_abs_diff(out, plane) == 0);
}

TEST_CASE("conv2d constant preservation under a unit-sum kernel") {
    // dyadic weights keep the rounding at a few ulps
    Kernel3 k(3, 3, 1);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) k.at(y, x, 0) = 0.0625;
    k.at(1, 1, 0) = 0.5;
    Tensor3 plane(6, 7, 1);
    plane.fill(3.7);
    Tensor3 out = conv2d(plane, k);
    for (Scalar v : out.data) CHECK(v == doctest::Approx(3.7).epsilon(1e-14));
}

TEST_CASE("conv2d matches the nested-loop oracle") {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor3 in = oracle::random_tensor(7, 7, 1, rng);
        Kernel3 k = oracle::random_kernel(3, 3, 1, rng);
        CHECK(oracle::max_abs_diff(conv2d(in, k), oracle::conv2d_ref(in, k)) <
              1e-12);
    }
}

TEST_CASE("conv3d delta kernel copies the tapped channel") {
    std::mt19937_64 rng(3);
    Tensor3 in = oracle::random_tensor(8, 8, 3, rng);
    Kernel3 k(3, 3, 3);
    k.at(1, 1, 0) = 1;  // tap channel 0 at the spatial center
    Tensor3 out = conv3d(in, k, 0);
    CHECK(oracle::max_abs_diff(out, extract_channel(in, 0)) == 0);
}

TEST_CASE("conv3d zero input returns the bias") {
    Tensor3 in(5, 5, 2);
    Kernel3 k(3, 3, 2);
    Tensor3 out = conv3d(in, k, 0.25);
    for (Scalar v : out.data) CHECK(v == 0.25);
}

TEST_CASE("conv3d matches the nested-loop oracle") {
    std::mt19937_64 rng(13);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor3 in = oracle::random_tensor(9, 9, 3, rng);
        Kernel3 k = oracle::random_kernel(5, 5, 3, rng);
        CHECK(oracle::max_abs_diff(conv3d(in, k, 0.3),
                                   oracle::conv3d_ref(in, k, 0.3)) < 1e-12);
    }
}

TEST_CASE("conv3d rejects depth mismatch") {
    Tensor3 in(5, 5, 2);
    Kernel3 k(3, 3, 3);
    CHECK_THROWS_AS(conv3d(in, k, 0), std::invalid_argument);
}

TEST_CASE("maxpool constant plane halves the resolution") {
    Tensor3 in(9, 6, 2);
    in.fill(1.25);
    auto [out, rec] = maxpool(in, 3);
    CHECK(out.height == 5);
    CHECK(out.width == 3);
    for (Scalar v : out.data) CHECK(v == 1.25);
}

TEST_CASE("maxpool window 1 subsamples even coordinates") {
    std::mt19937_64 rng(5);
    Tensor3 in = oracle::random_tensor(8, 8, 1, rng);
    auto [out, rec] = maxpool(in, 1);
    for (int i = 0; i < out.height; ++i)
        for (int j = 0; j < out.width; ++j)
            CHECK(out.at(i, j, 0) == in.at(2 * i, 2 * j, 0));
}

TEST_CASE("maxpool matches the brute-force scan") {
    std::mt19937_64 rng(17);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor3 in = oracle::random_tensor(8, 8, 2, rng);
        for (int window : {1, 2, 3}) {
            auto [out, rec] = maxpool(in, window);
            CHECK(oracle::max_abs_diff(out, oracle::maxpool_ref(in, window)) == 0);
        }
    }
}

TEST_CASE("resize to the same size is exact identity") {
    std::mt19937_64 rng(19);
    Tensor3 in = oracle::random_tensor(7, 11, 3, rng);
    CHECK(oracle::max_abs_diff(resize_bilinear(in, 7, 11), in) == 0);
}

TEST_CASE("resize preserves constants") {
    Tensor3 in(4, 4, 1);
    in.fill(0.6);
    Tensor3 out = resize_bilinear(in, 9, 5);
    for (Scalar v : out.data) CHECK(v == doctest::Approx(0.6).epsilon(1e-14));
}

TEST_CASE("2x2 upsampled to 3x3 has the bilinear center value") {
    Tensor3 in(2, 2, 1);
    in.at(0, 0, 0) = 0;
    in.at(0, 1, 0) = 1;
    in.at(1, 0, 0) = 2;
    in.at(1, 1, 0) = 3;
    Tensor3 out = resize_bilinear(in, 3, 3);
    CHECK(out.at(1, 1, 0) == doctest::Approx(1.5));
    CHECK(out.at(0, 0, 0) == 0);
    CHECK(out.at(2, 2, 0) == 3);
}

TEST_CASE("resize matches the reference on random shapes") {
    std::mt19937_64 rng(23);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor3 in = oracle::random_tensor(5 + rep % 4, 6 + rep % 3, 2, rng);
        CHECK(oracle::max_abs_diff(resize_bilinear(in, 9, 7),
                                   oracle::resize_ref(in, 9, 7)) < 1e-12);
    }
}

TEST_CASE("rotation by zero is identity") {
    std::mt19937_64 rng(29);
    Kernel3 k = oracle::random_kernel(5, 5, 2, rng);
    Kernel3 r = rotate_bilinear(k, 0);
    CHECK(oracle::max_abs_diff(r.weights, k.weights) == 0);
}

TEST_CASE("quarter-turn rotation is the exact index permutation") {
    std::mt19937_64 rng(31);
    Kernel3 k = oracle::random_kernel(5, 5, 1, rng);
    Kernel3 r = rotate_bilinear(k, M_PI / 2);
    // rotating by +90 deg maps the +x axis onto +y: r(y, x) = k(-x', y') around
    // the center
    const int c = 2;
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x)
            CHECK(r.at(y, x, 0) == k.at(c - (x - c), c + (y - c), 0));
}

TEST_CASE("two half-turn rotations restore the kernel") {
    std::mt19937_64 rng(37);
    Kernel3 k = oracle::random_kernel(7, 7, 3, rng);
    Kernel3 r = rotate_bilinear(rotate_bilinear(k, M_PI), M_PI);
    CHECK(oracle::max_abs_diff(r.weights, k.weights) < 1e-12);
}

TEST_CASE("rotation adjoint satisfies the inner-product identity") {
    std::mt19937_64 rng(41);
    for (Scalar angle : {0.3, 1.1, 2.0, -0.7}) {
        Kernel3 x = oracle::random_kernel(7, 7, 2, rng);
        Kernel3 g = oracle::random_kernel(7, 7, 2, rng);
        Kernel3 fx = rotate_bilinear(x, angle);
        Kernel3 ag = rotate_bilinear_adjoint(g, angle);
        CHECK(oracle::dot(fx.weights, g.weights) ==
              doctest::Approx(oracle::dot(x.weights, ag.weights)).epsilon(1e-12));
    }
}

TEST_CASE("warp with zero flow is identity") {
    std::mt19937_64 rng(43);
    Tensor3 frame = oracle::random_tensor(8, 9, 1, rng);
    Tensor3 flow(8, 9, 2);
    CHECK(oracle::max_abs_diff(warp_bilinear(frame, flow, 1), frame) == 0);
}

TEST_CASE("integer-translation warp shifts interior columns") {
    std::mt19937_64 rng(47);
    Tensor3 frame = oracle::random_tensor(6, 8, 1, rng);
    Tensor3 flow(6, 8, 2);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 8; ++j) flow.at(i, j, 0) = 1;  // u = 1
    Tensor3 out = warp_bilinear(frame, flow, 1);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 7; ++j) CHECK(out.at(i, j, 0) == frame.at(i, j + 1, 0));
}

TEST_CASE("warp matches the per-pixel oracle on subpixel flow") {
    std::mt19937_64 rng(53);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor3 frame = oracle::random_tensor(7, 7, 1, rng);
        Tensor3 flow = oracle::random_tensor(7, 7, 2, rng, -2.5, 2.5);
        CHECK(oracle::max_abs_diff(warp_bilinear(frame, flow, 0.7),
                                   oracle::warp_ref(frame, flow, 0.7)) < 1e-12);
    }
}

// ---- adjoint consistency through central finite differences ----

namespace {

// relative error between <grad, delta> and the central difference of f
template <typename Forward>
void check_directional(const Forward& f, std::vector<Scalar>& x,
                       const std::vector<Scalar>& grad_x,
                       const std::vector<Scalar>& delta, Scalar tol = 1e-6) {
    const Scalar h = 1e-5;
    std::vector<Scalar> saved = x;
    for (size_t i = 0; i < x.size(); ++i) x[i] = saved[i] + h * delta[i];
    const Scalar fp = f();
    for (size_t i = 0; i < x.size(); ++i) x[i] = saved[i] - h * delta[i];
    const Scalar fm = f();
    x = saved;
    const Scalar fd = (fp - fm) / (2 * h);
    const Scalar an = oracle::dot(grad_x, delta);
    CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), Scalar(1e-8)}) <
          tol);
}

std::vector<Scalar> unit_direction(size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0, 1);
    std::vector<Scalar> v(n);
    Scalar norm = 0;
    for (Scalar& x : v) {
        x = static_cast<Scalar>(d(rng));
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (Scalar& x : v) x /= norm;
    return v;
}

}  // namespace

TEST_CASE("conv3d adjoints match finite differences") {
    std::mt19937_64 rng(59);
    Tensor3 in = oracle::random_tensor(7, 7, 3, rng);
    Kernel3 k = oracle::random_kernel(3, 3, 3, rng);
    Tensor3 up = oracle::random_tensor(7, 7, 1, rng);
    const Scalar bias = 0.2;

    // loss = <up, conv3d(in, k, bias)>
    auto loss = [&] {
        Tensor3 out = conv3d(in, k, bias);
        return oracle::dot(out.data, up.data);
    };

    Tensor3 gin(7, 7, 3);
    conv3d_grad_input(up, k, gin);
    check_directional(loss, in.data, gin.data, unit_direction(in.size(), rng));

    Kernel3 gk = conv3d_grad_weights(up, in, 3, 3);
    check_directional(loss, k.weights, gk.weights,
                      unit_direction(k.weights.size(), rng));
}

TEST_CASE("conv2d adjoints match finite differences") {
    std::mt19937_64 rng(61);
    Tensor3 in = oracle::random_tensor(8, 6, 1, rng);
    Kernel3 k = oracle::random_kernel(3, 5, 1, rng);
    Tensor3 up = oracle::random_tensor(8, 6, 1, rng);
    auto loss = [&] { return oracle::dot(conv2d(in, k).data, up.data); };

    Tensor3 gin = conv2d_grad_input(up, k, 8, 6);
    check_directional(loss, in.data, gin.data, unit_direction(in.size(), rng));
    Kernel3 gk = conv2d_grad_kernel(up, in, 3, 5);
    check_directional(loss, k.weights, gk.weights,
                      unit_direction(k.weights.size(), rng));
}

TEST_CASE("maxpool gradient routes to the winning positions") {
    std::mt19937_64 rng(67);
    Tensor3 in = oracle::random_tensor(8, 8, 2, rng);
    auto [out, rec] = maxpool(in, 3);
    Tensor3 up = oracle::random_tensor(out.height, out.width, 2, rng);
    auto loss = [&] {
        auto [o, r] = maxpool(in, 3);
        return oracle::dot(o.data, up.data);
    };
    Tensor3 gin = maxpool_grad(up, rec);
    check_directional(loss, in.data, gin.data, unit_direction(in.size(), rng),
                      1e-5);
}

TEST_CASE("resize gradient matches finite differences") {
    std::mt19937_64 rng(71);
    Tensor3 in = oracle::random_tensor(5, 6, 2, rng);
    Tensor3 up = oracle::random_tensor(9, 8, 2, rng);
    auto loss = [&] { return oracle::dot(resize_bilinear(in, 9, 8).data, up.data); };
    Tensor3 gin = resize_bilinear_grad(up, 5, 6);
    check_directional(loss, in.data, gin.data, unit_direction(in.size(), rng));
}

TEST_CASE("zero upstream gives zero parameter gradients") {
    std::mt19937_64 rng(73);
    Tensor3 in = oracle::random_tensor(6, 6, 2, rng);
    Tensor3 up(6, 6, 1);
    Kernel3 gk = conv3d_grad_weights(up, in, 3, 3);
    for (Scalar v : gk.weights) CHECK(v == 0);
    CHECK(conv3d_grad_bias(up) == 0);
}
