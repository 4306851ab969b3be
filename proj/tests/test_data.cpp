#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "motionflow/data.hpp"
#include "motionflow/flow_io.hpp"
#include "motionflow/image_io.hpp"
#include "oracles.hpp"

using namespace motionflow;
namespace fs = std::filesystem;

TEST_CASE("zero-motion synthetic sequence has identical frames and zero truth") {
    SyntheticSpec spec;
    spec.size = 16;
    spec.frame_count = 3;
    spec.seed = 5;
    spec.layers.push_back({});
    TrainingSample s = synth_sequence(spec);
    CHECK(s.frames.size() == 3);
    CHECK(oracle::max_abs_diff(s.frames[0], s.frames[1]) == 0);
    CHECK(oracle::max_abs_diff(s.frames[1], s.frames[2]) == 0);
    for (Scalar v : s.ground_truth.data) CHECK(v == 0);
    for (Scalar v : s.mask.data) CHECK(v == 1);
}

TEST_CASE("integer translation shifts frames exactly") {
    SyntheticSpec spec;
    spec.size = 20;
    spec.frame_count = 3;
    spec.seed = 6;
    SyntheticLayer l;
    l.motion_u = 1;
    l.motion_v = 0;
    spec.layers.push_back(l);
    TrainingSample s = synth_sequence(spec);
    for (int k = 0; k + 1 < 3; ++k)
        for (int i = 0; i < 20; ++i)
            for (int j = 1; j < 20; ++j)
                CHECK(s.frames[k + 1].at(i, j, 0) == s.frames[k].at(i, j - 1, 0));
    CHECK(s.ground_truth.at(4, 4, 0) == 1);
    CHECK(s.ground_truth.at(4, 4, 1) == 0);
}

TEST_CASE("same seed reproduces the sequence exactly") {
    SyntheticSpec spec;
    spec.size = 24;
    spec.frame_count = 3;
    spec.seed = 77;
    SyntheticLayer l;
    l.motion_u = 0.7;
    l.motion_v = -1.3;
    spec.layers.push_back(l);
    TrainingSample a = synth_sequence(spec);
    TrainingSample b = synth_sequence(spec);
    for (int k = 0; k < 3; ++k)
        CHECK(oracle::max_abs_diff(a.frames[k], b.frames[k]) == 0);
}

TEST_CASE("two opposite layers keep both motions in the record") {
    SyntheticSpec spec;
    spec.size = 24;
    spec.frame_count = 3;
    spec.seed = 8;
    SyntheticLayer a, b;
    a.motion_u = 2;
    a.alpha = 0.5;
    b.motion_u = -2;
    b.alpha = 0.5;
    spec.layers = {a, b};
    TrainingSample s = synth_sequence(spec);
    REQUIRE(s.layer_motions.size() == 2);
    CHECK(s.layer_motions[0].first == 2);
    CHECK(s.layer_motions[1].first == -2);
    CHECK(s.ground_truth.at(0, 0, 0) == 2);  // dominant layer

    SyntheticLayer bad = a;
    spec.layers = {a, b, bad};  // alphas no longer sum to 1
    CHECK_THROWS(synth_sequence(spec));
}

TEST_CASE("drifting sinusoid layers are exact") {
    SyntheticSpec spec;
    spec.size = 16;
    spec.frame_count = 2;
    spec.seed = 9;
    SyntheticLayer l;
    l.texture = SyntheticLayer::Texture::Sinusoid;
    l.wavelength = 4;
    l.motion_u = 1;  // one quarter wavelength per frame
    spec.layers.push_back(l);
    TrainingSample s = synth_sequence(spec);
    // frame 1 equals frame 0 shifted by 1 px in x (analytic evaluation)
    for (int i = 0; i < 16; ++i)
        for (int j = 1; j < 16; ++j)
            CHECK(s.frames[1].at(i, j, 0) ==
                  doctest::Approx(s.frames[0].at(i, j - 1, 0)).epsilon(1e-12));
}

TEST_CASE("dataset layout loader") {
    const fs::path root = fs::temp_directory_path() / "motionflow_data_test";
    fs::remove_all(root);
    fs::create_directories(root / "TestSeq");

    // three frames and one ground-truth flow in the standard naming
    std::mt19937_64 rng(10);
    for (int idx = 9; idx <= 11; ++idx) {
        Image8 img(12, 14, 1);
        for (auto& v : img.data) v = static_cast<uint8_t>(rng() % 256);
        char name[32];
        std::snprintf(name, sizeof(name), "frame%02d.png", idx);
        write_png((root / "TestSeq" / name).string(), img);
    }
    Tensor3 gt(12, 14, 2);
    Tensor3 mask(12, 14, 1);
    mask.fill(1);
    mask.at(3, 3, 0) = 0;
    std::uniform_real_distribution<double> d(-4, 4);
    for (Scalar& v : gt.data) v = static_cast<float>(d(rng));
    write_flo((root / "TestSeq" / "flow10.flo").string(), gt, mask);

    SUBCASE("frames load, sentinel pixels are masked out") {
        auto samples = load_middlebury(root.string(), 3);
        REQUIRE(samples.size() == 1);
        const TrainingSample& s = samples[0];
        CHECK(s.name == "TestSeq");
        CHECK(s.frames.size() == 3);
        CHECK(s.frames[0].height == 12);
        CHECK(s.mask.at(3, 3, 0) == 0);
        CHECK(s.mask.at(0, 0, 0) == 1);
        for (Scalar v : s.frames[1].data) {
            CHECK(v >= 0);
            CHECK(v <= 1);
        }
    }
    SUBCASE("ground truth re-saved through the writer is bit-identical") {
        auto samples = load_middlebury(root.string(), 3);
        const std::string out = (root / "resaved.flo").string();
        write_flo(out, samples[0].ground_truth, samples[0].mask);
        std::ifstream a((root / "TestSeq" / "flow10.flo").string(),
                        std::ios::binary);
        std::ifstream b(out, std::ios::binary);
        std::vector<char> ba((std::istreambuf_iterator<char>(a)),
                             std::istreambuf_iterator<char>());
        std::vector<char> bb((std::istreambuf_iterator<char>(b)),
                             std::istreambuf_iterator<char>());
        CHECK(ba == bb);
    }
    SUBCASE("a five-frame stack needs frames 08..12: error") {
        CHECK_THROWS(load_middlebury(root.string(), 5));
    }
    SUBCASE("missing root is an error") {
        CHECK_THROWS(load_middlebury((root / "nope").string(), 3));
    }
    fs::remove_all(root);
}

TEST_CASE("PGM round trip") {
    Image8 img(5, 7, 1);
    for (size_t p = 0; p < img.data.size(); ++p)
        img.data[p] = static_cast<uint8_t>(p * 7 % 256);
    const std::string path =
        (fs::temp_directory_path() / "motionflow_test.pgm").string();
    write_pgm(path, img);
    Image8 back = read_image(path);
    CHECK(back.height == 5);
    CHECK(back.width == 7);
    CHECK(back.data == img.data);
    fs::remove(path);
}

TEST_CASE("grayscale conversion uses the standard luma weights") {
    Image8 img(1, 2, 3);
    img.at(0, 0, 0) = 255;  // pure red
    img.at(0, 1, 2) = 255;  // pure blue
    Tensor3 g = to_grayscale(img);
    CHECK(g.at(0, 0, 0) == doctest::Approx(0.299).epsilon(1e-12));
    CHECK(g.at(0, 1, 0) == doctest::Approx(0.114).epsilon(1e-12));
}

TEST_CASE("translation dataset is seeded and bounded") {
    auto a = synth_translation_dataset(6, 16, 3, 12, 0.0, 3.0, 42);
    auto b = synth_translation_dataset(6, 16, 3, 12, 0.0, 3.0, 42);
    REQUIRE(a.size() == 6);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(oracle::max_abs_diff(a[i].frames[0], b[i].frames[0]) == 0);
        const Scalar u = a[i].ground_truth.at(0, 0, 0);
        const Scalar v = a[i].ground_truth.at(0, 0, 1);
        CHECK(std::sqrt(u * u + v * v) <= 3.0 + 1e-12);
    }
}
