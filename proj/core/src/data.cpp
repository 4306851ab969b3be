#include "motionflow/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <stdexcept>

#include "motionflow/flow_io.hpp"
#include "motionflow/image_io.hpp"

namespace fs = std::filesystem;

namespace motionflow {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string frame_name(int index, const std::string& ext) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame%02d.%s", index, ext.c_str());
    return buf;
}

}  // namespace

std::vector<SequenceRecord> scan_middlebury(const std::string& root, int frames) {
    require(frames >= 2, "scan_middlebury: need at least two frames");
    if (!fs::is_directory(root)) fail("dataset root not found: " + root);

    // Annotated pair at 1-based stack positions ceil(F/2), ceil(F/2)+1 means
    // the stack starts at frame index 10 - (ceil(F/2) - 1).
    const int start = 10 - ((frames + 1) / 2 - 1);

    std::vector<SequenceRecord> records;
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());

    for (const fs::path& dir : dirs) {
        const fs::path flo = dir / "flow10.flo";
        if (!fs::exists(flo)) continue;
        SequenceRecord rec;
        rec.name = dir.filename().string();
        rec.flow_path = flo.string();
        for (int k = 0; k < frames; ++k) {
            const int idx = start + k;
            fs::path png = dir / frame_name(idx, "png");
            fs::path pgm = dir / frame_name(idx, "pgm");
            if (fs::exists(png))
                rec.frame_paths.push_back(png.string());
            else if (fs::exists(pgm))
                rec.frame_paths.push_back(pgm.string());
            else
                fail("sequence " + rec.name + ": missing frame " +
                     frame_name(idx, "png"));
        }
        const auto& tr = middlebury_train_half();
        const auto& te = middlebury_test_half();
        if (std::find(tr.begin(), tr.end(), rec.name) != tr.end())
            rec.split = "train";
        else if (std::find(te.begin(), te.end(), rec.name) != te.end())
            rec.split = "test";
        records.push_back(std::move(rec));
    }
    return records;
}

TrainingSample load_sequence(const SequenceRecord& rec) {
    TrainingSample s;
    s.name = rec.name;
    for (const std::string& p : rec.frame_paths)
        s.frames.push_back(to_grayscale(read_image(p)));
    for (size_t k = 1; k < s.frames.size(); ++k)
        require(s.frames[k].height == s.frames[0].height &&
                    s.frames[k].width == s.frames[0].width,
                "sequence " + rec.name + ": frame dimensions differ");
    FlowWithMask fm = read_flo(rec.flow_path);
    require(fm.flow.height == s.frames[0].height &&
                fm.flow.width == s.frames[0].width,
            "sequence " + rec.name + ": flow dimensions differ from frames");
    s.ground_truth = std::move(fm.flow);
    s.mask = std::move(fm.mask);
    return s;
}

std::vector<TrainingSample> load_middlebury(const std::string& root, int frames) {
    std::vector<TrainingSample> out;
    for (const SequenceRecord& rec : scan_middlebury(root, frames))
        out.push_back(load_sequence(rec));
    return out;
}

// ---------------------------------------------------------------------------
// synthetic sequences
// ---------------------------------------------------------------------------

namespace {

// Oversized noise canvas, Gaussian-smoothed (sigma 2) for broadband spatial
// structure, stretched to [0, 1].
Tensor3 noise_canvas(int size, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Tensor3 t(size, size, 1);
    for (Scalar& v : t.data) v = static_cast<Scalar>(uni(rng));

    const Scalar sigma = 2;
    const int r = static_cast<int>(std::ceil(3 * sigma));
    std::vector<Scalar> g(2 * r + 1);
    Scalar sum = 0;
    for (int i = -r; i <= r; ++i) {
        g[i + r] = std::exp(-Scalar(i * i) / (2 * sigma * sigma));
        sum += g[i + r];
    }
    for (Scalar& v : g) v /= sum;

    auto pass = [&](const Tensor3& x, bool rows) {
        Tensor3 out(size, size, 1);
        for (int i = 0; i < size; ++i)
            for (int j = 0; j < size; ++j) {
                Scalar acc = 0;
                for (int d = -r; d <= r; ++d) {
                    const int ii = rows ? i : clamp_index(i + d, size);
                    const int jj = rows ? clamp_index(j + d, size) : j;
                    acc += g[d + r] * x.at(ii, jj, 0);
                }
                out.at(i, j, 0) = acc;
            }
        return out;
    };
    Tensor3 smooth = pass(pass(t, true), false);
    const auto [lo, hi] = std::minmax_element(smooth.data.begin(), smooth.data.end());
    const Scalar span = std::max(Scalar(1e-12), *hi - *lo);
    for (Scalar& v : smooth.data) v = (v - *lo) / span;
    return smooth;
}

Scalar sample_canvas(const Tensor3& c, Scalar y, Scalar x) {
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const Scalar fy = y - y0, fx = x - x0;
    const int y1 = std::min(y0 + 1, c.height - 1);
    const int x1 = std::min(x0 + 1, c.width - 1);
    return (1 - fy) * ((1 - fx) * c.at(y0, x0, 0) + fx * c.at(y0, x1, 0)) +
           fy * ((1 - fx) * c.at(y1, x0, 0) + fx * c.at(y1, x1, 0));
}

}  // namespace

TrainingSample synth_sequence(const SyntheticSpec& spec) {
    require(spec.size >= 4 && spec.frame_count >= 2, "synth_sequence: bad spec");
    require(!spec.layers.empty(), "synth_sequence: no layers");
    Scalar alpha_sum = 0;
    Scalar max_shift = 0;
    const int ref = (spec.frame_count + 1) / 2 - 1;
    for (const SyntheticLayer& l : spec.layers) {
        alpha_sum += l.alpha;
        for (int k = 0; k < spec.frame_count; ++k) {
            const Scalar d = std::abs(static_cast<Scalar>(k - ref));
            max_shift = std::max(
                {max_shift, d * std::abs(l.motion_u), d * std::abs(l.motion_v)});
        }
    }
    require(std::abs(alpha_sum - 1) < 1e-9, "synth_sequence: alphas must sum to 1");

    const int pad = static_cast<int>(std::ceil(max_shift)) + 2;
    std::mt19937_64 rng(spec.seed);

    TrainingSample s;
    s.name = "synthetic";
    for (int k = 0; k < spec.frame_count; ++k)
        s.frames.emplace_back(spec.size, spec.size, 1);

    for (const SyntheticLayer& l : spec.layers) {
        s.layer_motions.emplace_back(l.motion_u, l.motion_v);
        if (l.texture == SyntheticLayer::Texture::SmoothedNoise) {
            const Tensor3 canvas = noise_canvas(spec.size + 2 * pad, rng);
            for (int k = 0; k < spec.frame_count; ++k) {
                const Scalar t = static_cast<Scalar>(k - ref);
                for (int i = 0; i < spec.size; ++i)
                    for (int j = 0; j < spec.size; ++j)
                        s.frames[k].at(i, j, 0) +=
                            l.alpha * sample_canvas(canvas,
                                                    i + pad - t * l.motion_v,
                                                    j + pad - t * l.motion_u);
            }
        } else {
            // Evaluated analytically: exact at every subpixel position.
            const Scalar cx = std::cos(l.orientation), sx = std::sin(l.orientation);
            for (int k = 0; k < spec.frame_count; ++k) {
                const Scalar t = static_cast<Scalar>(k - ref);
                for (int i = 0; i < spec.size; ++i)
                    for (int j = 0; j < spec.size; ++j) {
                        const Scalar x = j - t * l.motion_u;
                        const Scalar y = i - t * l.motion_v;
                        const Scalar ph =
                            2 * M_PI * (x * cx + y * sx) / l.wavelength + l.phase;
                        s.frames[k].at(i, j, 0) +=
                            l.alpha * (Scalar(0.5) + l.amplitude * std::sin(ph));
                    }
            }
        }
    }

    s.ground_truth = Tensor3(spec.size, spec.size, 2);
    for (int i = 0; i < spec.size; ++i)
        for (int j = 0; j < spec.size; ++j) {
            s.ground_truth.at(i, j, 0) = spec.layers[0].motion_u;
            s.ground_truth.at(i, j, 1) = spec.layers[0].motion_v;
        }
    s.mask = Tensor3(spec.size, spec.size, 1);
    s.mask.fill(1);
    return s;
}

std::vector<TrainingSample> synth_translation_dataset(int count, int size,
                                                      int frame_count,
                                                      int orientation_count,
                                                      Scalar min_speed,
                                                      Scalar max_speed,
                                                      uint64_t seed) {
    require(count >= 1 && orientation_count >= 1, "synth dataset: bad sizes");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<TrainingSample> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        const Scalar theta =
            2 * M_PI * (i % orientation_count) / orientation_count;
        const Scalar speed =
            min_speed + (max_speed - min_speed) * static_cast<Scalar>(uni(rng));
        SyntheticSpec spec;
        spec.size = size;
        spec.frame_count = frame_count;
        spec.seed = seed ^ (0x9e3779b97f4a7c15ULL * (i + 1));
        SyntheticLayer layer;
        layer.texture = SyntheticLayer::Texture::SmoothedNoise;
        layer.motion_u = speed * std::cos(theta);
        layer.motion_v = speed * std::sin(theta);
        spec.layers.push_back(layer);
        out.push_back(synth_sequence(spec));
        out.back().name = "synthetic-" + std::to_string(i);
    }
    return out;
}

}  // namespace motionflow
