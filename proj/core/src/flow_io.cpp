#include "motionflow/flow_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace motionflow {

static_assert(std::endian::native == std::endian::little,
              "flow and checkpoint containers assume a little-endian host");

namespace {

constexpr float kFloMagic = 202021.25f;  // stores as "PIEH"

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

template <typename T>
T read_raw(const std::vector<uint8_t>& bytes, size_t& pos) {
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

template <typename T>
void append_raw(std::vector<uint8_t>& bytes, T v) {
    const size_t pos = bytes.size();
    bytes.resize(pos + sizeof(T));
    std::memcpy(bytes.data() + pos, &v, sizeof(T));
}

}  // namespace

FlowWithMask read_flo(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 12) fail("flo: truncated header");
    size_t pos = 0;
    const float magic = read_raw<float>(bytes, pos);
    if (magic != kFloMagic) fail("flo: bad magic tag");
    const int32_t w = read_raw<int32_t>(bytes, pos);
    const int32_t h = read_raw<int32_t>(bytes, pos);
    if (w <= 0 || h <= 0) fail("flo: bad dimensions");
    const size_t expect = 12 + static_cast<size_t>(w) * h * 2 * sizeof(float);
    if (bytes.size() < expect) fail("flo: truncated payload");

    FlowWithMask out;
    out.flow = Tensor3(h, w, 2);
    out.mask = Tensor3(h, w, 1);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const float u = read_raw<float>(bytes, pos);
            const float v = read_raw<float>(bytes, pos);
            const bool known = std::abs(u) < kUnknownFlowThreshold &&
                               std::abs(v) < kUnknownFlowThreshold &&
                               std::isfinite(u) && std::isfinite(v);
            out.flow.at(i, j, 0) = known ? static_cast<Scalar>(u) : 0;
            out.flow.at(i, j, 1) = known ? static_cast<Scalar>(v) : 0;
            out.mask.at(i, j, 0) = known ? 1 : 0;
        }
    return out;
}

FlowWithMask read_flo(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return read_flo(bytes);
}

std::vector<uint8_t> write_flo(const Tensor3& flow, const Tensor3& mask) {
    require(flow.channels == 2, "write_flo: flow must have 2 channels");
    require(mask.height == flow.height && mask.width == flow.width,
            "write_flo: mask dimensions must match");
    std::vector<uint8_t> bytes;
    bytes.reserve(12 + flow.size() * sizeof(float));
    append_raw(bytes, kFloMagic);
    append_raw(bytes, static_cast<int32_t>(flow.width));
    append_raw(bytes, static_cast<int32_t>(flow.height));
    constexpr float kSentinel = 1.6666e9f;  // conventional unknown marker
    for (int i = 0; i < flow.height; ++i)
        for (int j = 0; j < flow.width; ++j) {
            const bool known = mask.at(i, j, 0) > 0.5;
            append_raw(bytes, known ? static_cast<float>(flow.at(i, j, 0))
                                    : kSentinel);
            append_raw(bytes, known ? static_cast<float>(flow.at(i, j, 1))
                                    : kSentinel);
        }
    return bytes;
}

void write_flo(const std::string& path, const Tensor3& flow, const Tensor3& mask) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("cannot write " + path);
    const std::vector<uint8_t> bytes = write_flo(flow, mask);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

MetricReport flow_metrics(const Tensor3& flow, const Tensor3& gt,
                          const Tensor3& mask) {
    require(flow.same_shape(gt), "flow_metrics: flow/gt shape mismatch");
    require(mask.height == flow.height && mask.width == flow.width,
            "flow_metrics: mask shape mismatch");
    MetricReport r;
    Scalar epe_sum = 0, aae_sum = 0;
    for (int i = 0; i < flow.height; ++i)
        for (int j = 0; j < flow.width; ++j) {
            if (mask.at(i, j, 0) <= 0.5) continue;
            const Scalar u = flow.at(i, j, 0), v = flow.at(i, j, 1);
            const Scalar gu = gt.at(i, j, 0), gv = gt.at(i, j, 1);
            const Scalar du = u - gu, dv = v - gv;
            epe_sum += std::sqrt(du * du + dv * dv);
            // Middlebury convention: angle between homogeneous (u, v, 1).
            const Scalar dot = u * gu + v * gv + 1;
            const Scalar na = std::sqrt(u * u + v * v + 1);
            const Scalar nb = std::sqrt(gu * gu + gv * gv + 1);
            const Scalar c = std::min(Scalar(1), std::max(Scalar(-1), dot / (na * nb)));
            aae_sum += std::acos(c);
            ++r.pixels;
        }
    require(r.pixels > 0, "flow_metrics: no valid pixels");
    r.epe = epe_sum / static_cast<Scalar>(r.pixels);
    r.aae = aae_sum / static_cast<Scalar>(r.pixels) * 180 / M_PI;
    return r;
}

Scalar epe(const Tensor3& flow, const Tensor3& gt, const Tensor3& mask) {
    return flow_metrics(flow, gt, mask).epe;
}

Scalar aae(const Tensor3& flow, const Tensor3& gt, const Tensor3& mask) {
    return flow_metrics(flow, gt, mask).aae;
}

// ---------------------------------------------------------------------------
// color wheel
// ---------------------------------------------------------------------------

namespace {

// The 55-entry wheel with smooth transitions between the six anchors.
std::vector<std::array<Scalar, 3>> make_color_wheel() {
    const int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
    std::vector<std::array<Scalar, 3>> wheel;
    wheel.reserve(RY + YG + GC + CB + BM + MR);
    // R->Y: red full, green rising
    for (int i = 0; i < RY; ++i)
        wheel.push_back({1, static_cast<Scalar>(i) / RY, 0});
    // Y->G: red falling
    for (int i = 0; i < YG; ++i)
        wheel.push_back({1 - static_cast<Scalar>(i) / YG, 1, 0});
    // G->C: blue rising
    for (int i = 0; i < GC; ++i)
        wheel.push_back({0, 1, static_cast<Scalar>(i) / GC});
    // C->B: green falling
    for (int i = 0; i < CB; ++i)
        wheel.push_back({0, 1 - static_cast<Scalar>(i) / CB, 1});
    // B->M: red rising
    for (int i = 0; i < BM; ++i)
        wheel.push_back({static_cast<Scalar>(i) / BM, 0, 1});
    // M->R: blue falling
    for (int i = 0; i < MR; ++i)
        wheel.push_back({1, 0, 1 - static_cast<Scalar>(i) / MR});
    return wheel;
}

Scalar percentile_magnitude(const Tensor3& flow, Scalar q) {
    std::vector<Scalar> mags;
    mags.reserve(static_cast<size_t>(flow.height) * flow.width);
    for (int i = 0; i < flow.height; ++i)
        for (int j = 0; j < flow.width; ++j) {
            const Scalar u = flow.at(i, j, 0), v = flow.at(i, j, 1);
            mags.push_back(std::sqrt(u * u + v * v));
        }
    std::sort(mags.begin(), mags.end());
    const size_t idx = static_cast<size_t>(q * (mags.size() - 1));
    return mags[idx];
}

}  // namespace

Image8 flow_to_color(const Tensor3& flow, Scalar max_magnitude) {
    require(flow.channels == 2, "flow_to_color: flow must have 2 channels");
    static const std::vector<std::array<Scalar, 3>> wheel = make_color_wheel();
    const int n = static_cast<int>(wheel.size());
    Scalar maxmag = max_magnitude;
    if (maxmag <= 0) maxmag = std::max(percentile_magnitude(flow, 0.99), Scalar(1e-9));

    Image8 img(flow.height, flow.width, 3);
    for (int i = 0; i < flow.height; ++i)
        for (int j = 0; j < flow.width; ++j) {
            const Scalar u = flow.at(i, j, 0), v = flow.at(i, j, 1);
            const Scalar rad = std::min(Scalar(1), std::sqrt(u * u + v * v) / maxmag);
            const Scalar a = std::atan2(-v, -u) / M_PI;  // [-1, 1]
            const Scalar fk = (a + 1) / 2 * (n - 1);
            const int k0 = static_cast<int>(fk) % n;
            const int k1 = (k0 + 1) % n;
            const Scalar f = fk - std::floor(fk);
            for (int c = 0; c < 3; ++c) {
                Scalar col = (1 - f) * wheel[k0][c] + f * wheel[k1][c];
                col = 1 - rad * (1 - col);  // saturation toward white at zero
                img.at(i, j, c) = static_cast<uint8_t>(std::lround(255 * col));
            }
        }
    return img;
}

// ---------------------------------------------------------------------------
// radial-bin visualization
// ---------------------------------------------------------------------------

Image8 distribution_to_radial_plot(const Tensor3& dist, int i, int j, int speeds,
                                   int orientations, int image_size) {
    require(i >= 0 && i < dist.height && j >= 0 && j < dist.width,
            "distribution_to_radial_plot: pixel out of range");
    require(dist.channels == speeds * orientations,
            "distribution_to_radial_plot: channel count mismatch");
    const Scalar uniform = Scalar(1) / dist.channels;
    const Scalar cx = (image_size - 1) / Scalar(2);
    const Scalar rmax = image_size / Scalar(2) - 1;
    Image8 img(image_size, image_size, 1);
    for (int y = 0; y < image_size; ++y)
        for (int x = 0; x < image_size; ++x) {
            const Scalar dy = y - cx, dx = x - cx;
            const Scalar r = std::sqrt(dx * dx + dy * dy);
            if (r > rmax) continue;  // outside the disc: black
            int ring = static_cast<int>(r / rmax * speeds);
            ring = std::min(ring, speeds - 1);
            // sector 0 centered on angle 0 (rightward), increasing with angle
            Scalar ang = std::atan2(dy, dx);
            if (ang < 0) ang += 2 * M_PI;
            int sector =
                static_cast<int>(std::floor(ang / (2 * M_PI) * orientations + 0.5)) %
                orientations;
            const Scalar value = dist.at(i, j, sector * speeds + ring);
            const Scalar bright = std::min(Scalar(1), value / (2 * uniform));
            img.at(y, x, 0) = static_cast<uint8_t>(std::lround(255 * bright));
        }
    return img;
}

// ---------------------------------------------------------------------------
// distribution dumps
// ---------------------------------------------------------------------------

void write_distribution(const std::string& path, const Tensor3& dist, int speeds,
                        int orientations) {
    require(dist.channels == speeds * orientations,
            "write_distribution: channel count mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("cannot write " + path);
    out.write("MFDS", 4);
    const int32_t dims[4] = {dist.height, dist.width, speeds, orientations};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    std::vector<double> buf(dist.data.begin(), dist.data.end());
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(double)));
}

Tensor3 read_distribution(const std::string& path, int* speeds, int* orientations) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "MFDS", 4) != 0)
        fail("not a distribution dump: " + path);
    int32_t dims[4];
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (!in) fail("truncated distribution dump: " + path);
    Tensor3 dist(dims[0], dims[1], dims[2] * dims[3]);
    std::vector<double> buf(dist.size());
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(double)));
    if (!in) fail("truncated distribution dump: " + path);
    std::copy(buf.begin(), buf.end(), dist.data.begin());
    if (speeds) *speeds = dims[2];
    if (orientations) *orientations = dims[3];
    return dist;
}

}  // namespace motionflow
