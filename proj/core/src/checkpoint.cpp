#include "motionflow/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace motionflow {

namespace {

constexpr uint32_t kVersion = 1;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

struct Writer {
    std::ofstream out;
    explicit Writer(const std::string& path) : out(path, std::ios::binary) {
        if (!out) fail("cannot write " + path);
    }
    template <typename T>
    void raw(T v) {
        out.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void f64(Scalar v) { raw(static_cast<double>(v)); }
    void f64v(const std::vector<Scalar>& v) {
        raw(static_cast<uint64_t>(v.size()));
        for (Scalar x : v) f64(x);
    }
};

struct Reader {
    std::ifstream in;
    std::string path;
    explicit Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
        if (!in) fail("cannot open " + p);
    }
    template <typename T>
    T raw() {
        T v;
        in.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (!in) fail("truncated checkpoint: " + path);
        return v;
    }
    Scalar f64() { return static_cast<Scalar>(raw<double>()); }
    std::vector<Scalar> f64v() {
        const uint64_t n = raw<uint64_t>();
        if (n > (1ull << 32)) fail("corrupt checkpoint: " + path);
        std::vector<Scalar> v(n);
        for (uint64_t i = 0; i < n; ++i) v[i] = f64();
        return v;
    }
};

void write_layer(Writer& w, const CanonicalWeights& c) {
    w.raw<int32_t>(c.slots);
    w.raw<int32_t>(c.in_per_group);
    w.raw<int32_t>(c.out_per_group);
    w.raw<int32_t>(c.kernel_y);
    w.raw<int32_t>(c.kernel_x);
    w.f64v(c.slices);
    w.f64v(c.bias);
}

CanonicalWeights read_layer(Reader& r) {
    CanonicalWeights c;
    c.slots = r.raw<int32_t>();
    c.in_per_group = r.raw<int32_t>();
    c.out_per_group = r.raw<int32_t>();
    c.kernel_y = r.raw<int32_t>();
    c.kernel_x = r.raw<int32_t>();
    c.slices = r.f64v();
    c.bias = r.f64v();
    const size_t expect = static_cast<size_t>(c.slots) * c.in_per_group *
                          c.out_per_group * c.kernel_y * c.kernel_x;
    if (c.slices.size() != expect) fail("corrupt checkpoint layer: " + r.path);
    return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const NetworkConfig& cfg,
                     const TrainerState& st, bool include_trainer) {
    Writer w(path);
    w.out.write("MFCK", 4);
    w.raw<uint32_t>(kVersion);

    w.raw<int32_t>(cfg.frames);
    w.raw<int32_t>(cfg.kernel_size);
    w.raw<int32_t>(cfg.kernels_per_orientation);
    w.raw<int32_t>(cfg.orientations);
    w.raw<int32_t>(cfg.speeds);
    w.raw<int32_t>(cfg.num_scales);
    w.raw<int32_t>(cfg.recurrent_iters);
    w.f64(cfg.scale_factor);
    w.f64(cfg.epsilon);
    w.f64(cfg.std_floor);
    const PipelineOptions& o = cfg.options;
    w.raw<uint8_t>(o.center_surround);
    w.raw<uint8_t>(o.contrast_norm);
    w.raw<uint8_t>(o.orientation_norm);
    w.raw<uint8_t>(o.phase_pooling);
    w.raw<uint8_t>(o.rectifier == PipelineOptions::Rectifier::Relu ? 1 : 0);
    w.raw<uint8_t>(o.rotation_tied);
    w.raw<uint8_t>(o.fixed_gaussian_h1);
    w.raw<int32_t>(static_cast<int32_t>(cfg.target_speeds.size()));
    for (Scalar s : cfg.target_speeds) w.f64(s);

    write_layer(w, st.weights.h1);
    write_layer(w, st.weights.h2);
    write_layer(w, st.weights.h3);
    write_layer(w, st.weights.h4);

    w.raw<uint8_t>(include_trainer ? 1 : 0);
    if (include_trainer) {
        w.raw<int32_t>(st.epoch);
        w.raw<int32_t>(st.phase_epoch);
        w.raw<int32_t>(st.phase);
        w.f64(st.plateau_best);
        w.raw<int32_t>(st.plateau_since);
        w.f64(st.nc_best);
        w.raw<int32_t>(st.nc_since);
        w.raw<int64_t>(st.adam.step);
        write_layer(w, st.adam.m.h1);
        write_layer(w, st.adam.m.h2);
        write_layer(w, st.adam.m.h3);
        write_layer(w, st.adam.m.h4);
        write_layer(w, st.adam.v.h1);
        write_layer(w, st.adam.v.h2);
        write_layer(w, st.adam.v.h3);
        write_layer(w, st.adam.v.h4);
    }
    if (!w.out) fail("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.in.read(magic, 4);
    if (r.in.gcount() != 4 || std::memcmp(magic, "MFCK", 4) != 0)
        fail("not a checkpoint file: " + path);
    const uint32_t version = r.raw<uint32_t>();
    if (version != kVersion) fail("unsupported checkpoint version: " + path);

    Checkpoint ck;
    NetworkConfig& cfg = ck.config;
    cfg.frames = r.raw<int32_t>();
    cfg.kernel_size = r.raw<int32_t>();
    cfg.kernels_per_orientation = r.raw<int32_t>();
    cfg.orientations = r.raw<int32_t>();
    cfg.speeds = r.raw<int32_t>();
    cfg.num_scales = r.raw<int32_t>();
    cfg.recurrent_iters = r.raw<int32_t>();
    cfg.scale_factor = r.f64();
    cfg.epsilon = r.f64();
    cfg.std_floor = r.f64();
    PipelineOptions& o = cfg.options;
    o.center_surround = r.raw<uint8_t>();
    o.contrast_norm = r.raw<uint8_t>();
    o.orientation_norm = r.raw<uint8_t>();
    o.phase_pooling = r.raw<uint8_t>();
    o.rectifier = r.raw<uint8_t>() ? PipelineOptions::Rectifier::Relu
                                   : PipelineOptions::Rectifier::Square;
    o.rotation_tied = r.raw<uint8_t>();
    o.fixed_gaussian_h1 = r.raw<uint8_t>();
    const int32_t nspeeds = r.raw<int32_t>();
    cfg.target_speeds.resize(nspeeds);
    for (int i = 0; i < nspeeds; ++i) cfg.target_speeds[i] = r.f64();

    ck.state.weights.h1 = read_layer(r);
    ck.state.weights.h2 = read_layer(r);
    ck.state.weights.h3 = read_layer(r);
    ck.state.weights.h4 = read_layer(r);

    ck.has_trainer = r.raw<uint8_t>() != 0;
    if (ck.has_trainer) {
        ck.state.epoch = r.raw<int32_t>();
        ck.state.phase_epoch = r.raw<int32_t>();
        ck.state.phase = r.raw<int32_t>();
        ck.state.plateau_best = r.f64();
        ck.state.plateau_since = r.raw<int32_t>();
        ck.state.nc_best = r.f64();
        ck.state.nc_since = r.raw<int32_t>();
        ck.state.adam.step = r.raw<int64_t>();
        ck.state.adam.m.h1 = read_layer(r);
        ck.state.adam.m.h2 = read_layer(r);
        ck.state.adam.m.h3 = read_layer(r);
        ck.state.adam.m.h4 = read_layer(r);
        ck.state.adam.v.h1 = read_layer(r);
        ck.state.adam.v.h2 = read_layer(r);
        ck.state.adam.v.h3 = read_layer(r);
        ck.state.adam.v.h4 = read_layer(r);
    } else {
        ck.state.adam = make_adam(cfg);
    }
    cfg.validate();
    return ck;
}

}  // namespace motionflow
