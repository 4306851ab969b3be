// motionflow command-line interface: train, infer, eval, ablate, plus
// synthetic-dataset generation and distribution visualization.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "motionflow/checkpoint.hpp"
#include "motionflow/data.hpp"
#include "motionflow/flow_io.hpp"
#include "motionflow/image_io.hpp"
#include "motionflow/network.hpp"
#include "motionflow/presets.hpp"
#include "motionflow/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace motionflow;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDiverged = 3;

// ---------------------------------------------------------------------------
// config file
// ---------------------------------------------------------------------------

struct DataSpec {
    std::string kind = "synthetic";
    // middlebury
    std::string root;
    std::vector<std::string> train_sequences;
    std::vector<std::string> holdout_sequences;
    // synthetic
    int count = 48;
    int size = 64;
    int orientations = 12;
    double min_speed = 0.0;
    double max_speed = 3.0;
    int holdout_count = 12;
};

struct RunConfig {
    NetworkConfig network;
    TrainingOptions training;
    DataSpec data;
};

RunConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    json j = json::parse(in);

    RunConfig rc;
    NetworkConfig& c = rc.network;
    if (j.contains("network")) {
        const json& n = j["network"];
        c.frames = n.value("frames", c.frames);
        c.kernel_size = n.value("kernel_size", c.kernel_size);
        c.kernels_per_orientation =
            n.value("kernels_per_orientation", c.kernels_per_orientation);
        c.orientations = n.value("orientations", c.orientations);
        c.speeds = n.value("speeds", c.speeds);
        c.num_scales = n.value("num_scales", c.num_scales);
        c.scale_factor = n.value("scale_factor", c.scale_factor);
        c.recurrent_iters = n.value("recurrent_iters", c.recurrent_iters);
        c.epsilon = n.value("epsilon", c.epsilon);
        c.std_floor = n.value("std_floor", c.std_floor);
    }
    if (j.contains("options")) {
        const json& o = j["options"];
        PipelineOptions& p = c.options;
        p.center_surround = o.value("center_surround", p.center_surround);
        p.contrast_norm = o.value("contrast_norm", p.contrast_norm);
        p.orientation_norm = o.value("orientation_norm", p.orientation_norm);
        p.phase_pooling = o.value("phase_pooling", p.phase_pooling);
        p.rotation_tied = o.value("rotation_tied", p.rotation_tied);
        p.fixed_gaussian_h1 = o.value("fixed_gaussian_h1", p.fixed_gaussian_h1);
        const std::string rect = o.value("rectifier", std::string("square"));
        if (rect == "relu")
            p.rectifier = PipelineOptions::Rectifier::Relu;
        else if (rect == "square")
            p.rectifier = PipelineOptions::Rectifier::Square;
        else
            throw std::runtime_error("unknown rectifier: " + rect);
    }
    if (j.contains("training")) {
        const json& t = j["training"];
        TrainingOptions& o = rc.training;
        o.lr_phase1 = t.value("lr_phase1", o.lr_phase1);
        o.lr_phase2 = t.value("lr_phase2", o.lr_phase2);
        o.batch_size = t.value("batch_size", o.batch_size);
        o.patch_size = t.value("patch_size", o.patch_size);
        o.batches_per_epoch = t.value("batches_per_epoch", o.batches_per_epoch);
        o.max_epochs_phase1 = t.value("max_epochs_phase1", o.max_epochs_phase1);
        o.max_epochs_phase2 = t.value("max_epochs_phase2", o.max_epochs_phase2);
        o.plateau_improvement =
            t.value("plateau_improvement", o.plateau_improvement);
        o.plateau_patience = t.value("plateau_patience", o.plateau_patience);
        o.nc_improvement = t.value("nc_improvement", o.nc_improvement);
        o.nc_patience = t.value("nc_patience", o.nc_patience);
        o.epe_delta = t.value("epe_delta", o.epe_delta);
        o.seed = t.value("seed", static_cast<uint64_t>(o.seed));
        o.stop_after_epochs = t.value("stop_after_epochs", o.stop_after_epochs);
        const std::string mode = t.value("loss_mode", std::string("two-phase"));
        if (mode == "two-phase")
            o.loss_mode = TrainingOptions::LossMode::TwoPhase;
        else if (mode == "classification")
            o.loss_mode = TrainingOptions::LossMode::ClassificationOnly;
        else if (mode == "regression")
            o.loss_mode = TrainingOptions::LossMode::RegressionOnly;
        else
            throw std::runtime_error("unknown loss_mode: " + mode);
    }
    if (j.contains("data")) {
        const json& d = j["data"];
        DataSpec& s = rc.data;
        s.kind = d.value("kind", s.kind);
        s.root = d.value("root", s.root);
        s.train_sequences =
            d.value("train_sequences", std::vector<std::string>{});
        s.holdout_sequences =
            d.value("holdout_sequences", std::vector<std::string>{});
        s.count = d.value("count", s.count);
        s.size = d.value("size", s.size);
        s.orientations = d.value("orientations", s.orientations);
        s.min_speed = d.value("min_speed", s.min_speed);
        s.max_speed = d.value("max_speed", s.max_speed);
        s.holdout_count = d.value("holdout_count", s.holdout_count);
    }
    return rc;
}

// Train/holdout collections per the config's data section; frame counts and
// seeds come from the effective (possibly preset-modified) configuration.
void load_datasets(const DataSpec& d, const NetworkConfig& cfg,
                   const TrainingOptions& opt,
                   std::vector<TrainingSample>& train_set,
                   std::vector<TrainingSample>& holdout) {
    if (d.kind == "synthetic") {
        train_set =
            synth_translation_dataset(d.count, d.size, cfg.frames, d.orientations,
                                      d.min_speed, d.max_speed, opt.seed);
        holdout = synth_translation_dataset(d.holdout_count, d.size, cfg.frames,
                                            d.orientations, d.min_speed,
                                            d.max_speed, opt.seed + 7777);
        return;
    }
    if (d.kind != "middlebury")
        throw std::runtime_error("unknown data kind: " + d.kind);
    const auto records = scan_middlebury(d.root, cfg.frames);
    auto wanted = [](const std::vector<std::string>& names,
                     const SequenceRecord& r, const char* default_split) {
        if (names.empty()) return r.split == default_split;
        return std::find(names.begin(), names.end(), r.name) != names.end();
    };
    for (const SequenceRecord& r : records) {
        if (wanted(d.train_sequences, r, "train"))
            train_set.push_back(load_sequence(r));
        else if (wanted(d.holdout_sequences, r, "test"))
            holdout.push_back(load_sequence(r));
    }
    if (train_set.empty())
        throw std::runtime_error("no training sequences found under " + d.root);
}

void write_csv_row(const std::string& path, const EpochLog& row, bool header) {
    std::ofstream out(path, header ? std::ios::trunc : std::ios::app);
    if (!out) throw std::runtime_error("cannot write " + path);
    if (header) out << "epoch,phase,train_loss,holdout_loss,holdout_epe,holdout_aae\n";
    out << row.epoch << ',' << row.phase << ',' << row.train_loss << ','
        << row.holdout_loss << ',' << row.holdout_epe << ',' << row.holdout_aae
        << '\n';
}

int run_training(const RunConfig& rc, NetworkConfig cfg, TrainingOptions opt,
                 const std::string& out_path, const std::string& log_path,
                 const std::string& resume_path) {
    TrainerState state;
    bool resuming = false;
    if (!resume_path.empty()) {
        Checkpoint ck = load_checkpoint(resume_path);
        if (!ck.has_trainer)
            throw std::runtime_error("checkpoint has no trainer state to resume");
        cfg = ck.config;
        state = std::move(ck.state);
        resuming = true;
        std::cout << "resuming at epoch " << state.epoch << " (phase "
                  << state.phase << ")\n";
    }

    std::vector<TrainingSample> train_set, holdout;
    load_datasets(rc.data, cfg, opt, train_set, holdout);

    if (!resuming) {
        cfg.target_speeds = select_target_speeds(train_set, cfg.speeds);
        state = init_trainer(cfg, opt);
    }

    bool wrote_header = !resume_path.empty();
    const EpochCallback cb = [&](const TrainerState& st, const EpochLog& row) {
        if (!out_path.empty()) save_checkpoint(out_path, cfg, st);
        if (!log_path.empty()) {
            write_csv_row(log_path, row, !wrote_header);
            wrote_header = true;
        }
        std::printf("epoch %4d phase %d loss %.5f holdout %.5f epe %.4f aae %.3f\n",
                    row.epoch, row.phase, row.train_loss, row.holdout_loss,
                    row.holdout_epe, row.holdout_aae);
        std::fflush(stdout);
    };

    TrainResult result = train(train_set, holdout, cfg, opt, std::move(state), cb);
    if (!out_path.empty()) save_checkpoint(out_path, cfg, result.state);
    std::cout << "status: " << to_string(result.status) << "\n";
    if (!holdout.empty() && result.status != TrainStatus::Diverged) {
        const auto [e, a] = evaluate_epe_aae(result.state.weights, cfg, holdout);
        std::printf("holdout EPE %.4f px, AAE %.3f deg\n", e, a);
    }
    return result.status == TrainStatus::Diverged ? kExitDiverged : 0;
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::string& out_path,
              const std::string& log_path, const std::string& resume_path) {
    RunConfig rc = parse_config(config_path);
    rc.network.validate();
    return run_training(rc, rc.network, rc.training, out_path, log_path,
                        resume_path);
}

int cmd_infer(const std::string& ckpt_path, std::vector<std::string> frame_paths,
              const std::string& out_prefix, int scales, int iters,
              bool save_dist, double max_color) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    NetworkConfig cfg = ck.config;
    if (scales > 0) {
        if (scales > cfg.num_scales)
            throw std::runtime_error(
                "requested more scales than the checkpoint was trained with");
        cfg.num_scales = scales;
    }
    if (iters > 0) cfg.recurrent_iters = iters;
    if (static_cast<int>(frame_paths.size()) != cfg.frames)
        throw std::runtime_error("expected " + std::to_string(cfg.frames) +
                                 " frames, got " +
                                 std::to_string(frame_paths.size()));

    std::vector<Tensor3> frames;
    for (const std::string& p : frame_paths)
        frames.push_back(to_grayscale(read_image(p)));
    const Tensor3 stacked = stack_input(frames);

    const ExpandedNetwork net = expand_network(ck.state.weights, cfg);
    RecurrentResult rr =
        forward_recurrent(stacked, net, cfg, cfg.recurrent_iters, false);
    const Tensor3 full = upsample_flow(rr.flow, stacked.height, stacked.width);

    Tensor3 ones(full.height, full.width, 1);
    ones.fill(1);
    write_flo(out_prefix + ".flo", full, ones);
    write_png(out_prefix + ".png",
              flow_to_color(full, static_cast<Scalar>(max_color)));
    if (save_dist)
        write_distribution(out_prefix + ".mfd",
                           rr.iterations.back().result.distribution, cfg.speeds,
                           cfg.orientations);
    std::cout << "wrote " << out_prefix << ".flo and " << out_prefix << ".png\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& root,
             const std::string& split, const std::string& out_csv, bool bypass,
             int iters) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    NetworkConfig cfg = ck.config;
    if (iters > 0) cfg.recurrent_iters = iters;

    std::vector<SequenceRecord> records = scan_middlebury(root, cfg.frames);
    std::vector<SequenceRecord> picked;
    for (const SequenceRecord& r : records)
        if (split == "all" || r.split == split) picked.push_back(r);
    if (picked.empty())
        throw std::runtime_error("no sequences with ground truth in split '" +
                                 split + "'");

    const ExpandedNetwork net = expand_network(ck.state.weights, cfg);
    std::ofstream csv;
    if (!out_csv.empty()) {
        csv.open(out_csv);
        if (!csv) throw std::runtime_error("cannot write " + out_csv);
        csv << "sequence,epe,aae,pixels\n";
    }
    Scalar epe_sum = 0, aae_sum = 0;
    for (const SequenceRecord& r : picked) {
        TrainingSample s = load_sequence(r);
        Tensor3 flow;
        if (bypass) {
            flow = s.ground_truth;
        } else {
            const Tensor3 stacked = stack_input(s.frames);
            RecurrentResult rr =
                forward_recurrent(stacked, net, cfg, cfg.recurrent_iters, false);
            flow = upsample_flow(rr.flow, stacked.height, stacked.width);
        }
        const MetricReport m = flow_metrics(flow, s.ground_truth, s.mask);
        std::printf("%-16s EPE %.4f px  AAE %.3f deg  (%zu px)\n", r.name.c_str(),
                    m.epe, m.aae, m.pixels);
        if (csv.is_open())
            csv << r.name << ',' << m.epe << ',' << m.aae << ',' << m.pixels
                << '\n';
        epe_sum += m.epe;
        aae_sum += m.aae;
    }
    const Scalar n = static_cast<Scalar>(picked.size());
    std::printf("%-16s EPE %.4f px  AAE %.3f deg\n", "mean", epe_sum / n,
                aae_sum / n);
    if (csv.is_open())
        csv << "mean," << epe_sum / n << ',' << aae_sum / n << ",-\n";
    return 0;
}

int cmd_ablate(const std::string& preset_name, const std::string& config_path,
               const std::string& out_dir) {
    const AblationPreset* preset = find_preset(preset_name);
    if (!preset) {
        std::cerr << "unknown preset '" << preset_name
                  << "'; run `motionflow presets` for the list\n";
        return kExitUsage;
    }
    RunConfig rc = parse_config(config_path);
    NetworkConfig cfg = rc.network;
    TrainingOptions opt = rc.training;
    preset->apply(cfg, opt);
    cfg.validate();

    fs::create_directories(out_dir);
    std::cout << "preset " << preset->name << ": " << preset->description
              << (preset->expect_converge ? "" : " (expected N.C.)") << "\n";
    const int code = run_training(rc, cfg, opt, out_dir + "/model.mfck",
                                  out_dir + "/train_log.csv", "");
    return code;
}

int cmd_synth(const std::string& out_dir, int count, int size, int frames,
              int orientations, double min_speed, double max_speed,
              uint64_t seed, bool transparent) {
    fs::create_directories(out_dir);
    std::vector<TrainingSample> samples;
    if (transparent) {
        SyntheticSpec spec;
        spec.size = size;
        spec.frame_count = frames;
        spec.seed = seed;
        SyntheticLayer a, b;
        a.motion_u = max_speed;
        a.alpha = 0.5;
        b.motion_u = -max_speed;
        b.alpha = 0.5;
        spec.layers = {a, b};
        samples.push_back(synth_sequence(spec));
        samples.back().name = "transparent-0";
    } else {
        samples = synth_translation_dataset(count, size, frames, orientations,
                                            min_speed, max_speed, seed);
    }
    const int start = 10 - ((frames + 1) / 2 - 1);
    for (const TrainingSample& s : samples) {
        const fs::path dir = fs::path(out_dir) / s.name;
        fs::create_directories(dir);
        for (int k = 0; k < frames; ++k) {
            char name[32];
            std::snprintf(name, sizeof(name), "frame%02d.png", start + k);
            write_png((dir / name).string(), from_grayscale(s.frames[k]));
        }
        write_flo((dir / "flow10.flo").string(), s.ground_truth, s.mask);
    }
    std::cout << "wrote " << samples.size() << " sequences under " << out_dir
              << "\n";
    return 0;
}

int cmd_dist_plot(const std::string& dist_path, int pi, int pj,
                  const std::string& out_png, int size) {
    int speeds = 0, orientations = 0;
    Tensor3 dist = read_distribution(dist_path, &speeds, &orientations);
    write_png(out_png,
              distribution_to_radial_plot(dist, pi, pj, speeds, orientations, size));
    std::cout << "wrote " << out_png << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"filter-based optical flow: training, inference, evaluation"};
    app.require_subcommand(1);

    std::string config_path, out_path, log_path, resume_path;
    auto* train = app.add_subcommand("train", "train a model from a config file");
    train->add_option("--config", config_path, "JSON run configuration")
        ->required()
        ->check(CLI::ExistingFile);
    train->add_option("--out", out_path, "checkpoint output path")->required();
    train->add_option("--log", log_path, "CSV training log path");
    train->add_option("--resume", resume_path, "resume from a checkpoint")
        ->check(CLI::ExistingFile);

    std::string ckpt, prefix;
    std::vector<std::string> frame_paths;
    int scales = 0, iters = 0, plot_size = 128;
    bool save_dist = false, bypass = false;
    double max_color = 0;
    auto* infer = app.add_subcommand("infer", "estimate flow for a frame stack");
    infer->add_option("--checkpoint", ckpt, "trained model")->required();
    infer->add_option("--out", prefix, "output prefix (.flo/.png)")->required();
    infer->add_option("frames", frame_paths, "input frames, in order")
        ->required()
        ->check(CLI::ExistingFile);
    infer->add_option("--scales", scales, "pyramid levels to use");
    infer->add_option("--iters", iters, "recurrent iterations");
    infer->add_flag("--save-dist", save_dist, "dump the motion distribution");
    infer->add_option("--max-color", max_color,
                      "color-wheel saturation magnitude (default: 99th pct)");

    std::string root, split = "test", eval_csv;
    auto* eval = app.add_subcommand("eval", "evaluate on a dataset split");
    eval->add_option("--checkpoint", ckpt, "trained model")->required();
    eval->add_option("--data", root, "dataset root directory")->required();
    eval->add_option("--split", split, "train / test / all");
    eval->add_option("--out", eval_csv, "metric CSV path");
    eval->add_option("--iters", iters, "recurrent iterations override");
    eval->add_flag("--bypass", bypass, "score the ground truth against itself");

    std::string preset_name, out_dir;
    auto* ablate = app.add_subcommand("ablate", "retrain with one design change");
    ablate->add_option("--preset", preset_name, "preset name")->required();
    ablate->add_option("--config", config_path, "JSON run configuration")
        ->required()
        ->check(CLI::ExistingFile);
    ablate->add_option("--out", out_dir, "output directory")->required();

    auto* presets = app.add_subcommand("presets", "list ablation presets");

    int count = 16, size = 64, frames = 3, orientations = 12;
    double min_speed = 0, max_speed = 3;
    uint64_t seed = 1;
    bool transparent = false;
    auto* synth = app.add_subcommand("synth", "materialize a synthetic dataset");
    synth->add_option("--out", out_dir, "output directory")->required();
    synth->add_option("--count", count, "sequence count");
    synth->add_option("--size", size, "frame size (px)");
    synth->add_option("--frames", frames, "frames per sequence");
    synth->add_option("--orientations", orientations, "motion direction count");
    synth->add_option("--min-speed", min_speed, "px/frame");
    synth->add_option("--max-speed", max_speed, "px/frame");
    synth->add_option("--seed", seed, "generator seed");
    synth->add_flag("--transparent", transparent,
                    "one alpha-blended opposite-motion pair instead");

    std::string dist_path, plot_out;
    int pi = 0, pj = 0;
    auto* dplot = app.add_subcommand("dist-plot",
                                     "render one pixel's motion distribution");
    dplot->add_option("--dist", dist_path, "distribution dump (.mfd)")
        ->required()
        ->check(CLI::ExistingFile);
    dplot->add_option("--row", pi, "pixel row")->required();
    dplot->add_option("--col", pj, "pixel column")->required();
    dplot->add_option("--out", plot_out, "output PNG")->required();
    dplot->add_option("--size", plot_size, "image size");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);  // prints the message / help text
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*train) return cmd_train(config_path, out_path, log_path, resume_path);
        if (*infer)
            return cmd_infer(ckpt, frame_paths, prefix, scales, iters, save_dist,
                             max_color);
        if (*eval) return cmd_eval(ckpt, root, split, eval_csv, bypass, iters);
        if (*ablate) return cmd_ablate(preset_name, config_path, out_dir);
        if (*presets) {
            for (const AblationPreset& p : ablation_presets())
                std::printf("%-22s %s%s\n", p.name.c_str(), p.description.c_str(),
                            p.expect_converge ? "" : " [N.C. expected]");
            return 0;
        }
        if (*synth)
            return cmd_synth(out_dir, count, size, frames, orientations,
                             min_speed, max_speed, seed, transparent);
        if (*dplot) return cmd_dist_plot(dist_path, pi, pj, plot_out, plot_size);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return 0;
}
