#include "motionflow/training.hpp"

#include <algorithm>
#include <cmath>

#include "motionflow/flow_io.hpp"

namespace motionflow {

// ---------------------------------------------------------------------------
// targets and losses
// ---------------------------------------------------------------------------

std::vector<Scalar> select_target_speeds(const std::vector<TrainingSample>& data,
                                         int speeds) {
    require(speeds >= 1, "select_target_speeds: need at least one speed");
    std::vector<Scalar> mags;
    for (const TrainingSample& s : data)
        for (int i = 0; i < s.ground_truth.height; ++i)
            for (int j = 0; j < s.ground_truth.width; ++j) {
                if (s.mask.at(i, j, 0) <= 0.5) continue;
                const Scalar u = s.ground_truth.at(i, j, 0);
                const Scalar v = s.ground_truth.at(i, j, 1);
                mags.push_back(std::sqrt(u * u + v * v));
            }
    require(!mags.empty(), "select_target_speeds: no valid flow pixels");
    std::sort(mags.begin(), mags.end());

    std::vector<Scalar> out(speeds);
    const size_t n = mags.size();
    for (int t = 0; t < speeds; ++t) {
        const Scalar q = (t + Scalar(0.5)) / speeds;
        const Scalar pos = q * static_cast<Scalar>(n - 1);
        const size_t lo = static_cast<size_t>(pos);
        const size_t hi = std::min(lo + 1, n - 1);
        const Scalar f = pos - static_cast<Scalar>(lo);
        out[t] = (1 - f) * mags[lo] + f * mags[hi];
    }
    return out;
}

int nearest_target(Scalar u, Scalar v, const NetworkConfig& cfg) {
    int best = 0;
    Scalar best_d = std::numeric_limits<Scalar>::infinity();
    for (int o = 0; o < cfg.orientations; ++o)
        for (int t = 0; t < cfg.speeds; ++t) {
            const auto [tu, tv] = cfg.classification_target(t, o);
            const Scalar d = (u - tu) * (u - tu) + (v - tv) * (v - tv);
            const int k = cfg.target_index(t, o);
            if (d < best_d || (d == best_d && k < best)) {
                best_d = d;
                best = k;
            }
        }
    return best;
}

Tensor3 sample_half(const Tensor3& t) {
    Tensor3 out((t.height + 1) / 2, (t.width + 1) / 2, t.channels);
    for (int i = 0; i < out.height; ++i)
        for (int j = 0; j < out.width; ++j)
            for (int k = 0; k < t.channels; ++k)
                out.at(i, j, k) = t.at(2 * i, 2 * j, k);
    return out;
}

LossValue classification_loss(const Tensor3& dist, const Tensor3& gt_half,
                              const Tensor3& mask_half, const NetworkConfig& cfg) {
    require(dist.height == gt_half.height && dist.width == gt_half.width,
            "classification_loss: shape mismatch");
    require(dist.channels == cfg.target_count(),
            "classification_loss: distribution channel count mismatch");
    LossValue lv;
    lv.cotangent = Tensor3(dist.height, dist.width, dist.channels);
    size_t n = 0;
    for (int i = 0; i < dist.height; ++i)
        for (int j = 0; j < dist.width; ++j)
            if (mask_half.at(i, j, 0) > 0.5) ++n;
    require(n > 0, "classification_loss: every pixel is masked");

    const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
    for (int i = 0; i < dist.height; ++i)
        for (int j = 0; j < dist.width; ++j) {
            if (mask_half.at(i, j, 0) <= 0.5) continue;
            const int label =
                nearest_target(gt_half.at(i, j, 0), gt_half.at(i, j, 1), cfg);
            const Scalar p = dist.at(i, j, label);
            lv.value -= std::log(std::max(p, Scalar(1e-300)));
            lv.cotangent.at(i, j, label) = -inv_n / std::max(p, Scalar(1e-12));
        }
    lv.value *= inv_n;
    return lv;
}

LossValue regression_loss(const Tensor3& flow, const Tensor3& gt,
                          const Tensor3& mask, Scalar delta) {
    require(flow.same_shape(gt), "regression_loss: shape mismatch");
    LossValue lv;
    lv.cotangent = Tensor3(flow.height, flow.width, 2);
    size_t n = 0;
    for (int i = 0; i < flow.height; ++i)
        for (int j = 0; j < flow.width; ++j)
            if (mask.at(i, j, 0) > 0.5) ++n;
    require(n > 0, "regression_loss: every pixel is masked");

    const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
    for (int i = 0; i < flow.height; ++i)
        for (int j = 0; j < flow.width; ++j) {
            if (mask.at(i, j, 0) <= 0.5) continue;
            const Scalar du = flow.at(i, j, 0) - gt.at(i, j, 0);
            const Scalar dv = flow.at(i, j, 1) - gt.at(i, j, 1);
            const Scalar r = std::sqrt(du * du + dv * dv + delta * delta);
            lv.value += r;
            lv.cotangent.at(i, j, 0) = inv_n * du / r;
            lv.cotangent.at(i, j, 1) = inv_n * dv / r;
        }
    lv.value *= inv_n;
    return lv;
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

AdamState make_adam(const NetworkConfig& cfg) {
    AdamState st;
    st.m = make_grads(cfg);
    st.v = make_grads(cfg);
    return st;
}

namespace {

struct ParamView {
    std::vector<Scalar>* w;
    const std::vector<Scalar>* g;
    std::vector<Scalar>* m;
    std::vector<Scalar>* v;
    bool update;
};

}  // namespace

void adam_step(NetworkWeights& w, const NetworkGrads& g, AdamState& state,
               Scalar lr, bool update_h1, bool update_h4) {
    constexpr Scalar b1 = 0.9, b2 = 0.999, eps = 1e-8;
    state.step += 1;
    const Scalar c1 = 1 - std::pow(b1, static_cast<Scalar>(state.step));
    const Scalar c2 = 1 - std::pow(b2, static_cast<Scalar>(state.step));

    const ParamView views[] = {
        {&w.h1.slices, &g.h1.slices, &state.m.h1.slices, &state.v.h1.slices, update_h1},
        {&w.h1.bias, &g.h1.bias, &state.m.h1.bias, &state.v.h1.bias, update_h1},
        {&w.h2.slices, &g.h2.slices, &state.m.h2.slices, &state.v.h2.slices, true},
        {&w.h2.bias, &g.h2.bias, &state.m.h2.bias, &state.v.h2.bias, true},
        {&w.h3.slices, &g.h3.slices, &state.m.h3.slices, &state.v.h3.slices, true},
        {&w.h3.bias, &g.h3.bias, &state.m.h3.bias, &state.v.h3.bias, true},
        {&w.h4.slices, &g.h4.slices, &state.m.h4.slices, &state.v.h4.slices, update_h4},
        {&w.h4.bias, &g.h4.bias, &state.m.h4.bias, &state.v.h4.bias, update_h4},
    };
    for (const ParamView& pv : views) {
        if (!pv.update) continue;
        for (size_t p = 0; p < pv.w->size(); ++p) {
            const Scalar grad = (*pv.g)[p];
            Scalar& m = (*pv.m)[p];
            Scalar& v = (*pv.v)[p];
            m = b1 * m + (1 - b1) * grad;
            v = b2 * v + (1 - b2) * grad * grad;
            (*pv.w)[p] -= lr * (m / c1) / (std::sqrt(v / c2) + eps);
        }
    }
}

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

namespace {

Tensor3 crop(const Tensor3& t, int top, int left, int size) {
    Tensor3 out(size, size, t.channels);
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j)
            for (int k = 0; k < t.channels; ++k)
                out.at(i, j, k) = t.at(top + i, left + j, k);
    return out;
}

}  // namespace

PatchSampler::PatchSampler(const std::vector<TrainingSample>* data,
                           int patch_size, uint64_t seed)
    : data_(data), patch_(patch_size), rng_(seed) {
    require(patch_size >= 1, "PatchSampler: patch size must be positive");
    for (size_t s = 0; s < data_->size(); ++s) {
        const TrainingSample& t = (*data_)[s];
        if (t.frames[0].height >= patch_ && t.frames[0].width >= patch_)
            usable_.push_back(static_cast<int>(s));
    }
    require(!usable_.empty(), "PatchSampler: patch larger than every image");
}

void PatchSampler::reseed(uint64_t seed) { rng_.seed(seed); }

TrainingSample PatchSampler::next() {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const TrainingSample& src =
            (*data_)[usable_[rng_() % usable_.size()]];
        const int max_top = src.frames[0].height - patch_;
        const int max_left = src.frames[0].width - patch_;
        const int top = max_top == 0 ? 0 : static_cast<int>(rng_() % (max_top + 1));
        const int left =
            max_left == 0 ? 0 : static_cast<int>(rng_() % (max_left + 1));

        Tensor3 mask = crop(src.mask, top, left, patch_);
        bool any_valid = false;
        for (Scalar v : mask.data)
            if (v > 0.5) {
                any_valid = true;
                break;
            }
        if (!any_valid) continue;  // fully unknown crop: reject

        TrainingSample out;
        out.name = src.name;
        for (const Tensor3& f : src.frames)
            out.frames.push_back(crop(f, top, left, patch_));
        out.ground_truth = crop(src.ground_truth, top, left, patch_);
        out.mask = std::move(mask);
        return out;
    }
    throw std::runtime_error("PatchSampler: no crop with valid pixels found");
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

const char* to_string(TrainStatus s) {
    switch (s) {
        case TrainStatus::Converged: return "converged";
        case TrainStatus::MaxEpochs: return "max-epochs";
        case TrainStatus::NotConverged: return "N.C.";
        default: return "diverged";
    }
}

TrainerState init_trainer(const NetworkConfig& cfg, const TrainingOptions& opt) {
    TrainerState st;
    st.weights = init_weights(cfg, opt.seed);
    st.adam = make_adam(cfg);
    st.phase = opt.loss_mode == TrainingOptions::LossMode::RegressionOnly ? 2 : 1;
    return st;
}

Scalar sample_loss(const TrainingSample& sample, const ExpandedNetwork& net,
                   const NetworkConfig& cfg, int phase, Scalar epe_delta,
                   NetworkGrads* grads) {
    const Tensor3 stacked = stack_input(sample.frames);
    const Tensor3 gt_half = sample_half(sample.ground_truth);
    const Tensor3 mask_half = sample_half(sample.mask);
    RecurrentResult rr = forward_recurrent(stacked, net, cfg,
                                           cfg.recurrent_iters, grads != nullptr);
    const int R = static_cast<int>(rr.iterations.size());
    const Tensor3 none;
    Scalar total = 0;

    if (phase == 1) {
        for (int r = 0; r < R; ++r) {
            const RecurrentIteration& it = rr.iterations[r];
            Tensor3 residual = gt_half;
            for (size_t p = 0; p < residual.data.size(); ++p)
                residual.data[p] -= it.accum_before.data[p];
            LossValue lv = classification_loss(it.result.distribution, residual,
                                               mask_half, cfg);
            total += lv.value;
            if (grads)
                backward_multiscale(rr.traces[r], none, lv.cotangent, net, cfg,
                                    *grads);
        }
    } else {
        // Each iteration's accumulated output carries its own loss; the
        // cotangent on increment r is the sum over later losses because every
        // accumulated output after r contains it.
        std::vector<Tensor3> cots(R);
        for (int r = 0; r < R; ++r) {
            LossValue lv = regression_loss(rr.iterations[r].accum_after, gt_half,
                                           mask_half, epe_delta);
            total += lv.value;
            cots[r] = std::move(lv.cotangent);
        }
        if (grads) {
            Tensor3 suffix(cots[R - 1].height, cots[R - 1].width, 2);
            for (int r = R - 1; r >= 0; --r) {
                for (size_t p = 0; p < suffix.data.size(); ++p)
                    suffix.data[p] += cots[r].data[p];
                backward_multiscale(rr.traces[r], suffix, none, net, cfg, *grads);
            }
        }
    }
    return total;
}

std::pair<Scalar, Scalar> evaluate_epe_aae(const NetworkWeights& w,
                                           const NetworkConfig& cfg,
                                           const std::vector<TrainingSample>& data) {
    require(!data.empty(), "evaluate: empty collection");
    const ExpandedNetwork net = expand_network(w, cfg);
    Scalar epe_sum = 0, aae_sum = 0;
    for (const TrainingSample& s : data) {
        const Tensor3 stacked = stack_input(s.frames);
        RecurrentResult rr =
            forward_recurrent(stacked, net, cfg, cfg.recurrent_iters, false);
        const Tensor3 full =
            upsample_flow(rr.flow, stacked.height, stacked.width);
        const MetricReport m = flow_metrics(full, s.ground_truth, s.mask);
        epe_sum += m.epe;
        aae_sum += m.aae;
    }
    const Scalar n = static_cast<Scalar>(data.size());
    return {epe_sum / n, aae_sum / n};
}

namespace {

void scale_grads(NetworkGrads& g, Scalar f) {
    for (std::vector<Scalar>* v :
         {&g.h1.slices, &g.h1.bias, &g.h2.slices, &g.h2.bias, &g.h3.slices,
          &g.h3.bias, &g.h4.slices, &g.h4.bias})
        for (Scalar& x : *v) x *= f;
}

uint64_t epoch_seed(uint64_t seed, int epoch) {
    return seed ^ (0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(epoch + 1));
}

}  // namespace

TrainResult train(const std::vector<TrainingSample>& data,
                  const std::vector<TrainingSample>& holdout,
                  const NetworkConfig& cfg, const TrainingOptions& opt,
                  TrainerState state, const EpochCallback& on_epoch) {
    cfg.validate();
    require(!cfg.target_speeds.empty(), "train: target speeds not selected");
    require(!data.empty(), "train: empty dataset");

    TrainResult res;
    res.state = std::move(state);
    TrainerState& st = res.state;
    const bool update_h1 = !cfg.options.fixed_gaussian_h1;
    ExpandedNetwork net = expand_network(st.weights, cfg);
    NetworkWeights last_good = st.weights;

    while (true) {
        PatchSampler sampler(&data, opt.patch_size, epoch_seed(opt.seed, st.epoch));
        Scalar epoch_loss = 0;
        bool finite = true;
        for (int b = 0; b < opt.batches_per_epoch && finite; ++b) {
            NetworkGrads grads = make_grads(cfg);
            Scalar batch_loss = 0;
            for (int i = 0; i < opt.batch_size; ++i) {
                const TrainingSample sample = sampler.next();
                batch_loss +=
                    sample_loss(sample, net, cfg, st.phase, opt.epe_delta, &grads);
            }
            batch_loss /= opt.batch_size;
            if (!std::isfinite(batch_loss)) {
                finite = false;
                break;
            }
            scale_grads(grads, Scalar(1) / opt.batch_size);
            adam_step(st.weights, grads, st.adam,
                      st.phase == 1 ? opt.lr_phase1 : opt.lr_phase2, update_h1,
                      /*update_h4=*/st.phase == 2);
            net = expand_network(st.weights, cfg);
            epoch_loss += batch_loss;
        }
        if (!finite) {
            st.weights = last_good;
            res.status = TrainStatus::Diverged;
            return res;
        }
        epoch_loss /= opt.batches_per_epoch;

        EpochLog row;
        row.epoch = st.epoch;
        row.phase = st.phase;
        row.train_loss = epoch_loss;
        if (!holdout.empty()) {
            Scalar hl = 0;
            for (const TrainingSample& s : holdout)
                hl += sample_loss(s, net, cfg, st.phase, opt.epe_delta, nullptr);
            row.holdout_loss = hl / static_cast<Scalar>(holdout.size());
            const auto [e, a] = evaluate_epe_aae(st.weights, cfg, holdout);
            row.holdout_epe = e;
            row.holdout_aae = a;
        }
        res.log.push_back(row);
        last_good = st.weights;

        const Scalar monitor = holdout.empty() ? epoch_loss : row.holdout_loss;
        if (monitor < st.plateau_best * (1 - opt.plateau_improvement)) {
            st.plateau_best = monitor;
            st.plateau_since = 0;
        } else {
            ++st.plateau_since;
        }
        if (monitor < st.nc_best * (1 - opt.nc_improvement)) {
            st.nc_best = monitor;
            st.nc_since = 0;
        } else {
            ++st.nc_since;
        }

        ++st.epoch;
        ++st.phase_epoch;
        if (on_epoch) on_epoch(st, row);

        if (st.nc_since >= opt.nc_patience) {
            res.status = TrainStatus::NotConverged;
            return res;
        }
        if (opt.stop_after_epochs > 0 && st.epoch >= opt.stop_after_epochs) {
            res.status = TrainStatus::MaxEpochs;
            return res;
        }

        if (st.phase == 1) {
            const bool plateaued = st.plateau_since >= opt.plateau_patience;
            const bool maxed = st.phase_epoch >= opt.max_epochs_phase1;
            if (!plateaued && !maxed) continue;
            if (opt.loss_mode == TrainingOptions::LossMode::ClassificationOnly) {
                res.status =
                    plateaued ? TrainStatus::Converged : TrainStatus::MaxEpochs;
                return res;
            }
            st.phase = 2;
            st.phase_epoch = 0;
            st.weights.h4 = init_output_layer(cfg);
            st.adam.m.h4 = make_canonical(cfg.spec_h4());
            st.adam.v.h4 = make_canonical(cfg.spec_h4());
            st.plateau_best = std::numeric_limits<Scalar>::infinity();
            st.plateau_since = 0;
            st.nc_best = std::numeric_limits<Scalar>::infinity();
            st.nc_since = 0;
            net = expand_network(st.weights, cfg);
        } else {
            if (st.plateau_since >= opt.plateau_patience) {
                res.status = TrainStatus::Converged;
                return res;
            }
            if (st.phase_epoch >= opt.max_epochs_phase2) {
                res.status = TrainStatus::MaxEpochs;
                return res;
            }
        }
    }
}

}  // namespace motionflow
