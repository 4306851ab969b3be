#pragma once

// Two-phase training. Phase 1 trains the network for nearest-target
// classification with a logarithmic loss over the softmax distribution;
// phase 2 rebuilds the output projection from the targets and fine-tunes with
// an end-point-error loss over the decoded vectors. With recurrent unrolling
// the same loss is appended after every iteration and summed; classification
// labels at iteration r come from the residual ground truth (ground truth
// minus the accumulated flow entering the iteration), matching what the
// warped frames show the network.

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "motionflow/data.hpp"
#include "motionflow/network.hpp"

namespace motionflow {

// T speed magnitudes at midpoint quantiles (t + 0.5)/T of the masked
// flow-magnitude distribution of the training set.
std::vector<Scalar> select_target_speeds(const std::vector<TrainingSample>& data,
                                         int speeds);

// Index of the classification target nearest to (u, v); ties resolve to the
// lowest index.
int nearest_target(Scalar u, Scalar v, const NetworkConfig& cfg);

// Samples full-resolution maps at the pooling centers (even coordinates).
Tensor3 sample_half(const Tensor3& t);

struct LossValue {
    Scalar value = 0;
    Tensor3 cotangent;  // same shape as the first argument of the loss
};

// Mean negative log softmax probability at the nearest-target label over
// valid pixels. Throws if every pixel is masked.
LossValue classification_loss(const Tensor3& dist, const Tensor3& gt_half,
                              const Tensor3& mask_half, const NetworkConfig& cfg);

// Mean sqrt(du^2 + dv^2 + delta^2) over valid pixels (smoothed end-point
// error; delta keeps the gradient finite at zero residual).
LossValue regression_loss(const Tensor3& flow, const Tensor3& gt,
                          const Tensor3& mask, Scalar delta = 1e-3);

// ---- optimization ----

struct AdamState {
    NetworkWeights m, v;  // first/second moment accumulators, same shapes
    long step = 0;
};

AdamState make_adam(const NetworkConfig& cfg);

// One adaptive-moment update on every trainable canonical parameter.
void adam_step(NetworkWeights& w, const NetworkGrads& g, AdamState& state,
               Scalar lr, bool update_h1, bool update_h4);

// ---- sampling ----

// Deterministic uniform crops over regions with at least one valid pixel; no
// rotation or flip augmentation. Throws if the patch fits no image.
class PatchSampler {
  public:
    PatchSampler(const std::vector<TrainingSample>* data, int patch_size,
                 uint64_t seed);
    void reseed(uint64_t seed);
    TrainingSample next();

  private:
    const std::vector<TrainingSample>* data_;
    int patch_;
    std::mt19937_64 rng_;
    std::vector<int> usable_;  // indices of samples the patch fits
};

// ---- training loop ----

struct TrainingOptions {
    Scalar lr_phase1 = 1e-3;
    Scalar lr_phase2 = 1e-4;
    int batch_size = 8;
    int patch_size = 96;
    int batches_per_epoch = 16;
    int max_epochs_phase1 = 200;
    int max_epochs_phase2 = 40;
    // phase switch: held-out classification loss improves < 0.5% over 5 epochs
    Scalar plateau_improvement = 0.005;
    int plateau_patience = 5;
    // non-convergence guard: abort when the epoch loss fails to improve 1%
    // over 20 epochs (or goes non-finite)
    Scalar nc_improvement = 0.01;
    int nc_patience = 20;
    Scalar epe_delta = 1e-3;
    uint64_t seed = 1;
    enum class LossMode { TwoPhase, ClassificationOnly, RegressionOnly };
    LossMode loss_mode = LossMode::TwoPhase;
    // stop (checkpointably) after this many total epochs; 0 = run to the end
    int stop_after_epochs = 0;
};

struct EpochLog {
    int epoch = 0;
    int phase = 1;
    Scalar train_loss = 0;
    Scalar holdout_loss = 0;  // same loss as training, on the held-out split
    Scalar holdout_epe = 0;
    Scalar holdout_aae = 0;
};

enum class TrainStatus { Converged, MaxEpochs, NotConverged, Diverged };

const char* to_string(TrainStatus s);

// Everything needed to resume bit-exactly from an epoch boundary.
struct TrainerState {
    NetworkWeights weights;
    AdamState adam;
    int epoch = 0;        // completed epochs overall
    int phase_epoch = 0;  // completed epochs in the current phase
    int phase = 1;
    Scalar plateau_best = std::numeric_limits<Scalar>::infinity();
    int plateau_since = 0;
    Scalar nc_best = std::numeric_limits<Scalar>::infinity();
    int nc_since = 0;
};

TrainerState init_trainer(const NetworkConfig& cfg, const TrainingOptions& opt);

struct TrainResult {
    TrainerState state;
    std::vector<EpochLog> log;
    TrainStatus status = TrainStatus::MaxEpochs;
};

using EpochCallback =
    std::function<void(const TrainerState& state, const EpochLog& log)>;

// Runs (or resumes) training until both phases finish, the guard trips, or
// the loss diverges; on divergence the returned weights are the last finite
// epoch's. cfg.target_speeds must be set (select_target_speeds).
TrainResult train(const std::vector<TrainingSample>& data,
                  const std::vector<TrainingSample>& holdout,
                  const NetworkConfig& cfg, const TrainingOptions& opt,
                  TrainerState state, const EpochCallback& on_epoch = {});

// Sum of per-iteration losses for one sample plus, optionally, accumulated
// parameter gradients (grads may be null for evaluation).
Scalar sample_loss(const TrainingSample& sample, const ExpandedNetwork& net,
                   const NetworkConfig& cfg, int phase, Scalar epe_delta,
                   NetworkGrads* grads);

// Mean per-sequence EPE/AAE of the model over a collection, at full
// resolution.
std::pair<Scalar, Scalar> evaluate_epe_aae(const NetworkWeights& w,
                                           const NetworkConfig& cfg,
                                           const std::vector<TrainingSample>& data);

}  // namespace motionflow
