#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ctmsr/backbone.hpp"
#include "ctmsr/data.hpp"
#include "ctmsr/losses.hpp"
#include "ctmsr/schedules.hpp"

namespace ctmsr {

enum class Stage { CT, DTM };

struct TrainState;

// Per-iteration observer payload, mainly for tests and progress display.
struct IterStats {
    long long k = 0;
    Stage stage = Stage::CT;
    int T_k = 0;
    int max_t = 0;  // largest trajectory step drawn this iteration
    double ct = 0.0;
    double dtm = 0.0;
    double total = 0.0;
    double wallclock_ms = 0.0;
    bool teacher_refreshed = false;
};

struct TrainConfig {
    long long stage1_iters = 5000;
    long long stage2_iters = 500;
    int batch_size = 8;
    double learning_rate = 1e-4;
    long long teacher_refresh_every = 1000;
    uint64_t seed = 0;
    long long checkpoint_every = 1000;
    StepCurriculum curriculum;
    LossWeights weights;
    ScheduleConfig schedule;
    BackboneSpec backbone;
    std::string surrogate_mode = "perceptual";  // "perceptual" or "l2"
    bool sds = false;                           // ablation: score-distillation gradient in stage 2
    bool early_stop = false;                    // stop stage 1 on a 500-iteration plateau
    std::string out_dir;                        // loss log and checkpoints; empty disables persistence
    std::function<void(const TrainState&, const IterStats&)> on_iter;

    void validate() const;  // throws std::invalid_argument
};

struct AdamMoments {
    Tensor m, v;
};

struct TrainState {
    ConsistencyModel model;
    std::optional<ConsistencyModel> teacher;  // present iff stage == DTM
    std::vector<AdamMoments> moments;         // aligned with the parameter registry
    long long adam_steps = 0;
    long long k = 0;  // global iteration counter, monotone across stages
    Stage stage = Stage::CT;
    long long stage2_start_k = 0;  // anchor for the teacher refresh cadence
    Rng rng;
};

TrainState init_train_state(const TrainConfig& cfg);

// Runs `iters` consistency-training iterations from the current state.
void train_ct(TrainState& state, const TrainConfig& cfg, const std::vector<SRPair>& pairs, long long iters);

// Runs `iters` joint consistency + trajectory-matching iterations, promoting
// a stage-1 state and refreshing the frozen teacher at the configured cadence.
void train_dtm(TrainState& state, const TrainConfig& cfg, const std::vector<SRPair>& pairs, long long iters);

TrainState train_stage1(const TrainConfig& cfg, const DatasetHandle& data);
TrainState train_stage2(TrainState state, const TrainConfig& cfg, const DatasetHandle& data);

// Adam update (beta1 0.9, beta2 0.999, eps 1e-8, bias correction) applied to
// the gradients accumulated in the model's layers.
void optimizer_step(TrainState& state, double lr);

// Binary checkpoint with the literal header "ctmsr-ckpt-v1": parameters,
// optimizer moments, iteration, stage, generator state and teacher if present.
void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

}  // namespace ctmsr
