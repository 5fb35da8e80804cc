#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "defend/checkpoint.hpp"
#include "defend/objectives.hpp"

namespace defend {

struct ActiveLosses {
    bool cont = true;
    bool pc = true;
    bool desc = true;
};

struct PhaseSpec {
    std::string name;
    int epochs = 1;
    ActiveLosses losses;
    int grad_accum = 1;
};

struct AugmentConfig {
    double flip_prob = 0.5;
    double max_rotate_deg = 10.0;
    double jitter_lo = 0.8;   // brightness / contrast factor range
    double jitter_hi = 1.2;
    double crop_lo = 0.85;    // crop-resize scale range
    double crop_hi = 1.0;
};

struct TrainConfig {
    std::vector<PhaseSpec> phases;  // warmup, main, finetune
    double ema_alpha = 0.999;
    double base_lr = 1e-3;
    double finetune_lr = 1e-4;
    double weight_decay = 0.05;
    int batch_size = 32;
    int grad_accum_steps = 1;  // default; phases may override
    double tau = 0.07;
    LossWeights weights;
    bool symmetric_contrastive = false;
    AugmentConfig augment;
    uint64_t seed = 7;
    long long max_steps = 0;   // 0 = unlimited
    long long checkpoint_every = 0;  // 0 = phase boundaries only

    static TrainConfig desk_smoke();
    static TrainConfig desk_full();

    void validate() const;
};

// θ_t <- α θ_t + (1-α) θ_s elementwise; collections must be structurally
// identical. No gradient flows through this update.
void ema_update(ParamMap& teacher, const ParamMap& student, double alpha);

struct LrSchedule {
    long long warmup_steps = 0;
    long long main_steps = 0;
    double base_lr = 1e-3;
    double finetune_lr = 1e-4;
};

// Linear 0 -> base_lr over the warmup, cosine base_lr -> 0 over the main
// span, then constant finetune_lr.
double lr_at(long long step, long long total_steps, const LrSchedule& sched);

Image augment(const Image& image, const AugmentConfig& cfg, Rng& rng);

// Decoupled-weight-decay Adam. Moments are keyed by group/name so the
// optimizer state can ride along in checkpoints.
class AdamW {
  public:
    AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::vector<std::pair<std::string, ParamMap*>>& groups, double lr,
              double weight_decay);

    long long step_count() const { return t_; }
    std::map<std::string, ParamMap> export_state() const;
    void import_state(const std::map<std::string, ParamMap>& extra, long long step_count);

  private:
    double beta1_, beta2_, eps_;
    long long t_ = 0;
    ParamMap m_, v_;  // keyed "group/name"
};

struct SampleRef {
    const LoadedSample* sample = nullptr;
    uint64_t augment_seed = 0;
};

struct StepContext {
    std::vector<std::vector<SampleRef>> micro_batches;
    ActiveLosses active;
    double lr = 0.0;
    const TrainConfig* cfg = nullptr;
};

// One effective optimization step: forward/backward over every micro
// batch, a single AdamW update (teacher excluded), then the EMA update.
LossReport train_step(ModelState& state, AdamW& opt, const StepContext& ctx);

struct TrainCallbacks {
    // called after every effective step with the logged report
    std::function<void(long long step, const std::string& phase, const LossReport&, double lr)>
        on_step;
};

struct TrainResult {
    long long final_step = 0;
    LossReport first_report;  // first step of the run
    LossReport last_report;
};

// Full three-phase run. Writes loss_log.csv rows through the callbacks
// wrapper in the CLI; checkpoints are written by the caller via on_phase
// boundaries returned in state.
TrainResult run_training(const Dataset& data, ModelState& state, AdamW& opt,
                         const TrainConfig& cfg, const TrainCallbacks& callbacks,
                         const std::function<void(const std::string& tag)>& save_checkpoint_cb);

}  // namespace defend
