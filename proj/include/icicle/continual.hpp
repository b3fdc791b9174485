#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "icicle/data.hpp"
#include "icicle/losses.hpp"
#include "icicle/model.hpp"
#include "icicle/rng.hpp"

namespace icicle {

class AdamState;

enum class Method { icicle, finetuning, freezing, ewc, lwf, joint };
enum class InitStrategy { random, proximity, all, distant };

Method method_from_string(const std::string& s);
std::string to_string(Method m);
InitStrategy init_strategy_from_string(const std::string& s);
std::string to_string(InitStrategy s);
RegPlacement placement_from_string(const std::string& s);
std::string to_string(RegPlacement p);

// Per-task learning schedule. Warm-up trains add-on + new prototypes with a
// frozen backbone; the joint phase trains everything, with the learning
// rate halved every lr_halve_every epochs and early stopping on the
// validation loss.
struct TrainSchedule {
    std::size_t warmup_epochs = 5;
    std::size_t joint_epochs = 21;
    std::size_t projection_period = 10;
    std::size_t patience = 12;
    std::size_t lr_halve_every = 5;
    double lr_backbone = 1e-4;
    // the backbone is trained from scratch here (no pretrained weights), so
    // the first task uses a faster backbone rate; later tasks drop to
    // lr_backbone, which then plays its usual fine-tuning role
    double lr_backbone_first = 1e-3;
    double lr_head = 1e-3;  // add-on and prototype layers
    double weight_decay = 1e-4;
    bool decay_prototypes = false;  // weight decay on prototype vectors
    std::size_t batch_size = 16;
    bool final_projection = true;
    // whether earlier tasks' prototype vectors keep training in later joint
    // phases (they are never touched during warm-up)
    bool train_old_prototypes = true;

    void validate() const;
};

// Regime defaults keyed on the number of tasks: longer schedules with
// fewer tasks.
TrainSchedule schedule_for_task_count(std::size_t num_tasks);

struct InitConfig {
    InitStrategy strategy = InitStrategy::proximity;
    double alpha = 0.5;  // quantile for proximity/distant candidate selection
    std::size_t max_cluster_iters = 50;
    bool first_task_random = false;  // fall back to random instead of "all" on task 1

    void validate() const;
};

struct MethodConfig {
    Method method = Method::icicle;
    double ewc_alpha = 1.0;
    double lwf_lambda = 1.0;
    double lwf_temperature = 2.0;
};

// Diagonal empirical Fisher importances over the shared (backbone + add-on)
// parameters, with the anchor copy taken after each task.
struct EwcState {
    std::vector<std::vector<double>> importance;
    std::vector<std::vector<double>> anchor;
    std::size_t tasks_seen = 0;
    std::size_t max_samples = 500;

    bool empty() const { return importance.empty(); }
};

void ewc_accumulate(EwcState& state, IcicleModel& model,
                    const std::vector<BatchItem>& task_data);
double ewc_penalty(const EwcState& state, const IcicleModel& model);
// adds coeff * d(penalty)/d(theta) into the shared parameter .grad buffers
void ewc_penalty_backward(const EwcState& state, IcicleModel& model, double coeff);

// T^2-scaled KL between the snapshot's and the current model's old-head
// softened predictions, summed over old heads. 0 before task 2.
double lwf_penalty(const Snapshot& snap, const IcicleModel& model, const TensorF& image,
                   double temperature);

// Per-previous-task additive logit constants calibrated so that exactly
// k = round(u*N) calibration samples flip from the last task.
struct CompensationResult {
    double u = 0.1;
    std::vector<double> bias;            // c^t per previous head
    std::vector<std::size_t> flips;      // achieved flip counts
    std::vector<std::size_t> targets;    // k per previous head
    std::vector<bool> tie_adjusted;      // order-statistic tie fallback used
};

CompensationResult compute_compensation(const IcicleModel& model,
                                        const std::vector<const TensorF*>& calib_images,
                                        double u);
// c^t computed directly from the per-sample score gaps d(x); exposed for
// property tests against the brute-force scan.
std::pair<double, std::size_t> compensation_bias_from_gaps(std::vector<double> gaps, double u,
                                                           bool* tie_adjusted = nullptr);
std::vector<double> apply_compensation(const IcicleModel& model, std::vector<double> full_logits,
                                       const CompensationResult& comp);

// KMeans++ seeding followed by Lloyd iterations. Centers stay in the convex
// hull of the points. Throws on empty input or k == 0.
std::vector<std::vector<double>> kmeanspp_cluster(const std::vector<std::vector<double>>& points,
                                                  std::size_t k, std::size_t max_iters, Rng& rng);

// New-task prototype matrix (num_protos x D) per the configured strategy.
// proximity/distant fall back to "all" (or random, flag-controlled) when the
// model has no heads yet. If a clustering strategy has fewer candidates than
// prototypes, candidates are duplicated with small jitter.
TensorF init_prototypes(const IcicleModel& model, const std::vector<const TensorF*>& task_images,
                        std::size_t num_protos, const InitConfig& cfg, Rng& rng);

struct EpochLog {
    int task_id = 0;
    std::size_t epoch = 0;
    std::string phase;  // "warmup" or "joint"
    double train_loss = 0.0;
    double val_loss = 0.0;
    bool projected = false;
};

struct EngineConfig {
    MethodConfig method;
    TrainSchedule schedule;
    LossWeights weights;
    MaskConfig mask;
    RegPlacement placement = RegPlacement::similarity;
    InitConfig init;
    bool use_ir = true;            // ICICLE interpretability regularization
    bool use_compensation = true;  // task-recency bias compensation at eval
    double compensation_u = 0.1;
    std::uint64_t seed = 1;
};

// Sequential class-incremental trainer. Owns the model, the pre-task
// snapshots, and per-method state (EWC importances, joint-training replay
// of seen tasks for the multi-task upper bound).
class ContinualEngine {
  public:
    ContinualEngine(const ModelConfig& model_cfg, const EngineConfig& cfg);
    ~ContinualEngine();  // out of line: AdamState is incomplete here

    std::vector<EpochLog> train_task(const Dataset& data, const TaskSpec& task);

    const IcicleModel& model() const { return model_; }
    IcicleModel& model() { return model_; }
    const EngineConfig& config() const { return cfg_; }
    const std::vector<Snapshot>& episode_snapshots() const { return episode_snapshots_; }
    const Snapshot* pre_task_snapshot() const {
        return pre_task_ ? &*pre_task_ : nullptr;
    }
    std::size_t tasks_trained() const { return episode_snapshots_.size(); }

  private:
    struct TaskData;
    void run_phase(const TaskData& td, const std::string& phase, std::size_t epochs,
                   std::vector<EpochLog>& log, std::size_t& global_epoch);
    double epoch_loss(const TaskData& td, const std::vector<std::size_t>& order,
                      bool train);
    void project_current_head(const TaskData& td);

    EngineConfig cfg_;
    IcicleModel model_;
    Rng rng_;
    std::unique_ptr<AdamState> opt_;  // live only inside run_phase
    std::optional<Snapshot> pre_task_;
    std::vector<Snapshot> episode_snapshots_;
    EwcState ewc_;
    // retained only for the joint multi-task upper bound
    std::vector<TaskSpec> seen_tasks_;
};

}  // namespace icicle
