#include "icicle/continual.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "icicle/optim.hpp"

namespace icicle {

Method method_from_string(const std::string& s) {
    if (s == "icicle") return Method::icicle;
    if (s == "finetuning") return Method::finetuning;
    if (s == "freezing") return Method::freezing;
    if (s == "ewc") return Method::ewc;
    if (s == "lwf") return Method::lwf;
    if (s == "joint") return Method::joint;
    throw std::invalid_argument("unknown method: " + s);
}

std::string to_string(Method m) {
    switch (m) {
        case Method::icicle: return "icicle";
        case Method::finetuning: return "finetuning";
        case Method::freezing: return "freezing";
        case Method::ewc: return "ewc";
        case Method::lwf: return "lwf";
        case Method::joint: return "joint";
    }
    return "?";
}

InitStrategy init_strategy_from_string(const std::string& s) {
    if (s == "random") return InitStrategy::random;
    if (s == "proximity") return InitStrategy::proximity;
    if (s == "all") return InitStrategy::all;
    if (s == "distant") return InitStrategy::distant;
    throw std::invalid_argument("unknown init strategy: " + s);
}

std::string to_string(InitStrategy s) {
    switch (s) {
        case InitStrategy::random: return "random";
        case InitStrategy::proximity: return "proximity";
        case InitStrategy::all: return "all";
        case InitStrategy::distant: return "distant";
    }
    return "?";
}

RegPlacement placement_from_string(const std::string& s) {
    if (s == "feature") return RegPlacement::feature;
    if (s == "distance") return RegPlacement::distance;
    if (s == "similarity") return RegPlacement::similarity;
    throw std::invalid_argument("unknown regularization placement: " + s);
}

std::string to_string(RegPlacement p) {
    switch (p) {
        case RegPlacement::feature: return "feature";
        case RegPlacement::distance: return "distance";
        case RegPlacement::similarity: return "similarity";
    }
    return "?";
}

void TrainSchedule::validate() const {
    if (projection_period < 1) throw std::invalid_argument("TrainSchedule: projection_period >= 1");
    if (patience < 1) throw std::invalid_argument("TrainSchedule: patience >= 1");
    if (lr_halve_every < 1) throw std::invalid_argument("TrainSchedule: lr_halve_every >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainSchedule: batch_size >= 1");
    if (!(lr_backbone > 0.0) || !(lr_backbone_first > 0.0) || !(lr_head > 0.0))
        throw std::invalid_argument("TrainSchedule: learning rates must be > 0");
    if (weight_decay < 0.0) throw std::invalid_argument("TrainSchedule: weight_decay >= 0");
}

TrainSchedule schedule_for_task_count(std::size_t num_tasks) {
    TrainSchedule s;
    if (num_tasks <= 4) {
        s.warmup_epochs = 5;
        s.joint_epochs = 21;
        s.projection_period = 10;
    } else if (num_tasks <= 10) {
        s.warmup_epochs = 5;
        s.joint_epochs = 15;
        s.projection_period = 7;
    } else {
        s.warmup_epochs = 4;
        s.joint_epochs = 10;
        s.projection_period = 5;
    }
    return s;
}

void InitConfig::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("InitConfig: alpha in (0,1)");
    if (max_cluster_iters < 1) throw std::invalid_argument("InitConfig: max_cluster_iters >= 1");
}

// ---------------------------------------------------------------------------
// EWC

void ewc_accumulate(EwcState& state, IcicleModel& model,
                    const std::vector<BatchItem>& task_data) {
    if (task_data.empty()) throw std::invalid_argument("ewc_accumulate: empty task data");
    auto shared = model.shared_params();
    std::vector<std::vector<double>> acc;
    for (auto& [name, p] : shared) acc.emplace_back(p->numel(), 0.0);

    std::size_t n = std::min(task_data.size(), state.max_samples);
    LossWeights ce_only{1.0, 0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
        model.zero_grads();
        std::vector<BatchItem> single{task_data[i]};
        total_loss(model, nullptr, single, ce_only, MaskConfig{}, RegPlacement::similarity, true);
        for (std::size_t j = 0; j < shared.size(); ++j)
            for (std::size_t k = 0; k < acc[j].size(); ++k) {
                double g = shared[j].second->grad[k];
                acc[j][k] += g * g;
            }
    }
    for (auto& v : acc)
        for (auto& x : v) x /= static_cast<double>(n);

    if (state.empty()) {
        state.importance = std::move(acc);
    } else {
        double t = static_cast<double>(state.tasks_seen);
        for (std::size_t j = 0; j < acc.size(); ++j)
            for (std::size_t k = 0; k < acc[j].size(); ++k)
                state.importance[j][k] = (state.importance[j][k] * t + acc[j][k]) / (t + 1.0);
    }
    state.anchor.clear();
    for (auto& [name, p] : shared) state.anchor.push_back(p->data);
    ++state.tasks_seen;
}

double ewc_penalty(const EwcState& state, const IcicleModel& model) {
    if (state.empty()) return 0.0;
    auto shared = model.shared_params();
    if (shared.size() != state.importance.size())
        throw std::invalid_argument("ewc_penalty: state does not match model");
    double total = 0.0;
    for (std::size_t j = 0; j < shared.size(); ++j) {
        const TensorF* p = shared[j].second;
        for (std::size_t k = 0; k < p->numel(); ++k) {
            double diff = p->data[k] - state.anchor[j][k];
            total += state.importance[j][k] * diff * diff;
        }
    }
    return total;
}

void ewc_penalty_backward(const EwcState& state, IcicleModel& model, double coeff) {
    if (state.empty()) return;
    auto shared = model.shared_params();
    for (std::size_t j = 0; j < shared.size(); ++j) {
        TensorF* p = shared[j].second;
        p->alloc_grad();
        for (std::size_t k = 0; k < p->numel(); ++k)
            p->grad[k] += coeff * 2.0 * state.importance[j][k] * (p->data[k] - state.anchor[j][k]);
    }
}

// ---------------------------------------------------------------------------
// LwF

double lwf_penalty(const Snapshot& snap, const IcicleModel& model, const TensorF& image,
                   double temperature) {
    if (snap.model.heads.empty()) return 0.0;
    ModelEval old_ev = eval_model(snap.model, image);
    ModelEval new_ev = eval_model(model, image);
    double total = 0.0;
    for (std::size_t h = 0; h < snap.model.heads.size(); ++h) {
        std::vector<double> zo = old_ev.heads[h].logits, zn = new_ev.heads[h].logits;
        for (auto& v : zo) v /= temperature;
        for (auto& v : zn) v /= temperature;
        std::vector<double> po = softmax(zo), qn = softmax(zn);
        double kl = 0.0;
        for (std::size_t c = 0; c < po.size(); ++c)
            kl += po[c] * (std::log(po[c]) - std::log(qn[c]));
        total += temperature * temperature * kl;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Task-recency bias compensation

std::pair<double, std::size_t> compensation_bias_from_gaps(std::vector<double> gaps, double u,
                                                           bool* tie_adjusted) {
    if (gaps.empty()) throw std::invalid_argument("compensation: empty calibration set");
    if (u < 0.0 || u > 1.0) throw std::invalid_argument("compensation: u must be in [0,1]");
    std::sort(gaps.begin(), gaps.end());
    std::size_t n = gaps.size();
    // round-half-up
    auto k = static_cast<std::size_t>(std::floor(u * static_cast<double>(n) + 0.5));
    if (tie_adjusted) *tie_adjusted = false;

    double c;
    if (k == 0) {
        c = gaps.front() - 1.0;
    } else if (k == n) {
        c = gaps.back() + 1.0;
    } else if (gaps[k] - gaps[k - 1] <= 1e-12) {
        c = gaps[k - 1] + 1e-9;
        if (tie_adjusted) *tie_adjusted = true;
    } else {
        c = 0.5 * (gaps[k - 1] + gaps[k]);
    }
    // flips are samples whose gap is strictly below the bias
    std::size_t flips = 0;
    for (double g : gaps)
        if (g < c) ++flips;
    return {c, flips};
}

CompensationResult compute_compensation(const IcicleModel& model,
                                        const std::vector<const TensorF*>& calib_images,
                                        double u) {
    if (model.heads.size() < 2)
        throw std::invalid_argument("compute_compensation: need at least 2 heads");
    if (calib_images.empty())
        throw std::invalid_argument("compute_compensation: empty calibration set");

    std::size_t n_heads = model.heads.size();
    // per image: max logit per head
    std::vector<std::vector<double>> head_max(calib_images.size(),
                                              std::vector<double>(n_heads));
    for (std::size_t i = 0; i < calib_images.size(); ++i) {
        ModelEval ev = eval_model(model, *calib_images[i]);
        for (std::size_t h = 0; h < n_heads; ++h)
            head_max[i][h] = *std::max_element(ev.heads[h].logits.begin(),
                                               ev.heads[h].logits.end());
    }

    CompensationResult out;
    out.u = u;
    std::size_t n = calib_images.size();
    auto k = static_cast<std::size_t>(std::floor(u * static_cast<double>(n) + 0.5));
    for (std::size_t t = 0; t + 1 < n_heads; ++t) {
        std::vector<double> gaps(n);
        for (std::size_t i = 0; i < n; ++i)
            gaps[i] = head_max[i][n_heads - 1] - head_max[i][t];
        bool tie = false;
        auto [bias, flips] = compensation_bias_from_gaps(gaps, u, &tie);
        out.bias.push_back(bias);
        out.flips.push_back(flips);
        out.targets.push_back(k);
        out.tie_adjusted.push_back(tie);
    }
    return out;
}

std::vector<double> apply_compensation(const IcicleModel& model, std::vector<double> full_logits,
                                       const CompensationResult& comp) {
    if (model.heads.empty() || comp.bias.size() != model.heads.size() - 1)
        throw std::invalid_argument("apply_compensation: head count mismatch");
    if (full_logits.size() != model.total_classes())
        throw std::invalid_argument("apply_compensation: logit size mismatch");
    std::size_t offset = 0;
    for (std::size_t h = 0; h + 1 < model.heads.size(); ++h) {
        for (std::size_t c = 0; c < model.heads[h].num_classes(); ++c)
            full_logits[offset + c] += comp.bias[h];
        offset += model.heads[h].num_classes();
    }
    return full_logits;
}

// ---------------------------------------------------------------------------
// Prototype initialization

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace

std::vector<std::vector<double>> kmeanspp_cluster(const std::vector<std::vector<double>>& points,
                                                  std::size_t k, std::size_t max_iters,
                                                  Rng& rng) {
    if (points.empty() || k == 0) throw std::invalid_argument("kmeanspp_cluster: empty input");
    if (k > points.size()) throw std::invalid_argument("kmeanspp_cluster: k > #points");

    // seeding: first center uniform, then proportional to squared distance
    // to the nearest chosen center
    std::vector<std::vector<double>> centers;
    centers.push_back(points[rng.uniform_index(points.size())]);
    std::vector<double> d2(points.size());
    while (centers.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : centers) best = std::min(best, sq_dist(points[i], c));
            d2[i] = best;
            total += best;
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            double r = rng.uniform() * total;
            double run = 0.0;
            for (std::size_t i = 0; i < points.size(); ++i) {
                run += d2[i];
                if (r < run) {
                    pick = i;
                    break;
                }
                pick = i;
            }
        } else {
            // all points coincide with a center; any unpicked point works
            pick = rng.uniform_index(points.size());
        }
        centers.push_back(points[pick]);
    }

    // Lloyd iterations; the objective is non-increasing
    std::vector<std::size_t> assign(points.size(), 0);
    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < points.size(); ++i) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < centers.size(); ++c) {
                double d = sq_dist(points[i], centers[c]);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;
        std::vector<std::vector<double>> sums(k, std::vector<double>(points[0].size(), 0.0));
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < points.size(); ++i) {
            ++counts[assign[i]];
            for (std::size_t j = 0; j < points[i].size(); ++j)
                sums[assign[i]][j] += points[i][j];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                // claim the point farthest from its current center
                std::size_t far = 0;
                double far_d = -1.0;
                for (std::size_t i = 0; i < points.size(); ++i) {
                    double d = sq_dist(points[i], centers[assign[i]]);
                    if (d > far_d) {
                        far_d = d;
                        far = i;
                    }
                }
                centers[c] = points[far];
                assign[far] = c;
            } else {
                for (std::size_t j = 0; j < sums[c].size(); ++j)
                    centers[c][j] = sums[c][j] / static_cast<double>(counts[c]);
            }
        }
    }
    return centers;
}

TensorF init_prototypes(const IcicleModel& model, const std::vector<const TensorF*>& task_images,
                        std::size_t num_protos, const InitConfig& cfg, Rng& rng) {
    cfg.validate();
    std::size_t d = model.cfg.proto_dim;
    if (num_protos == 0) throw std::invalid_argument("init_prototypes: num_protos must be > 0");

    InitStrategy strategy = cfg.strategy;
    bool has_old = !model.heads.empty();
    if (!has_old && (strategy == InitStrategy::proximity || strategy == InitStrategy::distant))
        strategy = cfg.first_task_random ? InitStrategy::random : InitStrategy::all;

    if (strategy == InitStrategy::random) {
        TensorF protos({num_protos, d});
        for (auto& v : protos.data) v = rng.uniform();
        return protos;
    }

    if (task_images.empty()) throw std::invalid_argument("init_prototypes: empty task data");

    // latent patches of the task data
    std::vector<std::vector<double>> patches;
    for (const TensorF* img : task_images) {
        FeatureMap fm = forward_features(model, *img);
        for (std::size_t cell = 0; cell < fm.cells(); ++cell)
            patches.emplace_back(fm.patch(cell), fm.patch(cell) + fm.d);
    }

    std::vector<std::vector<double>> candidates;
    if (strategy == InitStrategy::all) {
        candidates = std::move(patches);
    } else {
        // max similarity of each patch to any existing prototype
        std::vector<double> stat(patches.size(), 0.0);
        for (std::size_t i = 0; i < patches.size(); ++i) {
            double best = -std::numeric_limits<double>::infinity();
            for (const auto& head : model.heads)
                for (std::size_t p = 0; p < head.num_protos(); ++p) {
                    double dist = patch_distance(patches[i].data(),
                                                 &head.prototypes.data[p * d], d);
                    best = std::max(best, similarity(dist, model.cfg.eta));
                }
            stat[i] = best;
        }
        std::vector<double> sorted = stat;
        std::sort(sorted.begin(), sorted.end());
        auto qidx = static_cast<std::size_t>(
            std::floor(cfg.alpha * static_cast<double>(sorted.size() - 1)));
        double threshold = sorted[qidx];
        for (std::size_t i = 0; i < patches.size(); ++i) {
            bool keep = strategy == InitStrategy::proximity ? stat[i] >= threshold
                                                            : stat[i] <= threshold;
            if (keep) candidates.push_back(patches[i]);
        }
    }

    if (candidates.empty()) throw std::invalid_argument("init_prototypes: no candidate patches");
    while (candidates.size() < num_protos) {
        // not enough candidates: duplicate with small jitter to keep counts exact
        std::vector<double> extra = candidates[rng.uniform_index(candidates.size())];
        for (auto& v : extra) v += rng.uniform(-1e-3, 1e-3);
        candidates.push_back(std::move(extra));
    }

    auto centers = kmeanspp_cluster(candidates, num_protos, cfg.max_cluster_iters, rng);
    TensorF protos({num_protos, d});
    for (std::size_t i = 0; i < num_protos; ++i)
        for (std::size_t j = 0; j < d; ++j) protos.data[i * d + j] = centers[i][j];
    return protos;
}

// ---------------------------------------------------------------------------
// Engine

struct ContinualEngine::TaskData {
    const Dataset* data = nullptr;
    const TaskSpec* task = nullptr;
    std::vector<BatchItem> train, val;
    std::vector<std::unique_ptr<SnapTeacher>> teachers;
    std::map<int, std::vector<const TensorF*>> train_by_class;  // current task only
    LossWeights weights;
    AuxTerms aux;
    bool trainable_backbone = true;  // joint phase only; false for freezing
};

ContinualEngine::ContinualEngine(const ModelConfig& model_cfg, const EngineConfig& cfg)
    : cfg_(cfg), model_(IcicleModel::build(model_cfg, cfg.seed)), rng_(cfg.seed ^ 0x9e3779b97f4a7c15ull) {
    cfg_.schedule.validate();
    cfg_.mask.validate();
}

ContinualEngine::~ContinualEngine() = default;

std::vector<EpochLog> ContinualEngine::train_task(const Dataset& data, const TaskSpec& task) {
    for (const auto& head : model_.heads)
        for (int c : head.classes)
            for (int nc : task.classes)
                if (c == nc)
                    throw std::invalid_argument("train_task: class " + std::to_string(c) +
                                                " already trained");
    if (task.split.train.empty() || task.split.val.empty())
        throw std::invalid_argument("train_task: empty split");

    pre_task_ = snapshot(model_, task.task_id);

    // new-task prototype initialization; baselines default to random, the
    // strategy is config-driven
    std::vector<const TensorF*> train_imgs;
    for (std::size_t idx : task.split.train) train_imgs.push_back(&data.images[idx]);
    std::size_t m = model_.cfg.protos_per_class * task.classes.size();
    TensorF protos = init_prototypes(model_, train_imgs, m, cfg_.init, rng_);
    model_.heads.push_back(PrototypeHead::make(task.task_id, task.classes,
                                               model_.cfg.protos_per_class, std::move(protos)));
    seen_tasks_.push_back(task);

    TaskData td;
    td.data = &data;
    td.task = &task;
    td.weights = cfg_.weights;
    if (cfg_.method.method != Method::icicle || !cfg_.use_ir) td.weights.ir = 0.0;
    if (cfg_.method.method == Method::lwf) {
        td.aux.lwf_weight = cfg_.method.lwf_lambda;
        td.aux.lwf_temperature = cfg_.method.lwf_temperature;
    }
    td.trainable_backbone = cfg_.method.method != Method::freezing;

    auto add_items = [&](const TaskSpec& t, const std::vector<std::size_t>& idxs,
                         std::vector<BatchItem>& out) {
        for (std::size_t idx : idxs) {
            BatchItem item;
            item.image = &data.images[idx];
            item.label = data.labels[idx];
            out.push_back(item);
        }
        (void)t;
    };
    if (cfg_.method.method == Method::joint) {
        for (const TaskSpec& t : seen_tasks_) {
            add_items(t, t.split.train, td.train);
            add_items(t, t.split.val, td.val);
        }
    } else {
        add_items(task, task.split.train, td.train);
        add_items(task, task.split.val, td.val);
    }
    for (std::size_t idx : task.split.train)
        td.train_by_class[data.labels[idx]].push_back(&data.images[idx]);

    bool need_teachers = !pre_task_->model.heads.empty() &&
                         (td.weights.ir != 0.0 || td.aux.lwf_weight != 0.0);
    if (need_teachers) {
        for (auto* items : {&td.train, &td.val})
            for (BatchItem& item : *items) {
                td.teachers.push_back(
                    std::make_unique<SnapTeacher>(make_teacher(*pre_task_, *item.image, cfg_.mask)));
                item.teacher = td.teachers.back().get();
            }
    }

    std::vector<EpochLog> log;
    std::size_t global_epoch = 0;
    run_phase(td, "warmup", cfg_.schedule.warmup_epochs, log, global_epoch);
    run_phase(td, "joint", cfg_.schedule.joint_epochs, log, global_epoch);

    if (global_epoch > 0 && cfg_.schedule.final_projection) project_current_head(td);

    episode_snapshots_.push_back(snapshot(model_, task.task_id));
    if (cfg_.method.method == Method::ewc) ewc_accumulate(ewc_, model_, td.train);
    return log;
}

void ContinualEngine::project_current_head(const TaskData& td) {
    project_prototypes(model_, model_.heads.size() - 1, td.train_by_class);
}

double ContinualEngine::epoch_loss(const TaskData& td, const std::vector<std::size_t>& order,
                                   bool train) {
    const Snapshot* snap = pre_task_ ? &*pre_task_ : nullptr;
    double alpha = cfg_.method.method == Method::ewc ? cfg_.method.ewc_alpha : 0.0;
    const std::vector<BatchItem>& items = train ? td.train : td.val;

    double total = 0.0;
    std::size_t done = 0;
    while (done < order.size()) {
        std::size_t bs = std::min(cfg_.schedule.batch_size, order.size() - done);
        std::vector<BatchItem> batch;
        batch.reserve(bs);
        for (std::size_t i = 0; i < bs; ++i) batch.push_back(items[order[done + i]]);
        done += bs;

        if (train) model_.zero_grads();
        LossBreakdown lb = total_loss(model_, snap, batch, td.weights, cfg_.mask,
                                      cfg_.placement, train, td.aux);
        double loss = lb.total;
        if (alpha != 0.0 && !ewc_.empty()) {
            loss += alpha * ewc_penalty(ewc_, model_);
            if (train) ewc_penalty_backward(ewc_, model_, alpha);
        }
        total += loss * static_cast<double>(bs);
        if (train && opt_) opt_->step();
    }
    return total / static_cast<double>(order.size());
}

void ContinualEngine::run_phase(const TaskData& td, const std::string& phase,
                                std::size_t epochs, std::vector<EpochLog>& log,
                                std::size_t& global_epoch) {
    if (epochs == 0) return;
    bool joint = phase == "joint";

    opt_ = std::make_unique<AdamState>();
    AdamParams head_hp;
    head_hp.lr = cfg_.schedule.lr_head;
    AdamParams shared_hp = head_hp;
    shared_hp.weight_decay = joint ? cfg_.schedule.weight_decay : 0.0;
    AdamParams backbone_hp = shared_hp;
    backbone_hp.lr = episode_snapshots_.empty() ? cfg_.schedule.lr_backbone_first
                                                : cfg_.schedule.lr_backbone;
    AdamParams proto_hp = head_hp;
    if (joint && cfg_.schedule.decay_prototypes)
        proto_hp.weight_decay = cfg_.schedule.weight_decay;

    // freezing trains the first task normally, then pins the extractor and
    // every old head
    bool frozen = cfg_.method.method == Method::freezing && !episode_snapshots_.empty();
    if (!frozen) {
        if (joint)
            for (auto& layer : model_.backbone) {
                opt_->register_param(&layer.w, backbone_hp);
                opt_->register_param(&layer.b, backbone_hp);
            }
        opt_->register_param(&model_.addon1.w, shared_hp);
        opt_->register_param(&model_.addon1.b, shared_hp);
        opt_->register_param(&model_.addon2.w, shared_hp);
        opt_->register_param(&model_.addon2.b, shared_hp);
    }
    // new head always trains; old prototypes join in the joint phase for
    // every method except freezing
    opt_->register_param(&model_.heads.back().prototypes, proto_hp);
    if (joint && !frozen && cfg_.schedule.train_old_prototypes)
        for (std::size_t h = 0; h + 1 < model_.heads.size(); ++h)
            opt_->register_param(&model_.heads[h].prototypes, proto_hp);

    std::vector<std::size_t> order(td.train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::size_t> val_order(td.val.size());
    std::iota(val_order.begin(), val_order.end(), 0);

    double best_val = std::numeric_limits<double>::infinity();
    IcicleModel best_model = model_;
    std::size_t bad_epochs = 0;

    for (std::size_t e = 1; e <= epochs; ++e) {
        rng_.shuffle(order);
        double train_loss = epoch_loss(td, order, true);
        double val_loss = epoch_loss(td, val_order, false);
        ++global_epoch;

        bool projected = false;
        if (global_epoch % cfg_.schedule.projection_period == 0) {
            project_current_head(td);
            val_loss = epoch_loss(td, val_order, false);
            projected = true;
        }

        log.push_back({td.task->task_id, global_epoch, phase, train_loss, val_loss, projected});

        if (joint) {
            if (val_loss < best_val) {
                best_val = val_loss;
                best_model = model_;
                bad_epochs = 0;
            } else {
                ++bad_epochs;
            }
            if (bad_epochs >= cfg_.schedule.patience) break;
            if (e % cfg_.schedule.lr_halve_every == 0) opt_->scale_lr(0.5);
        }
    }
    if (joint && std::isfinite(best_val)) model_ = std::move(best_model);
    opt_.reset();
}

}  // namespace icicle
