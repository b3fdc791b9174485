#include "icicle/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace icicle {

namespace {

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

EvalReport evaluate_tasks(const IcicleModel& model, const Dataset& data,
                          const std::vector<TaskSpec>& tasks,
                          const CompensationResult* comp) {
    EvalReport rep;
    rep.episode = static_cast<int>(tasks.size());
    std::vector<int> global = model.global_classes();

    for (const TaskSpec& task : tasks) {
        // locate this task's head
        std::size_t head_idx = model.heads.size();
        for (std::size_t h = 0; h < model.heads.size(); ++h)
            if (model.heads[h].task_id == task.task_id) head_idx = h;
        if (head_idx == model.heads.size())
            throw std::invalid_argument("evaluate_tasks: task " + std::to_string(task.task_id) +
                                        " not covered by the model");
        const PrototypeHead& head = model.heads[head_idx];
        std::size_t offset = 0;
        for (std::size_t h = 0; h < head_idx; ++h) offset += model.heads[h].num_classes();

        std::size_t n = task.split.test.size();
        if (n == 0) throw std::invalid_argument("evaluate_tasks: empty test split");
        std::size_t hit_taw = 0, hit_tag = 0, hit_comp = 0;
        for (std::size_t idx : task.split.test) {
            int label = data.labels[idx];
            ModelEval ev = eval_model(model, data.images[idx]);

            auto argmax = [](const std::vector<double>& v) {
                return static_cast<std::size_t>(
                    std::max_element(v.begin(), v.end()) - v.begin());
            };
            // task-aware: argmax within the true task's head
            if (head.classes[argmax(ev.heads[head_idx].logits)] == label) ++hit_taw;
            // task-agnostic: argmax over everything
            if (global[argmax(ev.full_logits)] == label) ++hit_tag;
            if (comp) {
                auto adj = apply_compensation(model, ev.full_logits, *comp);
                if (global[argmax(adj)] == label) ++hit_comp;
            }
        }
        rep.task_ids.push_back(task.task_id);
        rep.taw.push_back(static_cast<double>(hit_taw) / static_cast<double>(n));
        rep.tag.push_back(static_cast<double>(hit_tag) / static_cast<double>(n));
        if (comp)
            rep.tag_comp.push_back(static_cast<double>(hit_comp) / static_cast<double>(n));
    }
    rep.taw_avg = mean_of(rep.taw);
    rep.tag_avg = mean_of(rep.tag);
    if (comp) rep.tag_comp_avg = mean_of(rep.tag_comp);
    return rep;
}

double average_incremental_accuracy(const std::vector<double>& per_task_acc) {
    if (per_task_acc.empty())
        throw std::invalid_argument("average_incremental_accuracy: empty input");
    return mean_of(per_task_acc);
}

double icd_from_maps(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || a.size() != b.size())
        throw std::invalid_argument("icd_from_maps: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

double icd(const Snapshot& snap, const IcicleModel& model, const TensorF& image,
           std::size_t head, std::size_t proto) {
    if (head >= snap.model.heads.size() || head >= model.heads.size() ||
        proto >= snap.model.heads[head].num_protos() ||
        proto >= model.heads[head].num_protos())
        throw std::invalid_argument("icd: prototype missing from snapshot or model");
    FeatureMap old_fm = forward_features(snap.model, image);
    FeatureMap new_fm = forward_features(model, image);
    std::size_t d = snap.model.cfg.proto_dim;
    auto old_map = similarity_map(old_fm, &snap.model.heads[head].prototypes.data[proto * d],
                                  snap.model.cfg.eta);
    auto new_map = similarity_map(new_fm, &model.heads[head].prototypes.data[proto * d],
                                  model.cfg.eta);
    return icd_from_maps(old_map, new_map);
}

std::vector<std::uint8_t> binarize_top_percentile(const std::vector<double>& map,
                                                  double percentile) {
    if (map.empty()) throw std::invalid_argument("binarize_top_percentile: empty map");
    if (!(percentile > 0.0 && percentile < 100.0))
        throw std::invalid_argument("binarize_top_percentile: percentile in (0,100)");
    std::vector<double> sorted = map;
    std::sort(sorted.begin(), sorted.end());
    // nearest-rank percentile value; cells strictly above it are set
    auto rank = static_cast<std::size_t>(
        std::ceil(percentile / 100.0 * static_cast<double>(map.size())));
    rank = std::min(std::max<std::size_t>(rank, 1), map.size());
    double threshold = sorted[rank - 1];
    std::vector<std::uint8_t> out(map.size());
    for (std::size_t i = 0; i < map.size(); ++i) out[i] = map[i] > threshold ? 1 : 0;
    return out;
}

double iou_drift(const std::vector<double>& a, const std::vector<double>& b,
                 double percentile) {
    if (a.size() != b.size()) throw std::invalid_argument("iou_drift: shape mismatch");
    auto ma = binarize_top_percentile(a, percentile);
    auto mb = binarize_top_percentile(b, percentile);
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
        inter += ma[i] & mb[i];
        uni += ma[i] | mb[i];
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

DriftReport drift_between(const Snapshot& ref, const IcicleModel& current,
                          const std::vector<const TensorF*>& probe, double percentile) {
    if (probe.empty()) throw std::invalid_argument("drift_between: empty probe set");
    if (ref.model.heads.size() > current.heads.size())
        throw std::invalid_argument("drift_between: current model misses reference heads");

    DriftReport rep;
    rep.percentile = percentile;
    std::size_t d = ref.model.cfg.proto_dim;

    // features once per probe image per model
    std::vector<FeatureMap> ref_fm, cur_fm;
    for (const TensorF* img : probe) {
        ref_fm.push_back(forward_features(ref.model, *img));
        cur_fm.push_back(forward_features(current, *img));
    }

    double icd_sum = 0.0, iou_sum = 0.0;
    std::size_t n_protos = 0;
    for (std::size_t h = 0; h < ref.model.heads.size(); ++h) {
        const PrototypeHead& ref_head = ref.model.heads[h];
        const PrototypeHead& cur_head = current.heads[h];
        if (ref_head.num_protos() != cur_head.num_protos())
            throw std::invalid_argument("drift_between: prototype count mismatch");
        rep.head_task_ids.push_back(ref_head.task_id);
        std::vector<double> picd(ref_head.num_protos(), 0.0), piou(ref_head.num_protos(), 0.0);
        for (std::size_t p = 0; p < ref_head.num_protos(); ++p) {
            double ai = 0.0, au = 0.0;
            for (std::size_t i = 0; i < probe.size(); ++i) {
                auto old_map = similarity_map(ref_fm[i], &ref_head.prototypes.data[p * d],
                                              ref.model.cfg.eta);
                auto new_map = similarity_map(cur_fm[i], &cur_head.prototypes.data[p * d],
                                              current.cfg.eta);
                ai += icd_from_maps(old_map, new_map);
                au += iou_drift(old_map, new_map, percentile);
            }
            picd[p] = ai / static_cast<double>(probe.size());
            piou[p] = au / static_cast<double>(probe.size());
            icd_sum += picd[p];
            iou_sum += piou[p];
            ++n_protos;
        }
        rep.proto_icd.push_back(std::move(picd));
        rep.proto_iou.push_back(std::move(piou));
    }
    if (n_protos > 0) {
        rep.mean_icd = icd_sum / static_cast<double>(n_protos);
        rep.mean_iou = iou_sum / static_cast<double>(n_protos);
    }
    return rep;
}

DriftTable drift_table(const std::vector<Snapshot>& episodes,
                       const std::vector<const TensorF*>& probe, double percentile) {
    if (episodes.empty()) throw std::invalid_argument("drift_table: no episode snapshots");
    DriftTable table;
    table.percentile = percentile;
    std::size_t n = episodes.size();

    // cell (e, k): task-k prototypes compared between snapshot k and snapshot e
    for (std::size_t e = 0; e < n; ++e) {
        std::vector<double> row_iou(e + 1), row_icd(e + 1);
        for (std::size_t k = 0; k <= e; ++k) {
            if (k == e) {
                row_iou[k] = 1.0;
                row_icd[k] = 0.0;
                continue;
            }
            // restrict the reference to head k alone
            Snapshot ref = episodes[k];
            ref.model.heads.erase(ref.model.heads.begin(),
                                  ref.model.heads.begin() + static_cast<std::ptrdiff_t>(k));
            ref.model.heads.resize(1);
            IcicleModel cur = episodes[e].model;
            cur.heads.erase(cur.heads.begin(),
                            cur.heads.begin() + static_cast<std::ptrdiff_t>(k));
            cur.heads.resize(1);
            DriftReport rep = drift_between(ref, cur, probe, percentile);
            row_iou[k] = rep.mean_iou;
            row_icd[k] = rep.mean_icd;
        }
        table.iou.push_back(std::move(row_iou));
        table.icd.push_back(std::move(row_icd));
    }

    double wsum = 0.0, w = 0.0, usum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t protos = episodes[k].model.heads[k].num_protos();
        table.column_protos.push_back(protos);
        double col = 0.0;
        std::size_t rows = 0;
        for (std::size_t e = k + 1; e < n; ++e) {
            col += table.iou[e][k];
            ++rows;
        }
        double col_mean = rows ? col / static_cast<double>(rows) : 1.0;
        table.column_mean_iou.push_back(col_mean);
        wsum += col_mean * static_cast<double>(protos);
        w += static_cast<double>(protos);
        usum += col_mean;
    }
    table.weighted_mean_iou = w > 0.0 ? wsum / w : 1.0;
    table.unweighted_mean_iou = usum / static_cast<double>(n);
    return table;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

void write_csv(const std::string& path, const std::vector<std::vector<std::string>>& rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_csv: cannot open " + path);
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) f << ',';
            f << csv_field(row[i]);
        }
        f << '\n';
    }
    if (!f) throw std::runtime_error("write_csv: write failed for " + path);
}

}  // namespace icicle
