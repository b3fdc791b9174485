#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icicle/continual.hpp"
#include "icicle/data.hpp"
#include "icicle/model.hpp"

namespace icicle {

// Accuracy of every seen task's test split after one learning episode,
// task-aware (argmax restricted to the true task's head) and task-agnostic
// (argmax over the full concatenated logits, optionally compensated).
struct EvalReport {
    int episode = 0;
    std::vector<int> task_ids;
    std::vector<double> taw;
    std::vector<double> tag;
    std::vector<double> tag_comp;  // empty when no compensation was applied
    double taw_avg = 0.0;
    double tag_avg = 0.0;
    double tag_comp_avg = 0.0;
};

EvalReport evaluate_tasks(const IcicleModel& model, const Dataset& data,
                          const std::vector<TaskSpec>& tasks,
                          const CompensationResult* comp = nullptr);

// Unweighted mean of per-task accuracies measured after the final task.
double average_incremental_accuracy(const std::vector<double>& per_task_acc);

// Mean absolute difference between two similarity maps of equal shape.
double icd_from_maps(const std::vector<double>& a, const std::vector<double>& b);

// Drift of one prototype: snapshot map computed end-to-end through the
// snapshot, current map end-to-end through the current model.
double icd(const Snapshot& snap, const IcicleModel& model, const TensorF& image,
           std::size_t head, std::size_t proto);

// 1 for cells strictly above the map's own nearest-rank percentile value.
std::vector<std::uint8_t> binarize_top_percentile(const std::vector<double>& map,
                                                  double percentile);

// IoU of the two percentile-binarized maps; 1 when both masks are empty.
double iou_drift(const std::vector<double>& a, const std::vector<double>& b,
                 double percentile = 95.0);

// Mean drift of every prototype the reference snapshot knows about,
// averaged over a fixed probe set.
struct DriftReport {
    double percentile = 95.0;
    std::vector<int> head_task_ids;
    std::vector<std::vector<double>> proto_icd;  // [head][proto]
    std::vector<std::vector<double>> proto_iou;
    // prototype-count-weighted means over all old prototypes
    double mean_icd = 0.0;
    double mean_iou = 1.0;
};

DriftReport drift_between(const Snapshot& ref, const IcicleModel& current,
                          const std::vector<const TensorF*>& probe,
                          double percentile = 95.0);

// Episode-by-task drift matrix: cell (e, k) compares task k's prototypes
// right after task k against their state after episode e, so the diagonal is
// the self-comparison (IoU 1, ICD 0).
struct DriftTable {
    double percentile = 95.0;
    std::vector<std::vector<double>> iou;  // [episode][task], task <= episode
    std::vector<std::vector<double>> icd;
    std::vector<double> column_mean_iou;     // per task, over strictly later episodes
    std::vector<std::size_t> column_protos;  // prototype count per task column
    double weighted_mean_iou = 1.0;          // prototype-count-weighted column mean
    double unweighted_mean_iou = 1.0;
};

DriftTable drift_table(const std::vector<Snapshot>& episodes,
                       const std::vector<const TensorF*>& probe,
                       double percentile = 95.0);

// Minimal CSV emission (RFC-style quoting) used for the report tables.
std::string csv_field(const std::string& s);
void write_csv(const std::string& path, const std::vector<std::vector<std::string>>& rows);

}  // namespace icicle
