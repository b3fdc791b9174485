#pragma once

#include <functional>
#include <string>
#include <vector>

#include "icicle/config.hpp"
#include "icicle/continual.hpp"
#include "icicle/metrics.hpp"

namespace icicle {

struct EpisodeResult {
    int task_id = 0;
    std::vector<EpochLog> log;
    EvalReport eval;
    bool has_comp = false;
    CompensationResult comp;
    bool has_drift = false;
    DriftReport drift;  // old prototypes: pre-task snapshot vs post-task model
};

struct ExperimentResult {
    RunConfig cfg;
    std::vector<TaskSpec> tasks;
    std::vector<std::vector<std::size_t>> probe_indices;  // per task, fixed across episodes
    std::vector<EpisodeResult> episodes;
    DriftTable table;
    IcicleModel final_model;
    double final_taw_avg = 0.0;
    double final_tag_avg = 0.0;
    double final_tag_comp_avg = 0.0;
    bool aborted = false;
    std::string abort_reason;
};

// Trains the task stream sequentially; after each task evaluates every seen
// task, recomputes compensation, and measures drift against the pre-task
// snapshot. A training failure (e.g. non-finite loss) marks the result
// aborted instead of throwing, so partial reports can be flushed.
using EpisodeCallback = std::function<void(const ExperimentResult&)>;
ExperimentResult run_experiment(const RunConfig& cfg, const Dataset& data,
                                const TaskStream& stream, const EpisodeCallback& on_episode = {});

// Generates (or loads) the dataset per the config, splits tasks, runs.
ExperimentResult run_experiment(const RunConfig& cfg, const EpisodeCallback& on_episode = {});

// Deterministic fixed-key-order JSON metrics document. Wall-clock time is
// deliberately excluded (reruns must be byte-identical); timing goes to a
// sidecar file.
std::string metrics_document_json(const ExperimentResult& res);

// metrics.json + accuracy/drift CSV tables under out_dir (created if absent).
void write_reports(const ExperimentResult& res, const std::string& out_dir);

}  // namespace icicle
