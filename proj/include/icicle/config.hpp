#pragma once

#include <cstdint>
#include <string>

#include "icicle/continual.hpp"
#include "icicle/data.hpp"
#include "icicle/model.hpp"

namespace icicle {

// One experiment run, fully determined by this struct plus the seed. The
// text form is flat `key = value` lines under [section] headers; unknown
// keys are rejected. Schedule fields not given in the file default to the
// task-count regime (schedule_for_task_count).
struct RunConfig {
    // [data] — synthetic generation is used when dataset_path is empty
    std::string dataset_path;
    SyntheticSpec synth;
    std::size_t num_tasks = 4;
    std::uint64_t data_seed = 1;

    // [model]
    ModelConfig model;

    // [train]
    MethodConfig method;
    TrainSchedule schedule;

    // [loss]
    LossWeights weights;
    MaskConfig mask;
    RegPlacement placement = RegPlacement::similarity;
    bool use_ir = true;

    // [init]
    InitConfig init;

    // [eval]
    bool compensation = true;
    double compensation_u = 0.1;
    double drift_percentile = 95.0;
    std::size_t probe_per_task = 20;

    // [run]
    std::uint64_t seed = 1;
    std::string out_dir = "runs/default";

    void validate() const;
};

// Throws std::invalid_argument with the offending line on any malformed
// line, unknown key, or bad value.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);

// Canonical text form: every key written explicitly, fixed order, so
// parse(serialize(c)) reproduces c.
std::string serialize_config(const RunConfig& cfg);

bool config_equal(const RunConfig& a, const RunConfig& b);

}  // namespace icicle
