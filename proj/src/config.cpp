#include "icicle/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace icicle {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

[[noreturn]] void bad(const std::string& what, const std::string& detail) {
    throw std::invalid_argument("config: " + what + ": " + detail);
}

double to_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &pos);
    } catch (const std::exception&) {
        bad("bad numeric value for " + key, v);
    }
    if (pos != v.size()) bad("trailing characters in value for " + key, v);
    return x;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    unsigned long long x = 0;
    try {
        x = std::stoull(v, &pos);
    } catch (const std::exception&) {
        bad("bad integer value for " + key, v);
    }
    if (pos != v.size()) bad("trailing characters in value for " + key, v);
    return x;
}

std::size_t to_size(const std::string& key, const std::string& v) {
    return static_cast<std::size_t>(to_u64(key, v));
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    bad("bad boolean value for " + key + " (want true/false)", v);
}

}  // namespace

void RunConfig::validate() const {
    synth.validate();
    model.validate();
    schedule.validate();
    mask.validate();
    init.validate();
    if (num_tasks == 0) bad("num_tasks", "must be >= 1");
    if (compensation_u < 0.0 || compensation_u > 1.0) bad("eval.u", "must be in [0,1]");
    if (!(drift_percentile > 0.0 && drift_percentile < 100.0))
        bad("eval.drift_percentile", "must be in (0,100)");
    if (probe_per_task == 0) bad("eval.probe_per_task", "must be >= 1");
    if (weights.ce <= 0.0) bad("loss.lambda_ce", "must be > 0");
}

RunConfig parse_config_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::vector<std::string> order;  // for duplicate detection messages
    std::string section;
    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = raw;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') bad("malformed section header", raw);
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) bad("empty section name", raw);
            if (section != "data" && section != "model" && section != "train" &&
                section != "loss" && section != "init" && section != "eval" && section != "run")
                bad("unknown section", raw);
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) bad("expected key = value", raw);
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) bad("empty key", raw);
        if (section.empty()) bad("key outside any [section]", raw);
        std::string full = section + "." + key;
        if (kv.count(full)) bad("duplicate key", full);
        kv[full] = value;
        order.push_back(full);
    }

    RunConfig cfg;
    // the task count fixes the schedule regime before explicit overrides
    if (auto it = kv.find("data.num_tasks"); it != kv.end())
        cfg.num_tasks = to_size("data.num_tasks", it->second);
    cfg.schedule = schedule_for_task_count(cfg.num_tasks);

    for (const std::string& full : order) {
        const std::string& v = kv[full];
        if (full == "data.num_tasks") continue;  // consumed above
        else if (full == "data.dataset") cfg.dataset_path = v;
        else if (full == "data.num_classes") cfg.synth.num_classes = to_size(full, v);
        else if (full == "data.samples_per_class") cfg.synth.samples_per_class = to_size(full, v);
        else if (full == "data.noise_sigma") cfg.synth.noise_sigma = to_double(full, v);
        else if (full == "data.parts_per_image") cfg.synth.parts_per_image = to_size(full, v);
        else if (full == "data.distinct_parts") cfg.synth.distinct_parts = to_size(full, v);
        else if (full == "data.glyph_library") cfg.synth.glyph_library = to_size(full, v);
        else if (full == "data.seed") cfg.data_seed = to_u64(full, v);
        else if (full == "model.proto_dim") cfg.model.proto_dim = to_size(full, v);
        else if (full == "model.protos_per_class") cfg.model.protos_per_class = to_size(full, v);
        else if (full == "model.eta") cfg.model.eta = to_double(full, v);
        else if (full == "train.method") cfg.method.method = method_from_string(v);
        else if (full == "train.warmup_epochs") cfg.schedule.warmup_epochs = to_size(full, v);
        else if (full == "train.joint_epochs") cfg.schedule.joint_epochs = to_size(full, v);
        else if (full == "train.projection_period") cfg.schedule.projection_period = to_size(full, v);
        else if (full == "train.patience") cfg.schedule.patience = to_size(full, v);
        else if (full == "train.lr_halve_every") cfg.schedule.lr_halve_every = to_size(full, v);
        else if (full == "train.lr_backbone") cfg.schedule.lr_backbone = to_double(full, v);
        else if (full == "train.lr_backbone_first") cfg.schedule.lr_backbone_first = to_double(full, v);
        else if (full == "train.lr_head") cfg.schedule.lr_head = to_double(full, v);
        else if (full == "train.weight_decay") cfg.schedule.weight_decay = to_double(full, v);
        else if (full == "train.decay_prototypes") cfg.schedule.decay_prototypes = to_bool(full, v);
        else if (full == "train.batch_size") cfg.schedule.batch_size = to_size(full, v);
        else if (full == "train.final_projection") cfg.schedule.final_projection = to_bool(full, v);
        else if (full == "train.train_old_prototypes") cfg.schedule.train_old_prototypes = to_bool(full, v);
        else if (full == "train.ewc_alpha") cfg.method.ewc_alpha = to_double(full, v);
        else if (full == "train.lwf_lambda") cfg.method.lwf_lambda = to_double(full, v);
        else if (full == "train.lwf_temperature") cfg.method.lwf_temperature = to_double(full, v);
        else if (full == "loss.lambda_ce") cfg.weights.ce = to_double(full, v);
        else if (full == "loss.lambda_clst") cfg.weights.clst = to_double(full, v);
        else if (full == "loss.lambda_sep") cfg.weights.sep = to_double(full, v);
        else if (full == "loss.lambda_ir") cfg.weights.ir = to_double(full, v);
        else if (full == "loss.gamma") cfg.mask.gamma = to_double(full, v);
        else if (full == "loss.placement") cfg.placement = placement_from_string(v);
        else if (full == "loss.use_ir") cfg.use_ir = to_bool(full, v);
        else if (full == "init.strategy") cfg.init.strategy = init_strategy_from_string(v);
        else if (full == "init.alpha") cfg.init.alpha = to_double(full, v);
        else if (full == "init.max_cluster_iters") cfg.init.max_cluster_iters = to_size(full, v);
        else if (full == "init.first_task_random") cfg.init.first_task_random = to_bool(full, v);
        else if (full == "eval.compensation") cfg.compensation = to_bool(full, v);
        else if (full == "eval.u") cfg.compensation_u = to_double(full, v);
        else if (full == "eval.drift_percentile") cfg.drift_percentile = to_double(full, v);
        else if (full == "eval.probe_per_task") cfg.probe_per_task = to_size(full, v);
        else if (full == "run.seed") cfg.seed = to_u64(full, v);
        else if (full == "run.out_dir") cfg.out_dir = v;
        else bad("unknown key", full);
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_config_text(buf.str());
}

std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream out;
    out << "[data]\n";
    out << "dataset = " << cfg.dataset_path << "\n";
    out << "num_classes = " << cfg.synth.num_classes << "\n";
    out << "samples_per_class = " << cfg.synth.samples_per_class << "\n";
    out << "noise_sigma = " << fmt_double(cfg.synth.noise_sigma) << "\n";
    out << "parts_per_image = " << cfg.synth.parts_per_image << "\n";
    out << "distinct_parts = " << cfg.synth.distinct_parts << "\n";
    out << "glyph_library = " << cfg.synth.glyph_library << "\n";
    out << "num_tasks = " << cfg.num_tasks << "\n";
    out << "seed = " << cfg.data_seed << "\n";
    out << "\n[model]\n";
    out << "proto_dim = " << cfg.model.proto_dim << "\n";
    out << "protos_per_class = " << cfg.model.protos_per_class << "\n";
    out << "eta = " << fmt_double(cfg.model.eta) << "\n";
    out << "\n[train]\n";
    out << "method = " << to_string(cfg.method.method) << "\n";
    out << "warmup_epochs = " << cfg.schedule.warmup_epochs << "\n";
    out << "joint_epochs = " << cfg.schedule.joint_epochs << "\n";
    out << "projection_period = " << cfg.schedule.projection_period << "\n";
    out << "patience = " << cfg.schedule.patience << "\n";
    out << "lr_halve_every = " << cfg.schedule.lr_halve_every << "\n";
    out << "lr_backbone = " << fmt_double(cfg.schedule.lr_backbone) << "\n";
    out << "lr_backbone_first = " << fmt_double(cfg.schedule.lr_backbone_first) << "\n";
    out << "lr_head = " << fmt_double(cfg.schedule.lr_head) << "\n";
    out << "weight_decay = " << fmt_double(cfg.schedule.weight_decay) << "\n";
    out << "decay_prototypes = " << (cfg.schedule.decay_prototypes ? "true" : "false") << "\n";
    out << "batch_size = " << cfg.schedule.batch_size << "\n";
    out << "final_projection = " << (cfg.schedule.final_projection ? "true" : "false") << "\n";
    out << "train_old_prototypes = " << (cfg.schedule.train_old_prototypes ? "true" : "false")
        << "\n";
    out << "ewc_alpha = " << fmt_double(cfg.method.ewc_alpha) << "\n";
    out << "lwf_lambda = " << fmt_double(cfg.method.lwf_lambda) << "\n";
    out << "lwf_temperature = " << fmt_double(cfg.method.lwf_temperature) << "\n";
    out << "\n[loss]\n";
    out << "lambda_ce = " << fmt_double(cfg.weights.ce) << "\n";
    out << "lambda_clst = " << fmt_double(cfg.weights.clst) << "\n";
    out << "lambda_sep = " << fmt_double(cfg.weights.sep) << "\n";
    out << "lambda_ir = " << fmt_double(cfg.weights.ir) << "\n";
    out << "gamma = " << fmt_double(cfg.mask.gamma) << "\n";
    out << "placement = " << to_string(cfg.placement) << "\n";
    out << "use_ir = " << (cfg.use_ir ? "true" : "false") << "\n";
    out << "\n[init]\n";
    out << "strategy = " << to_string(cfg.init.strategy) << "\n";
    out << "alpha = " << fmt_double(cfg.init.alpha) << "\n";
    out << "max_cluster_iters = " << cfg.init.max_cluster_iters << "\n";
    out << "first_task_random = " << (cfg.init.first_task_random ? "true" : "false") << "\n";
    out << "\n[eval]\n";
    out << "compensation = " << (cfg.compensation ? "true" : "false") << "\n";
    out << "u = " << fmt_double(cfg.compensation_u) << "\n";
    out << "drift_percentile = " << fmt_double(cfg.drift_percentile) << "\n";
    out << "probe_per_task = " << cfg.probe_per_task << "\n";
    out << "\n[run]\n";
    out << "seed = " << cfg.seed << "\n";
    out << "out_dir = " << cfg.out_dir << "\n";
    return out.str();
}

bool config_equal(const RunConfig& a, const RunConfig& b) {
    return serialize_config(a) == serialize_config(b);
}

}  // namespace icicle
