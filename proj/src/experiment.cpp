#include "icicle/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace icicle {

namespace {

using ordered_json = nlohmann::ordered_json;

std::vector<const TensorF*> probe_images(const Dataset& data, const ExperimentResult& res,
                                         std::size_t first_task, std::size_t last_task) {
    std::vector<const TensorF*> out;
    for (std::size_t t = first_task; t < last_task; ++t)
        for (std::size_t idx : res.probe_indices[t]) out.push_back(&data.images[idx]);
    return out;
}

std::string fmt(double v) { return ordered_json(v).dump(); }

}  // namespace

ExperimentResult run_experiment(const RunConfig& cfg, const Dataset& data,
                                const TaskStream& stream, const EpisodeCallback& on_episode) {
    cfg.validate();
    ExperimentResult res;
    res.cfg = cfg;
    res.tasks = stream.tasks;

    // fixed probe sample of each task's test split, constant across episodes
    for (const TaskSpec& task : stream.tasks) {
        Rng probe_rng(cfg.seed * 0x100000001b3ull + static_cast<std::uint64_t>(task.task_id));
        std::vector<std::size_t> idx = task.split.test;
        probe_rng.shuffle(idx);
        idx.resize(std::min(cfg.probe_per_task, idx.size()));
        res.probe_indices.push_back(std::move(idx));
    }

    ModelConfig model_cfg = cfg.model;
    model_cfg.image_h = data.h;
    model_cfg.image_w = data.w;
    model_cfg.image_c = data.c;

    EngineConfig ecfg;
    ecfg.method = cfg.method;
    ecfg.schedule = cfg.schedule;
    ecfg.weights = cfg.weights;
    ecfg.mask = cfg.mask;
    ecfg.placement = cfg.placement;
    ecfg.init = cfg.init;
    ecfg.use_ir = cfg.use_ir;
    ecfg.use_compensation = cfg.compensation;
    ecfg.compensation_u = cfg.compensation_u;
    ecfg.seed = cfg.seed;

    ContinualEngine engine(model_cfg, ecfg);

    for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
        const TaskSpec& task = stream.tasks[t];
        EpisodeResult ep;
        ep.task_id = task.task_id;
        try {
            ep.log = engine.train_task(data, task);
        } catch (const std::exception& e) {
            res.aborted = true;
            res.abort_reason = e.what();
            res.final_model = engine.model();
            return res;
        }

        if (cfg.compensation && engine.model().heads.size() >= 2) {
            std::vector<const TensorF*> calib;
            for (std::size_t idx : task.split.val) calib.push_back(&data.images[idx]);
            ep.comp = compute_compensation(engine.model(), calib, cfg.compensation_u);
            ep.has_comp = true;
        }

        std::vector<TaskSpec> seen(stream.tasks.begin(),
                                   stream.tasks.begin() + static_cast<std::ptrdiff_t>(t + 1));
        ep.eval = evaluate_tasks(engine.model(), data, seen,
                                 ep.has_comp ? &ep.comp : nullptr);

        const Snapshot* pre = engine.pre_task_snapshot();
        if (pre && !pre->model.heads.empty()) {
            auto probe = probe_images(data, res, 0, t);
            if (!probe.empty()) {
                ep.drift = drift_between(*pre, engine.model(), probe, cfg.drift_percentile);
                ep.has_drift = true;
            }
        }

        res.episodes.push_back(std::move(ep));
        if (on_episode) on_episode(res);
    }

    auto all_probe = probe_images(data, res, 0, stream.tasks.size());
    res.table = drift_table(engine.episode_snapshots(), all_probe, cfg.drift_percentile);
    res.final_model = engine.model();

    const EvalReport& last = res.episodes.back().eval;
    res.final_taw_avg = last.taw_avg;
    res.final_tag_avg = last.tag_avg;
    res.final_tag_comp_avg = res.episodes.back().has_comp ? last.tag_comp_avg : last.tag_avg;
    return res;
}

ExperimentResult run_experiment(const RunConfig& cfg, const EpisodeCallback& on_episode) {
    Dataset data = cfg.dataset_path.empty() ? generate_synthetic(cfg.synth, cfg.data_seed)
                                            : load_dataset(cfg.dataset_path);
    TaskStream stream = split_tasks(data, cfg.num_tasks, cfg.data_seed);
    return run_experiment(cfg, data, stream, on_episode);
}

std::string metrics_document_json(const ExperimentResult& res) {
    ordered_json doc;
    doc["schema_version"] = 1;
    doc["config_echo"] = serialize_config(res.cfg);
    doc["seed"] = res.cfg.seed;
    doc["data_seed"] = res.cfg.data_seed;
    doc["method"] = to_string(res.cfg.method.method);

    ordered_json tasks = ordered_json::array();
    for (const TaskSpec& t : res.tasks) {
        ordered_json jt;
        jt["task_id"] = t.task_id;
        jt["classes"] = t.classes;
        jt["train"] = t.split.train.size();
        jt["val"] = t.split.val.size();
        jt["test"] = t.split.test.size();
        tasks.push_back(jt);
    }
    doc["tasks"] = tasks;

    ordered_json episodes = ordered_json::array();
    for (const EpisodeResult& ep : res.episodes) {
        ordered_json je;
        je["task_id"] = ep.task_id;

        ordered_json epochs = ordered_json::array();
        for (const EpochLog& l : ep.log) {
            ordered_json jl;
            jl["epoch"] = l.epoch;
            jl["phase"] = l.phase;
            jl["train_loss"] = l.train_loss;
            jl["val_loss"] = l.val_loss;
            jl["projected"] = l.projected;
            epochs.push_back(jl);
        }
        je["epochs"] = epochs;

        ordered_json ev;
        ev["task_ids"] = ep.eval.task_ids;
        ev["taw"] = ep.eval.taw;
        ev["tag"] = ep.eval.tag;
        ev["taw_avg"] = ep.eval.taw_avg;
        ev["tag_avg"] = ep.eval.tag_avg;
        if (ep.has_comp) {
            ev["tag_comp"] = ep.eval.tag_comp;
            ev["tag_comp_avg"] = ep.eval.tag_comp_avg;
        }
        je["eval"] = ev;

        if (ep.has_comp) {
            ordered_json jc;
            jc["u"] = ep.comp.u;
            jc["bias"] = ep.comp.bias;
            jc["flips"] = ep.comp.flips;
            jc["targets"] = ep.comp.targets;
            jc["tie_adjusted"] = ep.comp.tie_adjusted;
            je["compensation"] = jc;
        }
        if (ep.has_drift) {
            ordered_json jd;
            jd["percentile"] = ep.drift.percentile;
            jd["head_task_ids"] = ep.drift.head_task_ids;
            jd["proto_icd"] = ep.drift.proto_icd;
            jd["proto_iou"] = ep.drift.proto_iou;
            jd["mean_icd"] = ep.drift.mean_icd;
            jd["mean_iou"] = ep.drift.mean_iou;
            je["drift"] = jd;
        }
        episodes.push_back(je);
    }
    doc["episodes"] = episodes;

    if (!res.aborted && !res.episodes.empty()) {
        ordered_json jt;
        jt["percentile"] = res.table.percentile;
        jt["iou"] = res.table.iou;
        jt["icd"] = res.table.icd;
        jt["column_mean_iou"] = res.table.column_mean_iou;
        jt["column_protos"] = res.table.column_protos;
        jt["weighted_mean_iou"] = res.table.weighted_mean_iou;
        jt["unweighted_mean_iou"] = res.table.unweighted_mean_iou;
        doc["drift_table"] = jt;

        ordered_json jf;
        jf["taw_avg"] = res.final_taw_avg;
        jf["tag_avg"] = res.final_tag_avg;
        jf["tag_comp_avg"] = res.final_tag_comp_avg;
        doc["final"] = jf;
    }
    doc["aborted"] = res.aborted;
    if (res.aborted) doc["abort_reason"] = res.abort_reason;
    return doc.dump(2) + "\n";
}

void write_reports(const ExperimentResult& res, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    {
        std::ofstream f(out_dir + "/metrics.json", std::ios::binary);
        if (!f) throw std::runtime_error("write_reports: cannot open metrics.json");
        f << metrics_document_json(res);
    }

    // accuracy tables: header row = episode ids, one row per evaluated task
    auto acc_table = [&](auto getter, bool comp_only) {
        std::vector<std::vector<std::string>> rows;
        std::vector<std::string> header{"task_id"};
        for (const EpisodeResult& ep : res.episodes)
            header.push_back("episode_" + std::to_string(ep.task_id));
        rows.push_back(header);
        for (std::size_t t = 0; t < res.episodes.size(); ++t) {
            const EpisodeResult& last = res.episodes.back();
            std::vector<std::string> row{std::to_string(last.eval.task_ids[t])};
            for (const EpisodeResult& ep : res.episodes) {
                if (t < ep.eval.task_ids.size() && (!comp_only || ep.has_comp))
                    row.push_back(fmt(getter(ep.eval)[t]));
                else
                    row.push_back("");
            }
            rows.push_back(row);
        }
        return rows;
    };
    write_csv(out_dir + "/accuracy_taw.csv",
              acc_table([](const EvalReport& e) -> const std::vector<double>& { return e.taw; },
                        false));
    write_csv(out_dir + "/accuracy_tag.csv",
              acc_table([](const EvalReport& e) -> const std::vector<double>& { return e.tag; },
                        false));
    write_csv(out_dir + "/accuracy_tag_comp.csv",
              acc_table(
                  [](const EvalReport& e) -> const std::vector<double>& { return e.tag_comp; },
                  true));

    if (!res.aborted && !res.table.iou.empty()) {
        for (const char* which : {"iou", "icd"}) {
            const auto& mat = std::string(which) == "iou" ? res.table.iou : res.table.icd;
            std::vector<std::vector<std::string>> rows;
            std::vector<std::string> header{"episode"};
            for (std::size_t k = 0; k < mat.size(); ++k)
                header.push_back("task_" + std::to_string(k + 1));
            rows.push_back(header);
            for (std::size_t e = 0; e < mat.size(); ++e) {
                std::vector<std::string> row{std::to_string(e + 1)};
                for (std::size_t k = 0; k < mat.size(); ++k)
                    row.push_back(k < mat[e].size() ? fmt(mat[e][k]) : "");
                rows.push_back(row);
            }
            write_csv(out_dir + "/drift_table_" + which + ".csv", rows);
        }
    }
}

}  // namespace icicle
