#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "icicle/checkpoint.hpp"
#include "icicle/config.hpp"
#include "icicle/experiment.hpp"
#include "icicle/gradsuite.hpp"
#include "icicle/metrics.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;   // invalid spec/config/arguments
constexpr int kExitIo = 3;       // I/O failure
constexpr int kExitAbort = 4;    // training aborted (non-finite loss)
constexpr int kExitGrad = 5;     // gradient check failure

std::uint64_t env_seed_default() {
    if (const char* e = std::getenv("ICICLE_SEED")) {
        try {
            return std::stoull(e);
        } catch (const std::exception&) {
            throw std::invalid_argument("ICICLE_SEED is not a valid integer");
        }
    }
    return 1;
}

std::string num(double v) { return nlohmann::ordered_json(v).dump(); }

int cmd_gen_data(const std::string& config_path, std::uint64_t seed, bool seed_given,
                 const std::string& out_path) {
    icicle::RunConfig cfg;
    try {
        if (!config_path.empty()) cfg = icicle::load_config(config_path);
        if (seed_given) cfg.data_seed = seed;
        cfg.synth.validate();
        if (cfg.num_tasks > cfg.synth.num_classes)
            throw std::invalid_argument("num_tasks exceeds num_classes");
    } catch (const std::exception& e) {
        std::cerr << "gen-data: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        icicle::Dataset data = icicle::generate_synthetic(cfg.synth, cfg.data_seed);
        icicle::TaskStream stream = icicle::split_tasks(data, cfg.num_tasks, cfg.data_seed);
        icicle::save_dataset(out_path, data);

        std::ostringstream manifest;
        manifest << "dataset " << out_path << "\n";
        manifest << "classes " << data.num_classes << " samples " << data.size() << " image "
                 << data.h << "x" << data.w << "x" << data.c << "\n";
        manifest << "tasks " << stream.tasks.size() << " data_seed " << cfg.data_seed << "\n";
        for (const icicle::TaskSpec& t : stream.tasks) {
            manifest << "task " << t.task_id << " classes";
            for (int c : t.classes) manifest << " " << c;
            manifest << " train " << t.split.train.size() << " val " << t.split.val.size()
                     << " test " << t.split.test.size() << "\n";
        }
        std::ofstream mf(out_path + ".manifest.txt", std::ios::binary);
        if (!mf) throw std::runtime_error("cannot open manifest for " + out_path);
        mf << manifest.str();
        if (!mf) throw std::runtime_error("manifest write failed");
        std::cout << manifest.str();
    } catch (const std::exception& e) {
        std::cerr << "gen-data: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitOk;
}

void write_heatmaps(const icicle::ExperimentResult& res, const icicle::Dataset& data,
                    const std::string& out_dir) {
    std::filesystem::create_directories(out_dir + "/heatmaps");
    const icicle::IcicleModel& model = res.final_model;
    for (std::size_t h = 0; h < model.heads.size(); ++h) {
        if (h >= res.probe_indices.size() || res.probe_indices[h].empty()) continue;
        const icicle::TensorF& img = data.images[res.probe_indices[h][0]];
        icicle::FeatureMap fm = icicle::forward_features(model, img);
        const icicle::PrototypeHead& head = model.heads[h];
        std::size_t d = model.cfg.proto_dim;
        for (std::size_t p = 0; p < head.num_protos(); ++p) {
            auto map = icicle::similarity_map(fm, &head.prototypes.data[p * d], model.cfg.eta);
            icicle::save_heatmap_pgm(out_dir + "/heatmaps/task" +
                                         std::to_string(head.task_id) + "_proto" +
                                         std::to_string(p) + ".pgm",
                                     map, fm.h, fm.w, model.cfg.eta);
        }
        icicle::save_image_ppm(out_dir + "/heatmaps/task" + std::to_string(head.task_id) +
                                   "_probe.ppm",
                               img);
    }
}

int cmd_train(const std::string& config_path, std::uint64_t seed, bool seed_given,
              const std::string& method_override, const std::string& out_override) {
    icicle::RunConfig cfg;
    try {
        cfg = icicle::load_config(config_path);
        if (seed_given) cfg.seed = seed;
        if (!method_override.empty())
            cfg.method.method = icicle::method_from_string(method_override);
        if (!out_override.empty()) cfg.out_dir = out_override;
        cfg.validate();
    } catch (const std::exception& e) {
        std::cerr << "train: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        auto t0 = std::chrono::steady_clock::now();
        icicle::Dataset data = cfg.dataset_path.empty()
                                   ? icicle::generate_synthetic(cfg.synth, cfg.data_seed)
                                   : icicle::load_dataset(cfg.dataset_path);
        icicle::TaskStream stream = icicle::split_tasks(data, cfg.num_tasks, cfg.data_seed);

        // flush partial reports after every episode so an abort leaves a trail
        auto flush = [&](const icicle::ExperimentResult& partial) {
            icicle::write_reports(partial, cfg.out_dir);
        };
        icicle::ExperimentResult res = icicle::run_experiment(cfg, data, stream, flush);
        icicle::write_reports(res, cfg.out_dir);
        icicle::save_checkpoint(cfg.out_dir + "/model.ickp", res.final_model);
        if (!res.aborted) write_heatmaps(res, data, cfg.out_dir);

        auto t1 = std::chrono::steady_clock::now();
        double secs = std::chrono::duration<double>(t1 - t0).count();
        // wall clock lives in a sidecar so metrics.json stays byte-stable
        std::ofstream tf(cfg.out_dir + "/timing.json", std::ios::binary);
        tf << "{\"wall_clock_seconds\": " << num(secs) << "}\n";

        if (res.aborted) {
            std::cerr << "train: aborted: " << res.abort_reason << "\n";
            return kExitAbort;
        }
        std::cout << "method " << icicle::to_string(cfg.method.method) << " seed " << cfg.seed
                  << " taw_avg " << num(res.final_taw_avg) << " tag_avg "
                  << num(res.final_tag_avg) << " tag_comp_avg " << num(res.final_tag_comp_avg)
                  << "\n";
    } catch (const std::exception& e) {
        std::cerr << "train: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitOk;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_path,
             const std::string& out_path) {
    icicle::RunConfig cfg;
    try {
        cfg = icicle::load_config(config_path);
    } catch (const std::exception& e) {
        std::cerr << "eval: " << e.what() << "\n";
        return kExitConfig;
    }
    try {
        icicle::IcicleModel model = icicle::load_checkpoint(ckpt_path);
        icicle::Dataset data = cfg.dataset_path.empty()
                                   ? icicle::generate_synthetic(cfg.synth, cfg.data_seed)
                                   : icicle::load_dataset(cfg.dataset_path);
        icicle::TaskStream stream = icicle::split_tasks(data, cfg.num_tasks, cfg.data_seed);

        std::vector<icicle::TaskSpec> covered;
        for (const icicle::TaskSpec& t : stream.tasks)
            for (const icicle::PrototypeHead& h : model.heads)
                if (h.task_id == t.task_id) covered.push_back(t);
        if (covered.empty()) throw std::invalid_argument("checkpoint covers no task of the stream");

        icicle::CompensationResult comp;
        bool has_comp = false;
        if (cfg.compensation && model.heads.size() >= 2) {
            std::vector<const icicle::TensorF*> calib;
            for (std::size_t idx : covered.back().split.val) calib.push_back(&data.images[idx]);
            comp = icicle::compute_compensation(model, calib, cfg.compensation_u);
            has_comp = true;
        }
        icicle::EvalReport rep =
            icicle::evaluate_tasks(model, data, covered, has_comp ? &comp : nullptr);

        nlohmann::ordered_json doc;
        doc["task_ids"] = rep.task_ids;
        doc["taw"] = rep.taw;
        doc["tag"] = rep.tag;
        doc["taw_avg"] = rep.taw_avg;
        doc["tag_avg"] = rep.tag_avg;
        if (has_comp) {
            doc["tag_comp"] = rep.tag_comp;
            doc["tag_comp_avg"] = rep.tag_comp_avg;
        }
        std::string text = doc.dump(2) + "\n";
        if (!out_path.empty()) {
            std::ofstream f(out_path, std::ios::binary);
            if (!f) throw std::runtime_error("cannot open " + out_path);
            f << text;
        }
        std::cout << text;
    } catch (const std::invalid_argument& e) {
        std::cerr << "eval: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "eval: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitOk;
}

int cmd_drift(const std::string& path_a, const std::string& path_b,
              const std::string& probe_path, std::size_t max_probe, double percentile,
              const std::string& out_path) {
    try {
        icicle::IcicleModel a = icicle::load_checkpoint(path_a);
        icicle::IcicleModel b = icicle::load_checkpoint(path_b);
        if (a.cfg.proto_dim != b.cfg.proto_dim)
            throw std::invalid_argument("incompatible checkpoints: prototype dimension differs");
        if (a.heads.size() > b.heads.size())
            throw std::invalid_argument("incompatible checkpoints: A has more heads than B");

        icicle::Dataset probe_ds = icicle::load_dataset(probe_path);
        std::vector<const icicle::TensorF*> probe;
        for (std::size_t i = 0; i < probe_ds.size() && i < max_probe; ++i)
            probe.push_back(&probe_ds.images[i]);
        if (probe.empty()) throw std::invalid_argument("probe set is empty");

        icicle::Snapshot ref{a.heads.empty() ? 0 : a.heads.back().task_id, a};
        icicle::DriftReport rep = icicle::drift_between(ref, b, probe, percentile);

        std::vector<std::vector<std::string>> rows;
        rows.push_back({"task_id", "proto", "icd", "iou"});
        for (std::size_t h = 0; h < rep.proto_icd.size(); ++h)
            for (std::size_t p = 0; p < rep.proto_icd[h].size(); ++p)
                rows.push_back({std::to_string(rep.head_task_ids[h]), std::to_string(p),
                                num(rep.proto_icd[h][p]), num(rep.proto_iou[h][p])});
        rows.push_back({"mean", "", num(rep.mean_icd), num(rep.mean_iou)});
        if (!out_path.empty()) {
            icicle::write_csv(out_path, rows);
        } else {
            for (const auto& row : rows) {
                for (std::size_t i = 0; i < row.size(); ++i)
                    std::cout << (i ? "," : "") << icicle::csv_field(row[i]);
                std::cout << "\n";
            }
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "drift: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "drift: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, double tol, std::size_t configs, double h) {
    icicle::GradSuiteReport suite = icicle::run_gradcheck_suite(seed, tol, configs, h);
    std::cout << suite.text();
    return suite.pass ? kExitOk : kExitGrad;
}

int cmd_report(const std::string& metrics_path, const std::string& out_dir) {
    try {
        std::ifstream f(metrics_path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open " + metrics_path);
        nlohmann::ordered_json doc = nlohmann::ordered_json::parse(f);

        std::filesystem::create_directories(out_dir);
        if (doc.contains("drift_table")) {
            const auto& jt = doc["drift_table"];
            for (const char* which : {"iou", "icd"}) {
                const auto& mat = jt[which];
                std::vector<std::vector<std::string>> rows;
                std::vector<std::string> header{"episode"};
                for (std::size_t k = 0; k < mat.size(); ++k)
                    header.push_back("task_" + std::to_string(k + 1));
                rows.push_back(header);
                for (std::size_t e = 0; e < mat.size(); ++e) {
                    std::vector<std::string> row{std::to_string(e + 1)};
                    for (std::size_t k = 0; k < mat.size(); ++k)
                        row.push_back(k < mat[e].size() ? num(mat[e][k].get<double>()) : "");
                    rows.push_back(row);
                }
                icicle::write_csv(out_dir + "/drift_table_" + std::string(which) + ".csv", rows);
            }
        }

        // per-episode average accuracies
        std::vector<std::vector<std::string>> rows;
        rows.push_back({"episode", "taw_avg", "tag_avg", "tag_comp_avg"});
        for (const auto& ep : doc["episodes"]) {
            const auto& ev = ep["eval"];
            rows.push_back({ep["task_id"].dump(), num(ev["taw_avg"].get<double>()),
                            num(ev["tag_avg"].get<double>()),
                            ev.contains("tag_comp_avg") ? num(ev["tag_comp_avg"].get<double>())
                                                        : ""});
        }
        icicle::write_csv(out_dir + "/episode_averages.csv", rows);
        std::cout << "report: wrote tables to " << out_dir << "\n";
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "report: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "report: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"exemplar-free class-incremental prototypical-part learning"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    bool seed_given = false;
    try {
        seed = env_seed_default();
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return kExitConfig;
    }

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic ICDS dataset + manifest");
    std::string gen_config, gen_out;
    gen->add_option("--config", gen_config, "config file ([data] section is used)");
    gen->add_option("--out", gen_out, "output .icds path")->required();
    auto* gen_seed_opt = gen->add_option("--seed", seed, "generation seed (default ICICLE_SEED or 1)");

    // train
    auto* train = app.add_subcommand("train", "run a continual-learning experiment");
    std::string train_config, train_method, train_out;
    train->add_option("--config", train_config, "run config file")->required();
    auto* train_seed_opt = train->add_option("--seed", seed, "run seed override");
    train->add_option("--method", train_method,
                      "method override: icicle|finetuning|freezing|ewc|lwf|joint");
    train->add_option("--out", train_out, "output directory override");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the configured stream");
    std::string eval_config, eval_ckpt, eval_out;
    ev->add_option("--config", eval_config, "run config file")->required();
    ev->add_option("--checkpoint", eval_ckpt, "ICKP checkpoint")->required();
    ev->add_option("--out", eval_out, "also write the JSON report here");

    // drift
    auto* dr = app.add_subcommand("drift", "per-prototype ICD/IoU between two checkpoints");
    std::string drift_a, drift_b, drift_probe, drift_out;
    std::size_t drift_max = 20;
    double drift_pct = 95.0;
    dr->add_option("--a", drift_a, "reference checkpoint")->required();
    dr->add_option("--b", drift_b, "comparison checkpoint")->required();
    dr->add_option("--probe", drift_probe, "ICDS dataset used as probe images")->required();
    dr->add_option("--max-probe", drift_max, "probe image cap (default 20)");
    dr->add_option("--percentile", drift_pct, "binarization percentile (default 95)");
    dr->add_option("--out", drift_out, "CSV output path (default stdout)");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the total loss");
    double gc_tol = 1e-4, gc_h = 1e-5;
    std::size_t gc_configs = 24;
    auto* gc_seed_opt = gc->add_option("--seed", seed, "suite seed");
    gc->add_option("--tol", gc_tol, "max relative error tolerance (default 1e-4)");
    gc->add_option("--configs", gc_configs, "number of random configurations (default 24)");
    gc->add_option("--step", gc_h, "finite-difference step (default 1e-5)");

    // report
    auto* rp = app.add_subcommand("report", "re-emit CSV tables from a metrics document");
    std::string report_metrics, report_out;
    rp->add_option("--metrics", report_metrics, "metrics.json path")->required();
    rp->add_option("--out", report_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    seed_given = gen_seed_opt->count() > 0 || train_seed_opt->count() > 0 ||
                 gc_seed_opt->count() > 0 || std::getenv("ICICLE_SEED") != nullptr;
    if (!gen_seed_opt->count() && !train_seed_opt->count() && !gc_seed_opt->count())
        seed = env_seed_default();

    if (gen->parsed()) return cmd_gen_data(gen_config, seed, seed_given, gen_out);
    if (train->parsed()) return cmd_train(train_config, seed, seed_given, train_method, train_out);
    if (ev->parsed()) return cmd_eval(eval_config, eval_ckpt, eval_out);
    if (dr->parsed()) return cmd_drift(drift_a, drift_b, drift_probe, drift_max, drift_pct,
                                       drift_out);
    if (gc->parsed()) return cmd_gradcheck(seed, gc_tol, gc_configs, gc_h);
    if (rp->parsed()) return cmd_report(report_metrics, report_out);
    return kExitConfig;
}
