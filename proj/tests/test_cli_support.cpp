#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <string>

#include "icicle/checkpoint.hpp"
#include "icicle/config.hpp"
#include "icicle/experiment.hpp"
#include "icicle/gradsuite.hpp"
#include "icicle/rng.hpp"

#include "json.hpp"

using namespace icicle;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(std::string p) : path(std::move(p)) {}
    ~TempFile() { std::remove(path.c_str()); }
};

IcicleModel small_model(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.image_h = cfg.image_w = 9;
    cfg.image_c = 2;
    cfg.backbone = {{3, 2, 0, 4}};
    cfg.proto_dim = 4;
    cfg.protos_per_class = 2;
    IcicleModel m = IcicleModel::build(cfg, seed);
    Rng rng(seed + 100);
    for (int t = 1; t <= 2; ++t) {
        std::vector<int> classes = {2 * (t - 1), 2 * (t - 1) + 1};
        TensorF protos({cfg.protos_per_class * classes.size(), cfg.proto_dim});
        for (auto& v : protos.data) v = rng.uniform();
        m.heads.push_back(PrototypeHead::make(t, classes, cfg.protos_per_class, std::move(protos)));
    }
    return m;
}

bool models_bitwise_equal(const IcicleModel& a, const IcicleModel& b) {
    auto pa = a.shared_params();
    auto pb = b.shared_params();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i].first != pb[i].first) return false;
        if (pa[i].second->data != pb[i].second->data) return false;
        if (pa[i].second->shape != pb[i].second->shape) return false;
    }
    if (a.heads.size() != b.heads.size()) return false;
    for (std::size_t h = 0; h < a.heads.size(); ++h) {
        const auto& ha = a.heads[h];
        const auto& hb = b.heads[h];
        if (ha.task_id != hb.task_id || ha.classes != hb.classes ||
            ha.protos_per_class != hb.protos_per_class ||
            ha.prototypes.data != hb.prototypes.data || ha.assignment != hb.assignment)
            return false;
    }
    return true;
}

std::string read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config: serialize/parse round-trip preserves every field") {
    RunConfig cfg;
    cfg.synth.num_classes = 10;
    cfg.synth.noise_sigma = 0.037;
    cfg.num_tasks = 5;
    cfg.data_seed = 42;
    cfg.model.proto_dim = 16;
    cfg.method.method = Method::ewc;
    cfg.method.ewc_alpha = 1234.5;
    cfg.weights.ir = 0.123456789012345;
    cfg.placement = RegPlacement::distance;
    cfg.use_ir = false;
    cfg.init.strategy = InitStrategy::distant;
    cfg.init.alpha = 0.31;
    cfg.compensation_u = 0.25;
    cfg.seed = 7;
    cfg.out_dir = "runs/x";
    cfg.schedule = schedule_for_task_count(cfg.num_tasks);
    cfg.schedule.joint_epochs = 3;

    RunConfig back = parse_config_text(serialize_config(cfg));
    CHECK(config_equal(cfg, back));
    // canonical form is a fixed point
    CHECK(serialize_config(back) == serialize_config(cfg));

    RunConfig other = cfg;
    other.weights.clst = cfg.weights.clst + 0.5;
    CHECK_FALSE(config_equal(cfg, other));
}

TEST_CASE("config: schedule defaults follow the task-count regime") {
    RunConfig c4 = parse_config_text("[data]\nnum_tasks = 4\n");
    TrainSchedule r4 = schedule_for_task_count(4);
    CHECK(c4.schedule.warmup_epochs == r4.warmup_epochs);
    CHECK(c4.schedule.joint_epochs == r4.joint_epochs);
    CHECK(c4.schedule.projection_period == r4.projection_period);

    RunConfig c20 =
        parse_config_text("[data]\nnum_tasks = 20\nnum_classes = 40\nglyph_library = 82\n");
    TrainSchedule r20 = schedule_for_task_count(20);
    CHECK(c20.schedule.joint_epochs == r20.joint_epochs);

    // an explicit value beats the regime
    RunConfig c = parse_config_text("[data]\nnum_tasks = 4\n[train]\njoint_epochs = 2\n");
    CHECK(c.schedule.joint_epochs == 2);
    CHECK(c.schedule.warmup_epochs == r4.warmup_epochs);
}

TEST_CASE("config: malformed input is rejected with the offending line") {
    CHECK_THROWS_AS(parse_config_text("[data]\nnope = 1\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("[bogus]\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("[data]\nnum_tasks\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("[data]\nnum_tasks = four\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("[data]\nseed = 1\nseed = 2\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("num_tasks = 4\n"), std::invalid_argument);  // no section
    CHECK_THROWS_AS(parse_config_text("[train]\nmethod = sgd\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("[loss]\nplacement = nowhere\n"), std::invalid_argument);
    // values that parse but violate validate()
    CHECK_THROWS(parse_config_text("[train]\nlr_head = -1\n"));
    CHECK_THROWS(parse_config_text("[init]\nalpha = 1.5\n"));
}

TEST_CASE("config: comments and blank lines are ignored; shipped default parses") {
    RunConfig a = parse_config_text("# top comment\n\n[run]\n  seed = 3  \n# tail\n");
    CHECK(a.seed == 3);
    RunConfig def = load_config(std::string(ICICLE_CONFIG_DIR) + "/default.cfg");
    CHECK(def.synth.num_classes == 20);
    CHECK(def.num_tasks == 4);
    def.validate();
}

TEST_CASE("checkpoint: bitwise round-trip including head metadata") {
    IcicleModel m = small_model(31);
    TempFile tmp("test_cli_ckpt.ickp");
    save_checkpoint(tmp.path, m);
    IcicleModel back = load_checkpoint(tmp.path);
    CHECK(models_bitwise_equal(m, back));
    CHECK(back.cfg.proto_dim == m.cfg.proto_dim);
    CHECK(back.cfg.eta == m.cfg.eta);

    // saving again produces identical bytes
    TempFile tmp2("test_cli_ckpt2.ickp");
    save_checkpoint(tmp2.path, back);
    CHECK(read_bytes(tmp.path) == read_bytes(tmp2.path));
}

TEST_CASE("checkpoint: loader rejects corruption") {
    IcicleModel m = small_model(33);
    TempFile tmp("test_cli_ckpt_bad.ickp");
    save_checkpoint(tmp.path, m);
    {
        std::fstream f(tmp.path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("NOPE", 4);
    }
    CHECK_THROWS(load_checkpoint(tmp.path));

    save_checkpoint(tmp.path, m);
    {
        std::fstream f(tmp.path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(40);
        char c = 0x77;
        f.write(&c, 1);
    }
    CHECK_THROWS(load_checkpoint(tmp.path));
    CHECK_THROWS(load_checkpoint("no_such_checkpoint.ickp"));
}

TEST_CASE("gradcheck suite passes at 1e-4, fails at an impossible tolerance") {
    GradSuiteReport rep = run_gradcheck_suite(11, 1e-4, 6);
    CHECK(rep.pass);
    CHECK(rep.cases.size() == 6);
    CHECK(rep.max_rel_err <= 1e-4);

    // identical seed -> identical printable report
    GradSuiteReport again = run_gradcheck_suite(11, 1e-4, 6);
    CHECK(rep.text() == again.text());

    GradSuiteReport floor = run_gradcheck_suite(11, 1e-15, 6);
    CHECK_FALSE(floor.pass);
}

TEST_CASE("metrics document: echoed config reparses to an equal RunConfig") {
    RunConfig cfg = parse_config_text(
        "[data]\n"
        "num_classes = 4\n"
        "samples_per_class = 10\n"
        "glyph_library = 12\n"
        "num_tasks = 2\n"
        "[model]\n"
        "proto_dim = 8\n"
        "protos_per_class = 2\n"
        "[train]\n"
        "warmup_epochs = 1\n"
        "joint_epochs = 1\n"
        "projection_period = 1\n"
        "[eval]\n"
        "probe_per_task = 2\n"
        "[run]\n"
        "seed = 5\n");
    ExperimentResult res = run_experiment(cfg);
    CHECK_FALSE(res.aborted);
    REQUIRE(res.episodes.size() == 2);

    std::string doc = metrics_document_json(res);
    auto j = nlohmann::json::parse(doc);
    CHECK(j.at("schema_version") == 1);
    RunConfig echoed = parse_config_text(j.at("config_echo").get<std::string>());
    CHECK(config_equal(cfg, echoed));

    // the document itself is deterministic
    CHECK(metrics_document_json(res) == doc);
}
