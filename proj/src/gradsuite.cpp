#include "icicle/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "icicle/continual.hpp"
#include "icicle/rng.hpp"

namespace icicle {

namespace {

struct CaseSetup {
    IcicleModel model;
    Snapshot snap{0, {}};
    std::vector<TensorF> images;
    std::vector<BatchItem> batch;
    std::vector<SnapTeacher> teachers;
    MaskConfig mask;
};

TensorF random_protos(std::size_t m, std::size_t d, Rng& rng) {
    TensorF t({m, d});
    for (auto& v : t.data) v = rng.uniform();
    return t;
}

CaseSetup build_case(std::uint64_t seed) {
    Rng rng(seed);
    CaseSetup s;

    ModelConfig cfg;
    // stride-2 valid conv needs odd input sizes
    cfg.image_h = 9 + 2 * rng.uniform_index(2);
    cfg.image_w = 9 + 2 * rng.uniform_index(2);
    cfg.image_c = 2;
    cfg.backbone = {{3, 2, 0, static_cast<std::size_t>(3 + rng.uniform_index(2))}};
    cfg.proto_dim = 3 + rng.uniform_index(3);
    cfg.protos_per_class = 1 + rng.uniform_index(2);
    s.model = IcicleModel::build(cfg, rng.next_u64());

    std::size_t k = cfg.protos_per_class;
    s.model.heads.push_back(
        PrototypeHead::make(1, {0, 1}, k, random_protos(2 * k, cfg.proto_dim, rng)));
    s.snap = snapshot(s.model, 1);

    // drift the current model away from the snapshot so the regularizer and
    // its |a-b| terms are non-degenerate
    for (auto& [name, p] : s.model.all_params())
        for (auto& v : p->data) v += 0.05 * rng.normal();
    s.model.heads.push_back(
        PrototypeHead::make(2, {2, 3}, k, random_protos(2 * k, cfg.proto_dim, rng)));

    s.mask.gamma = 0.25;
    for (int i = 0; i < 2; ++i) {
        TensorF img({cfg.image_h, cfg.image_w, cfg.image_c});
        for (auto& v : img.data) v = rng.uniform();
        s.images.push_back(std::move(img));
    }
    for (std::size_t i = 0; i < s.images.size(); ++i) {
        s.teachers.push_back(make_teacher(s.snap, s.images[i], s.mask));
    }
    for (std::size_t i = 0; i < s.images.size(); ++i) {
        BatchItem item;
        item.image = &s.images[i];
        item.label = i == 0 ? 2 : 1;  // one new-head label, one old-head label
        item.teacher = &s.teachers[i];
        s.batch.push_back(item);
    }
    return s;
}

// distance between the two smallest values; infinity when fewer than 2
double min_gap(std::vector<double> v) {
    if (v.size() < 2) return std::numeric_limits<double>::infinity();
    std::partial_sort(v.begin(), v.begin() + 2, v.end());
    return v[1] - v[0];
}

bool margins_ok(const CaseSetup& s) {
    for (const BatchItem& item : s.batch) {
        ModelEval ev = eval_model(s.model, *item.image, true);

        // relu kinks: every pre-activation of a relu layer away from zero
        // (the last preact feeds the sigmoid, which is smooth)
        for (std::size_t l = 0; l + 1 < ev.cache.preacts.size(); ++l)
            for (double v : ev.cache.preacts[l].data)
                if (std::abs(v) < 1e-4) return false;

        for (const HeadEval& he : ev.heads)
            for (const ProtoEval& pe : he.protos) {
                // argmax ties in the max-sim logits
                std::vector<double> neg;
                for (double v : pe.sim) neg.push_back(-v);
                if (min_gap(neg) < 1e-3) return false;
                // keep away from the d -> 0 region where sim curvature blows up
                for (double d : pe.dist)
                    if (d < 1e-2) return false;
            }

        // argmin ties in cluster/separation on the head owning this label
        for (std::size_t hi = 0; hi < s.model.heads.size(); ++hi) {
            const PrototypeHead& head = s.model.heads[hi];
            if (std::find(head.classes.begin(), head.classes.end(), item.label) ==
                head.classes.end())
                continue;
            for (int side = 0; side < 2; ++side) {
                std::vector<double> pool;
                for (std::size_t p = 0; p < head.num_protos(); ++p) {
                    bool own = head.classes[head.class_of(p)] == item.label;
                    if ((side == 0) == own)
                        for (double d : ev.heads[hi].protos[p].dist) pool.push_back(d);
                }
                if (min_gap(pool) < 1e-4) return false;
            }
        }
    }

    // |a-b| kinks of the regularizer at the masked cells, for all placements
    for (std::size_t i = 0; i < s.images.size(); ++i) {
        const SnapTeacher& t = s.teachers[i];
        ModelEval ev = eval_model(s.model, s.images[i]);
        std::size_t d = s.model.cfg.proto_dim;
        for (std::size_t h = 0; h < t.heads.size(); ++h)
            for (std::size_t p = 0; p < t.heads[h].protos.size(); ++p)
                for (std::size_t cell : t.masks[h][p]) {
                    const ProtoEval& old_pe = t.heads[h].protos[p];
                    const ProtoEval& new_pe = ev.heads[h].protos[p];
                    if (std::abs(old_pe.sim[cell] - new_pe.sim[cell]) < 1e-3) return false;
                    if (std::abs(old_pe.dist[cell] - new_pe.dist[cell]) < 1e-4) return false;
                    for (std::size_t c = 0; c < d; ++c)
                        if (std::abs(t.features.patch(cell)[c] - ev.features.patch(cell)[c]) <
                            1e-4)
                            return false;
                }
    }
    return true;
}

}  // namespace

GradSuiteReport run_gradcheck_suite(std::uint64_t seed, double tol, std::size_t n_configs,
                                    double h) {
    const RegPlacement placements[3] = {RegPlacement::similarity, RegPlacement::distance,
                                        RegPlacement::feature};
    const double lambdas[3] = {0.0, 0.01, 1.0};

    GradSuiteReport suite;
    suite.tol = tol;
    for (std::size_t i = 0; i < n_configs; ++i) {
        GradSuiteCase c;
        c.index = i;
        c.placement = placements[i % 3];
        c.lambda_ir = lambdas[(i / 3) % 3];

        std::uint64_t case_seed = seed + 1000 * (i + 1);
        CaseSetup setup = build_case(case_seed);
        while (!margins_ok(setup) && c.resamples < 64) {
            ++c.resamples;
            case_seed += 17;
            setup = build_case(case_seed);
        }
        c.seed = case_seed;

        LossWeights w;
        w.ir = c.lambda_ir;
        setup.model.zero_grads();
        for (auto& [name, p] : setup.model.all_params()) p->alloc_grad();
        total_loss(setup.model, &setup.snap, setup.batch, w, setup.mask, c.placement, true);

        auto loss_fn = [&]() {
            return total_loss(setup.model, &setup.snap, setup.batch, w, setup.mask, c.placement,
                              false)
                .total;
        };
        c.report = grad_check(loss_fn, setup.model.all_params(), h, tol);
        suite.max_rel_err = std::max(suite.max_rel_err, c.report.max_rel_err);
        suite.cases.push_back(std::move(c));
    }
    suite.pass = suite.max_rel_err <= tol;
    return suite;
}

std::string GradSuiteReport::text() const {
    std::string out;
    char line[256];
    for (const GradSuiteCase& c : cases) {
        const GradCheckReport::Entry* worst = nullptr;
        for (const auto& e : c.report.entries)
            if (!worst || e.max_rel_err > worst->max_rel_err) worst = &e;
        std::snprintf(line, sizeof(line),
                      "case %02zu placement=%-10s lambda_ir=%-4g seed=%llu resamples=%zu "
                      "max_rel_err=%.3e worst=%s %s\n",
                      c.index, to_string(c.placement).c_str(), c.lambda_ir,
                      static_cast<unsigned long long>(c.seed), c.resamples,
                      c.report.max_rel_err, worst ? worst->name.c_str() : "-",
                      c.report.pass ? "PASS" : "FAIL");
        out += line;
    }
    std::snprintf(line, sizeof(line), "overall max_rel_err=%.3e tol=%.1e %s\n", max_rel_err, tol,
                  pass ? "PASS" : "FAIL");
    out += line;
    return out;
}

}  // namespace icicle
