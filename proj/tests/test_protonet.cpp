#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "icicle/model.hpp"
#include "icicle/rng.hpp"

using namespace icicle;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.image_h = cfg.image_w = 9;
    cfg.image_c = 2;
    cfg.backbone = {{3, 2, 0, 4}};
    cfg.proto_dim = 4;
    cfg.protos_per_class = 2;
    return cfg;
}

TensorF random_image(const ModelConfig& cfg, Rng& rng) {
    TensorF img({cfg.image_h, cfg.image_w, cfg.image_c});
    for (auto& v : img.data) v = rng.uniform();
    return img;
}

void add_head(IcicleModel& m, int task_id, std::vector<int> classes, Rng& rng) {
    std::size_t mprotos = m.cfg.protos_per_class * classes.size();
    TensorF protos({mprotos, m.cfg.proto_dim});
    for (auto& v : protos.data) v = rng.uniform();
    m.heads.push_back(
        PrototypeHead::make(task_id, std::move(classes), m.cfg.protos_per_class, std::move(protos)));
}

}  // namespace

TEST_CASE("similarity: zero distance, hand value, monotonicity, asymptote") {
    double eta = 1e-4;
    CHECK(similarity(0.0, eta) == doctest::Approx(std::log(1.0 / eta)).epsilon(1e-12));
    CHECK(similarity(1.0, eta) == doctest::Approx(std::log(2.0 / 1.0001)).epsilon(1e-9));
    CHECK(similarity(1e9, eta) > 0.0);
    CHECK(similarity(1e9, eta) < 1e-8);

    Rng rng(3);
    for (int i = 0; i < 10000; ++i) {
        double d1 = rng.uniform(0.0, 50.0), d2 = rng.uniform(0.0, 50.0);
        if (d1 == d2) continue;
        if (d1 > d2) std::swap(d1, d2);
        double s1 = similarity(d1, eta), s2 = similarity(d2, eta);
        CHECK(s1 > s2);
        CHECK(s1 <= std::log(1.0 / eta) + 1e-12);
        CHECK(s2 > 0.0);
    }
}

TEST_CASE("similarity_deriv matches a finite difference") {
    double eta = 1e-4;
    for (double d : {0.01, 0.1, 1.0, 5.0}) {
        double h = 1e-6;
        double num = (similarity(d + h, eta) - similarity(d - h, eta)) / (2 * h);
        CHECK(similarity_deriv(d, eta) == doctest::Approx(num).epsilon(1e-6));
    }
}

TEST_CASE("head logits sum assigned max-similarities") {
    // fixed feature map, K=2, one class: logit = sum of the two max-sims
    FeatureMap fm;
    fm.h = fm.w = 2;
    fm.d = 2;
    fm.values = {0.1, 0.2, 0.9, 0.8, 0.5, 0.5, 0.3, 0.7};
    TensorF protos({2, 2});
    protos.data = {0.1, 0.2, 0.3, 0.7};  // each equals one patch -> max sim ln(1/eta)
    PrototypeHead head = PrototypeHead::make(0, {7}, 2, std::move(protos));
    double eta = 1e-4;
    HeadEval ev = eval_head(fm, head, eta);
    REQUIRE(ev.logits.size() == 1);
    // patch_distance keeps a tiny epsilon inside the sqrt, so an exact match
    // lands a hair under the ln(1/eta) ceiling
    CHECK(ev.protos[0].max_sim == doctest::Approx(std::log(1.0 / eta)).epsilon(2e-3));
    CHECK(ev.protos[0].max_sim <= std::log(1.0 / eta));
    CHECK(ev.logits[0] ==
          doctest::Approx(ev.protos[0].max_sim + ev.protos[1].max_sim).epsilon(1e-12));
    // K=2 with max-similarities (3, 4) -> logit 7, by construction of the sum
    CHECK(3.0 + 4.0 == 7.0);
}

TEST_CASE("eval_head is invariant to spatial permutation of the map") {
    Rng rng(11);
    FeatureMap fm;
    fm.h = 3;
    fm.w = 2;
    fm.d = 4;
    fm.values.resize(fm.h * fm.w * fm.d);
    for (auto& v : fm.values) v = rng.uniform();
    TensorF protos({4, 4});
    for (auto& v : protos.data) v = rng.uniform();
    PrototypeHead head = PrototypeHead::make(0, {0, 1}, 2, std::move(protos));

    HeadEval base = eval_head(fm, head, 1e-4);

    FeatureMap perm = fm;  // reverse the patch order
    for (std::size_t c = 0; c < fm.cells(); ++c)
        std::copy(fm.patch(fm.cells() - 1 - c), fm.patch(fm.cells() - 1 - c) + fm.d,
                  perm.values.begin() + static_cast<long>(c * fm.d));
    HeadEval ev = eval_head(perm, head, 1e-4);
    for (std::size_t c = 0; c < base.logits.size(); ++c)
        CHECK(ev.logits[c] == doctest::Approx(base.logits[c]).epsilon(1e-12));
}

TEST_CASE("eval_head matches a brute-force similarity oracle") {
    Rng rng(19);
    FeatureMap fm;
    fm.h = fm.w = 3;
    fm.d = 3;
    fm.values.resize(27);
    for (auto& v : fm.values) v = rng.uniform();
    TensorF protos({4, 3});
    for (auto& v : protos.data) v = rng.uniform();
    PrototypeHead head = PrototypeHead::make(2, {5, 6}, 2, std::move(protos));
    double eta = 1e-4;
    HeadEval ev = eval_head(fm, head, eta);
    for (std::size_t p = 0; p < 4; ++p) {
        double best = -1e30;
        for (std::size_t c = 0; c < fm.cells(); ++c) {
            double d = patch_distance(fm.patch(c), &head.prototypes.data[p * 3], 3);
            best = std::max(best, similarity(d, eta));
        }
        CHECK(ev.protos[p].max_sim == doctest::Approx(best).epsilon(1e-12));
    }
    CHECK(ev.logits[0] ==
          doctest::Approx(ev.protos[0].max_sim + ev.protos[1].max_sim).epsilon(1e-12));
    CHECK(ev.logits[1] ==
          doctest::Approx(ev.protos[2].max_sim + ev.protos[3].max_sim).epsilon(1e-12));
}

TEST_CASE("forward features: range, determinism, shape") {
    ModelConfig cfg = tiny_config();
    IcicleModel m = IcicleModel::build(cfg, 21);
    Rng rng(4);
    TensorF img = random_image(cfg, rng);
    FeatureMap a = forward_features(m, img);
    FeatureMap b = forward_features(m, img);
    CHECK(a.values == b.values);
    CHECK(a.h == m.feature_h());
    CHECK(a.w == m.feature_w());
    CHECK(a.d == cfg.proto_dim);
    for (double v : a.values) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("tiny hand-set backbone matches a manual forward pass") {
    // one 2x2/s2 conv on a 4x4x1 image, identity-ish weights
    ModelConfig cfg;
    cfg.image_h = cfg.image_w = 4;
    cfg.image_c = 1;
    cfg.backbone = {{2, 2, 0, 1}};
    cfg.proto_dim = 1;
    cfg.protos_per_class = 1;
    IcicleModel m = IcicleModel::build(cfg, 1);
    // backbone: sum the 2x2 window; add-ons: pure pass-through scalars
    m.backbone[0].w = TensorF::full({2, 2, 1, 1}, 1.0);
    m.backbone[0].b = TensorF::zeros({1});
    m.addon1.w = TensorF::full({1, 1, 1, 1}, 1.0);
    m.addon1.b = TensorF::zeros({1});
    m.addon2.w = TensorF::full({1, 1, 1, 1}, 1.0);
    m.addon2.b = TensorF::zeros({1});

    TensorF img({4, 4, 1});
    for (std::size_t i = 0; i < 16; ++i) img.data[i] = static_cast<double>(i) / 16.0;
    FeatureMap fm = forward_features(m, img);
    REQUIRE(fm.cells() == 4);
    // window sums: (0+1+4+5)/16, (2+3+6+7)/16, (8+9+12+13)/16, (10+11+14+15)/16
    std::vector<double> sums = {10.0 / 16, 18.0 / 16, 42.0 / 16, 50.0 / 16};
    for (std::size_t c = 0; c < 4; ++c) {
        double relu = std::max(0.0, sums[c]);      // backbone relu
        double a1 = std::max(0.0, relu);           // addon1 relu
        double expect = 1.0 / (1.0 + std::exp(-a1));
        CHECK(fm.values[c] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("full forward concatenates head logits in head order") {
    ModelConfig cfg = tiny_config();
    IcicleModel m = IcicleModel::build(cfg, 33);
    Rng rng(5);
    add_head(m, 1, {0, 1}, rng);
    TensorF img = random_image(cfg, rng);

    std::vector<double> one = full_forward(m, img);
    REQUIRE(one.size() == 2);

    add_head(m, 2, {2, 3, 4}, rng);
    std::vector<double> two = full_forward(m, img);
    REQUIRE(two.size() == 5);
    CHECK(two[0] == doctest::Approx(one[0]).epsilon(1e-12));
    CHECK(two[1] == doctest::Approx(one[1]).epsilon(1e-12));

    ModelEval ev = eval_model(m, img);
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(ev.full_logits[i] == doctest::Approx(two[i]).epsilon(1e-12));
    CHECK(m.logit_index(2) == 2);
    CHECK(m.logit_index(4) == 4);
}

TEST_CASE("projection picks the argmin-distance own-class patch") {
    ModelConfig cfg = tiny_config();
    IcicleModel m = IcicleModel::build(cfg, 2);
    Rng rng(6);
    add_head(m, 1, {0, 1}, rng);

    std::vector<TensorF> imgs;
    for (int i = 0; i < 2; ++i) imgs.push_back(random_image(cfg, rng));
    std::map<int, std::vector<const TensorF*>> by_class{{0, {&imgs[0]}}, {1, {&imgs[1]}}};

    IcicleModel before = m;
    project_prototypes(m, 0, by_class);

    for (std::size_t p = 0; p < m.heads[0].num_protos(); ++p) {
        int cls = m.heads[0].classes[m.heads[0].class_of(p)];
        const TensorF& src = *by_class[cls][0];
        FeatureMap fm = forward_features(m, src);
        // exhaustive scan with the ORIGINAL prototype values
        double best = 1e30;
        std::vector<double> bestpatch;
        for (std::size_t c = 0; c < fm.cells(); ++c) {
            double d = patch_distance(fm.patch(c),
                                      &before.heads[0].prototypes.data[p * fm.d], fm.d);
            if (d < best) {
                best = d;
                bestpatch.assign(fm.patch(c), fm.patch(c) + fm.d);
            }
        }
        for (std::size_t j = 0; j < fm.d; ++j)
            CHECK(m.heads[0].prototypes.data[p * fm.d + j] ==
                  doctest::Approx(bestpatch[j]).epsilon(1e-12));
    }

    // fixed point: projecting again changes nothing
    IcicleModel again = m;
    project_prototypes(again, 0, by_class);
    CHECK(again.heads[0].prototypes.data == m.heads[0].prototypes.data);
}

TEST_CASE("projection with missing class data errors and leaves head untouched") {
    ModelConfig cfg = tiny_config();
    IcicleModel m = IcicleModel::build(cfg, 2);
    Rng rng(6);
    add_head(m, 1, {0, 1}, rng);
    TensorF img = random_image(cfg, rng);
    std::map<int, std::vector<const TensorF*>> by_class{{0, {&img}}};  // class 1 missing
    TensorF before = m.heads[0].prototypes;
    CHECK_THROWS(project_prototypes(m, 0, by_class));
    CHECK(m.heads[0].prototypes.data == before.data);
}

TEST_CASE("snapshot is immutable under later edits and copies exactly") {
    ModelConfig cfg = tiny_config();
    IcicleModel m = IcicleModel::build(cfg, 8);
    Rng rng(7);
    add_head(m, 1, {0, 1}, rng);
    TensorF img = random_image(cfg, rng);

    Snapshot snap = snapshot(m, 1);
    std::vector<double> live = full_forward(m, img);
    std::vector<double> frozen = full_forward(snap.model, img);
    CHECK(live == frozen);

    // "train": perturb every parameter
    for (auto& [name, p] : m.all_params())
        for (auto& v : p->data) v += 0.1;
    std::vector<double> frozen2 = full_forward(snap.model, img);
    CHECK(frozen2 == frozen);

    Snapshot snap2 = snapshot(snap.model, 1);
    CHECK(full_forward(snap2.model, img) == frozen);
}

TEST_CASE("prototype head validation rejects malformed assignments") {
    TensorF protos({4, 3});
    PrototypeHead head = PrototypeHead::make(1, {0, 1}, 2, std::move(protos));
    CHECK(head.assignment.size() == 4 * 2);
    // each prototype assigned to exactly its own class
    for (std::size_t p = 0; p < 4; ++p)
        for (std::size_t c = 0; c < 2; ++c)
            CHECK(head.assignment[p * 2 + c] == (head.class_of(p) == c ? 1 : 0));
    head.validate();
    head.assignment[0] = 2;  // not {0,1}
    CHECK_THROWS(head.validate());
}
