#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "icicle/losses.hpp"
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

FeatureMap random_map(std::size_t h, std::size_t w, std::size_t d, Rng& rng) {
    FeatureMap fm;
    fm.h = h;
    fm.w = w;
    fm.d = d;
    fm.values.resize(h * w * d);
    for (auto& v : fm.values) v = rng.uniform();
    return fm;
}

}  // namespace

TEST_CASE("top_mask keeps the m largest cells, ties to the smallest index") {
    std::vector<double> map = {5.0, 1.0, 5.0, 3.0};
    auto m1 = top_mask(map, 1);
    REQUIRE(m1.size() == 1);
    CHECK(m1[0] == 0);  // tie between cells 0 and 2 resolved to 0
    auto m2 = top_mask(map, 2);
    CHECK(std::vector<std::size_t>(m2.begin(), m2.end()) == std::vector<std::size_t>{0, 2});
    auto m3 = top_mask(map, 3);
    CHECK(std::vector<std::size_t>(m3.begin(), m3.end()) == std::vector<std::size_t>{0, 2, 3});
}

TEST_CASE("mask pixel count follows gamma") {
    MaskConfig mask;
    mask.gamma = 1.0 / 49.0;
    CHECK(mask.pixel_count(49) == 1);
    mask.gamma = 0.25;
    CHECK(mask.pixel_count(4) == 1);
    mask.gamma = 1.0;
    CHECK(mask.pixel_count(6) == 6);
    // never zero for a non-empty map
    mask.gamma = 1e-6;
    CHECK(mask.pixel_count(49) >= 1);
}

TEST_CASE("cross_entropy_full: uniform-logit symmetry over heads") {
    ModelConfig cfg = tiny_config();
    IcicleModel m = IcicleModel::build(cfg, 5);
    Rng rng(1);
    add_head(m, 1, {0, 1, 2, 3, 4}, rng);
    add_head(m, 2, {5, 6, 7, 8, 9}, rng);
    // force every logit to the same value: all prototypes identical across
    // both heads
    std::vector<double> first(m.heads[0].prototypes.data.begin(),
                              m.heads[0].prototypes.data.begin() + cfg.proto_dim);
    for (auto& head : m.heads)
        for (std::size_t p = 0; p < head.num_protos(); ++p)
            std::copy(first.begin(), first.end(),
                      head.prototypes.data.begin() + p * cfg.proto_dim);
    TensorF img = random_image(cfg, rng);
    for (int label : {0, 4, 9})
        CHECK(cross_entropy_full(m, img, label) ==
              doctest::Approx(std::log(10.0)).epsilon(1e-9));
}

TEST_CASE("cross_entropy_full single head matches composed softmax-CE") {
    ModelConfig cfg = tiny_config();
    IcicleModel m = IcicleModel::build(cfg, 5);
    Rng rng(2);
    add_head(m, 1, {0, 1, 2}, rng);
    TensorF img = random_image(cfg, rng);
    std::vector<double> logits = full_forward(m, img);
    auto [expect, grad] = softmax_cross_entropy(logits, 1);
    CHECK(cross_entropy_full(m, img, 1) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("cluster_cost: zero case, single candidate, brute force") {
    Rng rng(3);
    FeatureMap fm = random_map(2, 2, 3, rng);
    TensorF protos({4, 3});
    for (auto& v : protos.data) v = rng.uniform();
    // plant prototype 0 (class 0) exactly on patch 2
    std::copy(fm.patch(2), fm.patch(2) + 3, protos.data.begin());
    PrototypeHead head = PrototypeHead::make(1, {0, 1}, 2, std::move(protos));
    CHECK(cluster_cost(fm, head, 0) < 1e-5);

    // brute force: min over own-class protos x patches
    double best = 1e30;
    for (std::size_t p = 2; p < 4; ++p)  // class 1 owns protos 2,3
        for (std::size_t c = 0; c < 4; ++c)
            best = std::min(best,
                            patch_distance(fm.patch(c), &head.prototypes.data[p * 3], 3));
    CHECK(cluster_cost(fm, head, 1) == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("cluster_cost 1x1 map with one prototype at distance 2") {
    FeatureMap fm;
    fm.h = fm.w = 1;
    fm.d = 1;
    fm.values = {0.5};
    TensorF protos({1, 1});
    protos.data = {2.5};
    PrototypeHead head = PrototypeHead::make(1, {0}, 1, std::move(protos));
    CHECK(cluster_cost(fm, head, 0) == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("separation_cost: zero case, exact min, brute force, degenerate head") {
    Rng rng(4);
    FeatureMap fm = random_map(2, 2, 3, rng);
    TensorF protos({4, 3});
    for (auto& v : protos.data) v = rng.uniform();
    // plant an other-class prototype (class 1) exactly on a patch
    std::copy(fm.patch(1), fm.patch(1) + 3, protos.data.begin() + 2 * 3);
    PrototypeHead head = PrototypeHead::make(1, {0, 1}, 2, std::move(protos));
    CHECK(separation_cost(fm, head, 0) < 1e-5);

    double best = 1e30;
    for (std::size_t p = 0; p < 2; ++p)  // protos of class 0 are "other" for label 1
        for (std::size_t c = 0; c < 4; ++c)
            best = std::min(best,
                            patch_distance(fm.patch(c), &head.prototypes.data[p * 3], 3));
    CHECK(separation_cost(fm, head, 1) == doctest::Approx(best).epsilon(1e-12));

    TensorF single({2, 3});
    for (auto& v : single.data) v = rng.uniform();
    PrototypeHead one = PrototypeHead::make(1, {7}, 2, std::move(single));
    bool degenerate = false;
    CHECK(separation_cost(fm, one, 7, &degenerate) == 0.0);
    CHECK(degenerate);
}

TEST_CASE("interpretability regularization is zero against an identical snapshot") {
    ModelConfig cfg = tiny_config();
    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
        IcicleModel m = IcicleModel::build(cfg, 100 + i);
        add_head(m, 1, {0, 1}, rng);
        Snapshot snap = snapshot(m, 1);
        TensorF img = random_image(cfg, rng);
        MaskConfig mask;
        for (auto placement :
             {RegPlacement::similarity, RegPlacement::distance, RegPlacement::feature})
            CHECK(interpretability_regularization(snap, m, img, mask, placement) == 0.0);
    }
}

TEST_CASE("interpretability regularization hand case: A=(5,1,1,1), B=(3,9,9,9), m=1 -> 2") {
    // Validate the masked-difference arithmetic directly on the mask helper:
    // the mask keeps A's top cell (value 5), where |A-B| = 2.
    std::vector<double> A = {5.0, 1.0, 1.0, 1.0};
    std::vector<double> B = {3.0, 9.0, 9.0, 9.0};
    MaskConfig mask;
    mask.gamma = 0.25;
    std::size_t m = mask.pixel_count(4);
    REQUIRE(m == 1);
    auto cells = top_mask(A, m);
    REQUIRE(cells.size() == 1);
    CHECK(cells[0] == 0);
    double value = 0.0;
    for (std::size_t c : cells) value += std::fabs(A[c] - B[c]);
    CHECK(value == 2.0);
}

TEST_CASE("interpretability regularization responds only inside the snapshot mask") {
    // two models identical except prototypes shifted; with gamma=1 the value
    // equals the mean |sim change| which must be positive
    ModelConfig cfg = tiny_config();
    IcicleModel m = IcicleModel::build(cfg, 9);
    Rng rng(6);
    add_head(m, 1, {0, 1}, rng);
    Snapshot snap = snapshot(m, 1);
    for (auto& v : m.heads[0].prototypes.data) v += 0.05;
    TensorF img = random_image(cfg, rng);
    MaskConfig mask;
    mask.gamma = 1.0;
    double full = interpretability_regularization(snap, m, img, mask, RegPlacement::similarity);
    CHECK(full > 0.0);
    mask.gamma = 0.1;
    double masked = interpretability_regularization(snap, m, img, mask, RegPlacement::similarity);
    CHECK(masked > 0.0);
}

TEST_CASE("total_loss with weights (1,0,0,0) equals mean cross-entropy") {
    ModelConfig cfg = tiny_config();
    IcicleModel m = IcicleModel::build(cfg, 11);
    Rng rng(7);
    add_head(m, 1, {0, 1}, rng);
    std::vector<TensorF> imgs;
    for (int i = 0; i < 3; ++i) imgs.push_back(random_image(cfg, rng));
    std::vector<BatchItem> batch;
    for (int i = 0; i < 3; ++i) batch.push_back({&imgs[i], i % 2, nullptr});

    LossWeights w;
    w.ce = 1.0;
    w.clst = w.sep = w.ir = 0.0;
    MaskConfig mask;
    LossBreakdown bd =
        total_loss(m, nullptr, batch, w, mask, RegPlacement::similarity, false);
    double expect = 0.0;
    for (const auto& item : batch) expect += cross_entropy_full(m, *item.image, item.label);
    expect /= 3.0;
    CHECK(bd.total == doctest::Approx(expect).epsilon(1e-12));
    CHECK(bd.ce == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("total_loss without a snapshot ignores lambda_ir") {
    ModelConfig cfg = tiny_config();
    IcicleModel m = IcicleModel::build(cfg, 12);
    Rng rng(8);
    add_head(m, 1, {0, 1}, rng);
    TensorF img = random_image(cfg, rng);
    std::vector<BatchItem> batch = {{&img, 0, nullptr}};
    MaskConfig mask;
    LossWeights w0;
    w0.ir = 0.0;
    LossWeights w1;
    w1.ir = 10.0;
    double a = total_loss(m, nullptr, batch, w0, mask, RegPlacement::similarity, false).total;
    double b = total_loss(m, nullptr, batch, w1, mask, RegPlacement::similarity, false).total;
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("total_loss composes the weighted components") {
    ModelConfig cfg = tiny_config();
    IcicleModel m = IcicleModel::build(cfg, 13);
    Rng rng(9);
    add_head(m, 1, {0, 1}, rng);
    Snapshot snap = snapshot(m, 1);
    add_head(m, 2, {2, 3}, rng);
    for (auto& v : m.addon2.b.data) v += 0.02;  // make IR nonzero

    std::vector<TensorF> imgs;
    for (int i = 0; i < 2; ++i) imgs.push_back(random_image(cfg, rng));
    MaskConfig mask;
    mask.gamma = 0.25;
    std::vector<SnapTeacher> teachers;
    teachers.reserve(2);
    for (const auto& img : imgs) teachers.push_back(make_teacher(snap, img, mask));
    std::vector<BatchItem> batch = {{&imgs[0], 2, &teachers[0]}, {&imgs[1], 3, &teachers[1]}};

    LossWeights w;
    w.ce = 1.0;
    w.clst = 0.8;
    w.sep = -0.08;
    w.ir = 0.01;
    LossBreakdown bd =
        total_loss(m, &snap, batch, w, mask, RegPlacement::similarity, false);

    // recompose by hand from per-item primitives
    double ce = 0.0, clst = 0.0, sep = 0.0, ir = 0.0;
    for (const auto& item : batch) {
        ce += cross_entropy_full(m, *item.image, item.label);
        FeatureMap fm = forward_features(m, *item.image);
        clst += cluster_cost(fm, m.heads[1], item.label);
        sep += separation_cost(fm, m.heads[1], item.label);
        ir += interpretability_regularization(snap, m, *item.image, mask,
                                              RegPlacement::similarity);
    }
    ce /= 2;
    clst /= 2;
    sep /= 2;
    ir /= 2;
    CHECK(bd.ce == doctest::Approx(ce).epsilon(1e-10));
    CHECK(bd.clst == doctest::Approx(clst).epsilon(1e-10));
    CHECK(bd.sep == doctest::Approx(sep).epsilon(1e-10));
    CHECK(bd.ir == doctest::Approx(ir).epsilon(1e-10));
    CHECK(bd.total ==
          doctest::Approx(w.ce * ce + w.clst * clst + w.sep * sep + w.ir * ir).epsilon(1e-10));
    CHECK(bd.ir > 0.0);
}

TEST_CASE("mask ranking property: mask depends only on the snapshot map ranking") {
    Rng rng(10);
    std::vector<double> map(16);
    for (auto& v : map) v = rng.uniform();
    auto base = top_mask(map, 4);
    // monotone transform preserves the ranking, hence the mask
    std::vector<double> warped(16);
    for (std::size_t i = 0; i < 16; ++i) warped[i] = std::exp(3.0 * map[i]) + 1.0;
    auto same = top_mask(warped, 4);
    CHECK(std::vector<std::size_t>(base.begin(), base.end()) ==
          std::vector<std::size_t>(same.begin(), same.end()));
}
