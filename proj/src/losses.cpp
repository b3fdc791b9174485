#include "icicle/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace icicle {

namespace {

std::size_t local_class_index(const PrototypeHead& head, int class_label) {
    for (std::size_t c = 0; c < head.classes.size(); ++c)
        if (head.classes[c] == class_label) return c;
    throw std::invalid_argument("class " + std::to_string(class_label) + " not in head " +
                                std::to_string(head.task_id));
}

double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Gradient buffers for one image. Feature gradients flow through the
// backbone afterwards; prototype gradients go straight into head buffers.
struct GradSink {
    std::vector<double> dfeat;
    std::vector<std::vector<double>> dproto;  // per head, M*D

    GradSink(const IcicleModel& model, const FeatureMap& fm) {
        dfeat.assign(fm.values.size(), 0.0);
        for (const auto& head : model.heads) dproto.emplace_back(head.prototypes.numel(), 0.0);
    }
};

// coeff is d(loss)/d(distance) at one (prototype, cell) pair.
void add_dist_grad(const FeatureMap& fm, const PrototypeHead& head, const ProtoEval& pe,
                   std::size_t proto, std::size_t cell, double coeff, GradSink& sink,
                   std::size_t head_idx) {
    double dist = pe.dist[cell];
    const double* z = fm.patch(cell);
    const double* p = &head.prototypes.data[proto * fm.d];
    for (std::size_t c = 0; c < fm.d; ++c) {
        double dd = (z[c] - p[c]) / dist;
        sink.dfeat[cell * fm.d + c] += coeff * dd;
        sink.dproto[head_idx][proto * fm.d + c] -= coeff * dd;
    }
}

// coeff is d(loss)/d(sim) at one (prototype, cell) pair.
void add_sim_grad(const FeatureMap& fm, const PrototypeHead& head, const ProtoEval& pe,
                  std::size_t proto, std::size_t cell, double coeff, double eta,
                  GradSink& sink, std::size_t head_idx) {
    add_dist_grad(fm, head, pe, proto, cell, coeff * similarity_deriv(pe.dist[cell], eta),
                  sink, head_idx);
}

struct MinPair {
    double value = std::numeric_limits<double>::infinity();
    std::size_t proto = 0, cell = 0;
};

MinPair min_distance(const HeadEval& ev, const PrototypeHead& head, std::size_t local_class,
                     bool own_class) {
    MinPair best;
    for (std::size_t i = 0; i < head.num_protos(); ++i) {
        if ((head.class_of(i) == local_class) != own_class) continue;
        const auto& dist = ev.protos[i].dist;
        for (std::size_t cell = 0; cell < dist.size(); ++cell) {
            if (dist[cell] < best.value) {
                best.value = dist[cell];
                best.proto = i;
                best.cell = cell;
            }
        }
    }
    return best;
}

}  // namespace

std::size_t MaskConfig::pixel_count(std::size_t cells) const {
    validate();
    auto m = static_cast<std::size_t>(std::llround(gamma * static_cast<double>(cells)));
    return std::clamp<std::size_t>(m, 1, cells);
}

void MaskConfig::validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0))
        throw std::invalid_argument("MaskConfig: gamma must be in (0,1]");
}

std::vector<std::size_t> top_mask(const std::vector<double>& map, std::size_t m) {
    std::vector<std::size_t> idx(map.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return map[a] > map[b]; });
    idx.resize(std::min(m, idx.size()));
    return idx;
}

SnapTeacher make_teacher(const Snapshot& snap, const TensorF& image, const MaskConfig& mask) {
    SnapTeacher t;
    t.features = forward_features(snap.model, image);
    for (const auto& head : snap.model.heads) {
        t.heads.push_back(eval_head(t.features, head, snap.model.cfg.eta));
        const HeadEval& he = t.heads.back();
        std::size_t m = mask.pixel_count(t.features.cells());
        std::vector<std::vector<std::size_t>> head_masks;
        for (const auto& pe : he.protos) head_masks.push_back(top_mask(pe.sim, m));
        t.masks.push_back(std::move(head_masks));
    }
    return t;
}

double cluster_cost(const FeatureMap& fm, const PrototypeHead& head, int class_label) {
    std::size_t lc = local_class_index(head, class_label);
    HeadEval ev = eval_head(fm, head, 0.5);  // eta unused for distances
    return min_distance(ev, head, lc, true).value;
}

double separation_cost(const FeatureMap& fm, const PrototypeHead& head, int class_label,
                       bool* degenerate) {
    std::size_t lc = local_class_index(head, class_label);
    if (degenerate) *degenerate = head.num_classes() < 2;
    if (head.num_classes() < 2) return 0.0;
    HeadEval ev = eval_head(fm, head, 0.5);
    return min_distance(ev, head, lc, false).value;
}

double cross_entropy_full(const IcicleModel& model, const TensorF& image, int global_label) {
    std::vector<double> logits = full_forward(model, image);
    return softmax_cross_entropy(logits, model.logit_index(global_label)).first;
}

namespace {

// Shared by the public wrapper and total_loss. `ev` must cover at least the
// snapshot's heads with the current model's parameters.
double ir_value_and_grads(const SnapTeacher& teacher, const IcicleModel& model,
                          const ModelEval& ev, RegPlacement placement, double grad_coeff,
                          GradSink* sink) {
    std::size_t n_old = 0;
    for (const auto& he : teacher.heads) n_old += he.protos.size();
    if (n_old == 0) return 0.0;

    const FeatureMap& fnew = ev.features;
    const FeatureMap& fold = teacher.features;
    if (fnew.h != fold.h || fnew.w != fold.w || fnew.d != fold.d)
        throw std::invalid_argument("interpretability regularization: map shape mismatch");

    double total = 0.0;
    double scale = 1.0 / static_cast<double>(n_old);
    for (std::size_t h = 0; h < teacher.heads.size(); ++h) {
        const PrototypeHead& head = model.heads[h];
        for (std::size_t i = 0; i < teacher.heads[h].protos.size(); ++i) {
            const ProtoEval& old_pe = teacher.heads[h].protos[i];
            const ProtoEval& new_pe = ev.heads[h].protos[i];
            for (std::size_t cell : teacher.masks[h][i]) {
                switch (placement) {
                    case RegPlacement::similarity: {
                        double diff = old_pe.sim[cell] - new_pe.sim[cell];
                        total += std::fabs(diff) * scale;
                        if (sink)
                            add_sim_grad(fnew, head, new_pe, i, cell,
                                         -sgn(diff) * grad_coeff * scale, model.cfg.eta,
                                         *sink, h);
                        break;
                    }
                    case RegPlacement::distance: {
                        double diff = old_pe.dist[cell] - new_pe.dist[cell];
                        total += std::fabs(diff) * scale;
                        if (sink)
                            add_dist_grad(fnew, head, new_pe, i, cell,
                                          -sgn(diff) * grad_coeff * scale, *sink, h);
                        break;
                    }
                    case RegPlacement::feature: {
                        double cell_val = 0.0;
                        for (std::size_t c = 0; c < fnew.d; ++c) {
                            double diff = fnew.values[cell * fnew.d + c] -
                                          fold.values[cell * fold.d + c];
                            cell_val += std::fabs(diff);
                            if (sink)
                                sink->dfeat[cell * fnew.d + c] +=
                                    sgn(diff) * grad_coeff * scale /
                                    static_cast<double>(fnew.d);
                        }
                        total += cell_val * scale / static_cast<double>(fnew.d);
                        break;
                    }
                }
            }
        }
    }
    return total;
}

}  // namespace

double interpretability_regularization(const Snapshot& snap, const IcicleModel& model,
                                       const TensorF& image, const MaskConfig& mask,
                                       RegPlacement placement) {
    if (snap.model.heads.empty()) return 0.0;
    SnapTeacher teacher = make_teacher(snap, image, mask);
    ModelEval ev = eval_model(model, image);
    return ir_value_and_grads(teacher, model, ev, placement, 0.0, nullptr);
}

LossBreakdown total_loss(IcicleModel& model, const Snapshot* snap,
                         const std::vector<BatchItem>& batch, const LossWeights& weights,
                         const MaskConfig& mask, RegPlacement placement, bool with_grads,
                         const AuxTerms& aux) {
    if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
    if (weights.ce <= 0.0) throw std::invalid_argument("total_loss: ce weight must be positive");

    bool snap_active = snap && !snap->model.heads.empty();
    double inv_n = 1.0 / static_cast<double>(batch.size());
    LossBreakdown out;

    for (const BatchItem& item : batch) {
        ModelEval ev = eval_model(model, *item.image, with_grads);

        // locate the head owning this label (the "current" head for
        // cluster/separation purposes)
        std::size_t cur_head = model.heads.size();
        std::size_t lc = 0;
        for (std::size_t h = 0; h < model.heads.size(); ++h) {
            const auto& cls = model.heads[h].classes;
            for (std::size_t c = 0; c < cls.size(); ++c)
                if (cls[c] == item.label) {
                    cur_head = h;
                    lc = c;
                }
        }
        if (cur_head == model.heads.size())
            throw std::invalid_argument("total_loss: label outside known classes");

        auto [ce, dlogits] = softmax_cross_entropy(ev.full_logits, model.logit_index(item.label));
        out.ce += ce * inv_n;
        for (auto& g : dlogits) g *= weights.ce * inv_n;

        const PrototypeHead& head = model.heads[cur_head];
        MinPair clst = min_distance(ev.heads[cur_head], head, lc, true);
        out.clst += clst.value * inv_n;
        MinPair sep;
        bool have_sep = head.num_classes() >= 2;
        if (have_sep) {
            sep = min_distance(ev.heads[cur_head], head, lc, false);
            out.sep += sep.value * inv_n;
        }

        if (snap_active && (weights.ir != 0.0 || aux.lwf_weight != 0.0) && !item.teacher)
            throw std::invalid_argument("total_loss: snapshot present but item has no teacher");

        // LwF-style distillation over old heads, folded into the logit grads
        if (snap_active && aux.lwf_weight != 0.0) {
            const SnapTeacher& t = *item.teacher;
            double temp = aux.lwf_temperature;
            std::size_t offset = 0;
            for (std::size_t h = 0; h < t.heads.size(); ++h) {
                std::vector<double> zo = t.heads[h].logits, zn = ev.heads[h].logits;
                for (auto& v : zo) v /= temp;
                for (auto& v : zn) v /= temp;
                std::vector<double> po = softmax(zo), qn = softmax(zn);
                double kl = 0.0;
                for (std::size_t c = 0; c < po.size(); ++c)
                    kl += po[c] * (std::log(po[c]) - std::log(qn[c]));
                out.aux += temp * temp * kl * inv_n;
                for (std::size_t c = 0; c < po.size(); ++c)
                    dlogits[offset + c] += aux.lwf_weight * inv_n * temp * (qn[c] - po[c]);
                offset += po.size();
            }
        }

        GradSink sink(model, ev.features);
        double ir = 0.0;
        if (snap_active && weights.ir != 0.0)
            ir = ir_value_and_grads(*item.teacher, model, ev, placement,
                                    with_grads ? weights.ir * inv_n : 0.0,
                                    with_grads ? &sink : nullptr);
        out.ir += ir * inv_n;

        if (!with_grads) continue;

        // cross-entropy (+ distillation) through each prototype's max cell
        std::size_t offset = 0;
        for (std::size_t h = 0; h < model.heads.size(); ++h) {
            const PrototypeHead& hd = model.heads[h];
            for (std::size_t i = 0; i < hd.num_protos(); ++i) {
                const ProtoEval& pe = ev.heads[h].protos[i];
                double coeff = dlogits[offset + hd.class_of(i)];
                if (coeff != 0.0)
                    add_sim_grad(ev.features, hd, pe, i, pe.argmax, coeff, model.cfg.eta,
                                 sink, h);
            }
            offset += hd.num_classes();
        }

        add_dist_grad(ev.features, head, ev.heads[cur_head].protos[clst.proto], clst.proto,
                      clst.cell, weights.clst * inv_n, sink, cur_head);
        if (have_sep)
            add_dist_grad(ev.features, head, ev.heads[cur_head].protos[sep.proto], sep.proto,
                          sep.cell, weights.sep * inv_n, sink, cur_head);

        backward_features(model, ev.cache, sink.dfeat, 1.0);
        for (std::size_t h = 0; h < model.heads.size(); ++h) {
            TensorF& protos = model.heads[h].prototypes;
            protos.alloc_grad();
            for (std::size_t i = 0; i < protos.numel(); ++i)
                protos.grad[i] += sink.dproto[h][i];
        }
    }

    out.total = weights.ce * out.ce + weights.clst * out.clst + weights.sep * out.sep +
                weights.ir * out.ir + aux.lwf_weight * out.aux;
    if (!std::isfinite(out.total)) throw std::runtime_error("total_loss: non-finite loss");
    return out;
}

}  // namespace icicle
