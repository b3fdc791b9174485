#include "icicle/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "icicle/optim.hpp"
#include "icicle/rng.hpp"

namespace icicle {

void ModelConfig::validate() const {
    if (proto_dim == 0) throw std::invalid_argument("ModelConfig: proto_dim must be positive");
    if (protos_per_class == 0)
        throw std::invalid_argument("ModelConfig: protos_per_class must be positive");
    if (!(eta > 0.0 && eta < 1.0)) throw std::invalid_argument("ModelConfig: eta must be in (0,1)");
    if (backbone.empty()) throw std::invalid_argument("ModelConfig: backbone must be nonempty");
}

PrototypeHead PrototypeHead::make(int task_id, std::vector<int> classes,
                                  std::size_t protos_per_class, TensorF prototypes) {
    PrototypeHead head;
    head.task_id = task_id;
    head.classes = std::move(classes);
    head.protos_per_class = protos_per_class;
    head.prototypes = std::move(prototypes);
    std::size_t m = head.num_protos();
    std::size_t c = head.classes.size();
    head.assignment.assign(m * c, 0);
    for (std::size_t i = 0; i < m; ++i) head.assignment[i * c + head.class_of(i)] = 1;
    head.validate();
    return head;
}

void PrototypeHead::validate() const {
    if (classes.empty()) throw std::invalid_argument("PrototypeHead: empty class list");
    if (protos_per_class == 0) throw std::invalid_argument("PrototypeHead: K must be positive");
    if (prototypes.shape.size() != 2)
        throw std::invalid_argument("PrototypeHead: prototypes must be M x D");
    if (num_protos() != protos_per_class * classes.size())
        throw std::invalid_argument("PrototypeHead: M != K * |C|");
    if (assignment.size() != num_protos() * classes.size())
        throw std::invalid_argument("PrototypeHead: assignment size mismatch");
    for (std::size_t i = 0; i < num_protos(); ++i) {
        std::size_t row_sum = 0;
        for (std::size_t c = 0; c < classes.size(); ++c) {
            std::uint8_t a = assignment[i * classes.size() + c];
            if (a > 1) throw std::invalid_argument("PrototypeHead: assignment entries must be 0/1");
            row_sum += a;
        }
        if (row_sum != 1)
            throw std::invalid_argument("PrototypeHead: each prototype owns exactly one class");
    }
}

IcicleModel IcicleModel::build(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    IcicleModel m;
    m.cfg = cfg;
    Rng rng(seed);
    std::size_t cin = cfg.image_c;
    for (const ConvLayerSpec& spec : cfg.backbone) {
        std::size_t k = static_cast<std::size_t>(spec.kernel);
        std::size_t fan_in = k * k * cin;
        std::size_t fan_out = k * k * spec.out_channels;
        ConvLayer layer;
        layer.w = xavier_normal_init({k, k, cin, spec.out_channels}, fan_in, fan_out,
                                     rng.next_u64());
        layer.b = TensorF::zeros({spec.out_channels});
        layer.stride = spec.stride;
        layer.pad = spec.pad;
        m.backbone.push_back(std::move(layer));
        cin = spec.out_channels;
    }
    m.addon1.w = xavier_normal_init({1, 1, cin, cfg.proto_dim}, cin, cfg.proto_dim,
                                    rng.next_u64());
    m.addon1.b = TensorF::zeros({cfg.proto_dim});
    m.addon2.w = xavier_normal_init({1, 1, cfg.proto_dim, cfg.proto_dim}, cfg.proto_dim,
                                    cfg.proto_dim, rng.next_u64());
    m.addon2.b = TensorF::zeros({cfg.proto_dim});
    return m;
}

std::vector<std::pair<std::string, TensorF*>> IcicleModel::shared_params() {
    std::vector<std::pair<std::string, TensorF*>> out;
    for (std::size_t i = 0; i < backbone.size(); ++i) {
        out.emplace_back("backbone" + std::to_string(i) + ".w", &backbone[i].w);
        out.emplace_back("backbone" + std::to_string(i) + ".b", &backbone[i].b);
    }
    out.emplace_back("addon1.w", &addon1.w);
    out.emplace_back("addon1.b", &addon1.b);
    out.emplace_back("addon2.w", &addon2.w);
    out.emplace_back("addon2.b", &addon2.b);
    return out;
}

std::vector<std::pair<std::string, const TensorF*>> IcicleModel::shared_params() const {
    std::vector<std::pair<std::string, const TensorF*>> out;
    auto mut = const_cast<IcicleModel*>(this)->shared_params();
    out.reserve(mut.size());
    for (auto& [name, p] : mut) out.emplace_back(name, p);
    return out;
}

std::vector<std::pair<std::string, TensorF*>> IcicleModel::all_params() {
    auto out = shared_params();
    for (std::size_t h = 0; h < heads.size(); ++h)
        out.emplace_back("head" + std::to_string(heads[h].task_id) + ".prototypes",
                         &heads[h].prototypes);
    return out;
}

std::size_t IcicleModel::total_classes() const {
    std::size_t n = 0;
    for (const auto& h : heads) n += h.num_classes();
    return n;
}

std::vector<int> IcicleModel::global_classes() const {
    std::vector<int> out;
    for (const auto& h : heads) out.insert(out.end(), h.classes.begin(), h.classes.end());
    return out;
}

std::size_t IcicleModel::logit_index(int class_id) const {
    std::size_t offset = 0;
    for (const auto& h : heads) {
        for (std::size_t c = 0; c < h.classes.size(); ++c)
            if (h.classes[c] == class_id) return offset + c;
        offset += h.classes.size();
    }
    throw std::invalid_argument("IcicleModel: unknown class id " + std::to_string(class_id));
}

std::size_t IcicleModel::feature_h() const {
    std::size_t h = cfg.image_h;
    for (const auto& spec : cfg.backbone)
        h = (h + 2 * static_cast<std::size_t>(spec.pad) - static_cast<std::size_t>(spec.kernel)) /
                static_cast<std::size_t>(spec.stride) + 1;
    return h;
}

std::size_t IcicleModel::feature_w() const {
    std::size_t w = cfg.image_w;
    for (const auto& spec : cfg.backbone)
        w = (w + 2 * static_cast<std::size_t>(spec.pad) - static_cast<std::size_t>(spec.kernel)) /
                static_cast<std::size_t>(spec.stride) + 1;
    return w;
}

void IcicleModel::zero_grads() {
    for (auto& [name, p] : all_params()) {
        p->alloc_grad();
        p->zero_grad();
    }
}

void IcicleModel::validate() const {
    cfg.validate();
    int expected_id = 1;
    std::vector<int> seen;
    for (const auto& h : heads) {
        h.validate();
        if (h.task_id != expected_id++)
            throw std::invalid_argument("IcicleModel: head task ids must be contiguous from 1");
        if (h.prototypes.shape[1] != cfg.proto_dim)
            throw std::invalid_argument("IcicleModel: head prototype depth mismatch");
        for (int c : h.classes) {
            for (int s : seen)
                if (s == c)
                    throw std::invalid_argument("IcicleModel: class " + std::to_string(c) +
                                                " appears in two heads");
            seen.push_back(c);
        }
    }
}

Snapshot snapshot(const IcicleModel& model, int task_id) {
    Snapshot s;
    s.task_id = task_id;
    s.model = model;  // deep copy: all members are value types
    return s;
}

FeatureMap forward_features(const IcicleModel& model, const TensorF& image,
                            ForwardCache* cache) {
    if (image.shape != std::vector<std::size_t>{model.cfg.image_h, model.cfg.image_w,
                                                model.cfg.image_c})
        throw std::invalid_argument("forward_features: image shape " + image.shape_str() +
                                    " does not match config");
    TensorF x = image;
    auto store = [&](TensorF in, TensorF pre) {
        if (cache) {
            cache->inputs.push_back(std::move(in));
            cache->preacts.push_back(std::move(pre));
        }
    };
    if (cache) {
        cache->inputs.clear();
        cache->preacts.clear();
    }
    for (const ConvLayer& layer : model.backbone) {
        TensorF pre = conv2d(x, layer.w, layer.b, layer.stride, layer.pad);
        TensorF post = activation(pre, Activation::relu);
        store(std::move(x), std::move(pre));
        x = std::move(post);
    }
    TensorF pre1 = conv2d(x, model.addon1.w, model.addon1.b, 1, 0);
    TensorF mid = activation(pre1, Activation::relu);
    store(std::move(x), std::move(pre1));
    TensorF pre2 = conv2d(mid, model.addon2.w, model.addon2.b, 1, 0);
    TensorF out = activation(pre2, Activation::sigmoid);
    store(std::move(mid), std::move(pre2));

    FeatureMap fm;
    fm.h = out.shape[0];
    fm.w = out.shape[1];
    fm.d = out.shape[2];
    fm.values = std::move(out.data);
    return fm;
}

void backward_features(IcicleModel& model, const ForwardCache& cache,
                       const std::vector<double>& d_features, double scale) {
    std::size_t n_layers = model.backbone.size() + 2;
    if (cache.inputs.size() != n_layers || cache.preacts.size() != n_layers)
        throw std::invalid_argument("backward_features: cache does not match model");

    const TensorF& pre2 = cache.preacts.back();
    if (d_features.size() != pre2.numel())
        throw std::invalid_argument("backward_features: gradient size mismatch");

    // sigmoid tail
    TensorF d_pre2(pre2.shape);
    for (std::size_t i = 0; i < pre2.numel(); ++i) {
        double s = sigmoid(pre2.data[i]);
        d_pre2.data[i] = scale * d_features[i] * s * (1.0 - s);
    }

    auto layer_of = [&](std::size_t idx) -> ConvLayer& {
        if (idx < model.backbone.size()) return model.backbone[idx];
        return idx == model.backbone.size() ? model.addon1 : model.addon2;
    };

    TensorF d_pre = std::move(d_pre2);
    for (std::size_t idx = n_layers; idx-- > 0;) {
        ConvLayer& layer = layer_of(idx);
        layer.w.alloc_grad();
        layer.b.alloc_grad();
        TensorF dw(layer.w.shape), db(layer.b.shape);
        TensorF din(cache.inputs[idx].shape);
        conv2d_backward(cache.inputs[idx], layer.w, layer.stride, layer.pad, d_pre,
                        idx > 0 ? &din : nullptr, &dw, &db);
        for (std::size_t i = 0; i < dw.numel(); ++i) layer.w.grad[i] += dw.data[i];
        for (std::size_t i = 0; i < db.numel(); ++i) layer.b.grad[i] += db.data[i];
        if (idx == 0) break;
        // din is the gradient at the previous layer's post-activation output
        TensorF d_prev(cache.preacts[idx - 1].shape);
        activation_backward(cache.preacts[idx - 1], Activation::relu, din, d_prev);
        d_pre = std::move(d_prev);
    }
}

double similarity(double dist, double eta) {
    return std::log((dist + 1.0) / (dist + eta));
}

double similarity_deriv(double dist, double eta) {
    return 1.0 / (dist + 1.0) - 1.0 / (dist + eta);
}

double patch_distance(const double* z, const double* p, std::size_t d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        double diff = z[i] - p[i];
        s += diff * diff;
    }
    return std::sqrt(s + 1e-12);
}

std::vector<double> similarity_map(const FeatureMap& fm, const double* proto, double eta) {
    std::vector<double> out(fm.cells());
    for (std::size_t cell = 0; cell < fm.cells(); ++cell)
        out[cell] = similarity(patch_distance(fm.patch(cell), proto, fm.d), eta);
    return out;
}

HeadEval eval_head(const FeatureMap& fm, const PrototypeHead& head, double eta) {
    if (fm.d != head.prototypes.shape[1])
        throw std::invalid_argument("eval_head: feature depth does not match prototypes");
    HeadEval ev;
    ev.protos.resize(head.num_protos());
    ev.logits.assign(head.num_classes(), 0.0);
    for (std::size_t i = 0; i < head.num_protos(); ++i) {
        ProtoEval& pe = ev.protos[i];
        const double* p = &head.prototypes.data[i * fm.d];
        pe.dist.resize(fm.cells());
        pe.sim.resize(fm.cells());
        pe.argmax = 0;
        for (std::size_t cell = 0; cell < fm.cells(); ++cell) {
            pe.dist[cell] = patch_distance(fm.patch(cell), p, fm.d);
            pe.sim[cell] = similarity(pe.dist[cell], eta);
            if (pe.sim[cell] > pe.sim[pe.argmax]) pe.argmax = cell;
        }
        pe.max_sim = pe.sim[pe.argmax];
        ev.logits[head.class_of(i)] += pe.max_sim;
    }
    return ev;
}

ModelEval eval_model(const IcicleModel& model, const TensorF& image, bool with_cache) {
    ModelEval ev;
    ev.features = forward_features(model, image, with_cache ? &ev.cache : nullptr);
    for (const PrototypeHead& head : model.heads) {
        ev.heads.push_back(eval_head(ev.features, head, model.cfg.eta));
        const HeadEval& he = ev.heads.back();
        ev.full_logits.insert(ev.full_logits.end(), he.logits.begin(), he.logits.end());
    }
    return ev;
}

std::vector<double> full_forward(const IcicleModel& model, const TensorF& image) {
    if (model.heads.empty()) throw std::invalid_argument("full_forward: model has no heads");
    return eval_model(model, image).full_logits;
}

void project_prototypes(IcicleModel& model, std::size_t head_index,
                        const std::map<int, std::vector<const TensorF*>>& images_by_class) {
    if (head_index >= model.heads.size())
        throw std::invalid_argument("project_prototypes: bad head index");
    PrototypeHead& head = model.heads[head_index];
    std::size_t d = head.prototypes.shape[1];

    // precompute feature maps per class; fail before touching the head
    std::map<int, std::vector<FeatureMap>> maps;
    for (int cls : head.classes) {
        auto it = images_by_class.find(cls);
        if (it == images_by_class.end() || it->second.empty())
            throw std::invalid_argument("project_prototypes: no images for class " +
                                        std::to_string(cls));
        for (const TensorF* img : it->second)
            maps[cls].push_back(forward_features(model, *img));
    }

    for (std::size_t i = 0; i < head.num_protos(); ++i) {
        int cls = head.classes[head.class_of(i)];
        const double* p = &head.prototypes.data[i * d];
        double best = std::numeric_limits<double>::infinity();
        const double* best_patch = nullptr;
        for (const FeatureMap& fm : maps[cls]) {
            for (std::size_t cell = 0; cell < fm.cells(); ++cell) {
                double dist = patch_distance(fm.patch(cell), p, d);
                if (dist < best) {
                    best = dist;
                    best_patch = fm.patch(cell);
                }
            }
        }
        for (std::size_t c = 0; c < d; ++c) head.prototypes.data[i * d + c] = best_patch[c];
    }
}

}  // namespace icicle
