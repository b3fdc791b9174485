#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "icicle/kernels.hpp"
#include "icicle/tensor.hpp"

namespace icicle {

struct ConvLayerSpec {
    int kernel = 3;
    int stride = 1;
    int pad = 0;
    std::size_t out_channels = 16;
};

// Desk-scale default: three convolutions taking a 32x32 image to a 7x7
// spatial map (32 -> 16 -> 8 -> 7), then a two-layer 1x1 add-on ending in a
// sigmoid.
struct ModelConfig {
    std::size_t image_h = 32, image_w = 32, image_c = 3;
    std::vector<ConvLayerSpec> backbone = {
        {4, 2, 1, 16}, {4, 2, 1, 32}, {2, 1, 0, 32}};
    std::size_t proto_dim = 32;        // D
    std::size_t protos_per_class = 3;  // K
    double eta = 1e-4;                 // similarity epsilon

    void validate() const;
};

// Post-sigmoid feature grid; every cell holds a D-dimensional patch vector
// with entries in (0,1).
struct FeatureMap {
    std::size_t h = 0, w = 0, d = 0;
    std::vector<double> values;  // h*w*d row-major

    const double* patch(std::size_t cell) const { return values.data() + cell * d; }
    const double* patch(std::size_t i, std::size_t j) const { return patch(i * w + j); }
    std::size_t cells() const { return h * w; }
};

// One task's prototype layer g^t plus its fixed {0,1} class-assignment
// matrix h^t. The assignment is built once and never trained.
struct PrototypeHead {
    int task_id = 0;
    std::vector<int> classes;              // global class ids
    std::size_t protos_per_class = 0;      // K
    TensorF prototypes;                    // [M, D], M = K * |classes|
    std::vector<std::uint8_t> assignment;  // M x |classes| row-major, entries {0,1}

    static PrototypeHead make(int task_id, std::vector<int> classes,
                              std::size_t protos_per_class, TensorF prototypes);

    std::size_t num_protos() const { return prototypes.shape.empty() ? 0 : prototypes.shape[0]; }
    std::size_t num_classes() const { return classes.size(); }
    // local class index owning prototype i
    std::size_t class_of(std::size_t proto) const { return proto / protos_per_class; }
    void validate() const;
};

struct ConvLayer {
    TensorF w;  // k x k x Cin x Cout
    TensorF b;  // Cout
    int stride = 1, pad = 0;
};

// Shared backbone f + add-on f_A and the ordered per-task prototype heads.
struct IcicleModel {
    ModelConfig cfg;
    std::vector<ConvLayer> backbone;
    ConvLayer addon1, addon2;  // 1x1 convolutions; sigmoid after addon2
    std::vector<PrototypeHead> heads;

    static IcicleModel build(const ModelConfig& cfg, std::uint64_t seed);

    std::vector<std::pair<std::string, TensorF*>> shared_params();
    std::vector<std::pair<std::string, const TensorF*>> shared_params() const;
    std::vector<std::pair<std::string, TensorF*>> all_params();

    std::size_t total_classes() const;
    // concatenated class list over heads, in head order
    std::vector<int> global_classes() const;
    // position of a global class id in the concatenated logit vector
    std::size_t logit_index(int class_id) const;
    std::size_t feature_h() const;
    std::size_t feature_w() const;

    void zero_grads();
    void validate() const;
};

// Immutable frozen copy of the model at a point in time.
struct Snapshot {
    int task_id = 0;
    IcicleModel model;
};

Snapshot snapshot(const IcicleModel& model, int task_id);

// Intermediate activations kept for the analytic backward pass.
struct ForwardCache {
    std::vector<TensorF> inputs;   // input to backbone conv i, then addon1, addon2
    std::vector<TensorF> preacts;  // pre-activation output of each of those convs
};

FeatureMap forward_features(const IcicleModel& model, const TensorF& image,
                            ForwardCache* cache = nullptr);

// Routes a gradient w.r.t. the feature map back into the parameter .grad
// buffers (allocating them if needed), scaled by `scale`.
void backward_features(IcicleModel& model, const ForwardCache& cache,
                       const std::vector<double>& d_features, double scale);

// sim(p, z) = log((d + 1) / (d + eta)) with d = ||z - p||_2.
double similarity(double dist, double eta);
double similarity_deriv(double dist, double eta);  // d sim / d dist
// L2 distance with a small epsilon inside the sqrt so it stays
// differentiable at coincident vectors.
double patch_distance(const double* z, const double* p, std::size_t d);

// Per-prototype evaluation on one feature map: full distance and similarity
// maps plus the argmax cell (ties broken by smallest row-major index).
struct ProtoEval {
    std::vector<double> dist;
    std::vector<double> sim;
    std::size_t argmax = 0;
    double max_sim = 0.0;
};

struct HeadEval {
    std::vector<ProtoEval> protos;
    std::vector<double> logits;  // per local class: sum of assigned max-sims
};

std::vector<double> similarity_map(const FeatureMap& fm, const double* proto, double eta);
HeadEval eval_head(const FeatureMap& fm, const PrototypeHead& head, double eta);

// Full forward pass: feature extraction plus every head.
struct ModelEval {
    ForwardCache cache;
    FeatureMap features;
    std::vector<HeadEval> heads;
    std::vector<double> full_logits;  // concatenated in head order
};

ModelEval eval_model(const IcicleModel& model, const TensorF& image, bool with_cache = false);
std::vector<double> full_forward(const IcicleModel& model, const TensorF& image);

// Replaces each prototype of `head_index` with the nearest latent patch
// drawn from images of its own class. Throws if some class has no images;
// the head is left untouched in that case.
void project_prototypes(IcicleModel& model, std::size_t head_index,
                        const std::map<int, std::vector<const TensorF*>>& images_by_class);

}  // namespace icicle
