#pragma once

#include <cstddef>
#include <vector>

#include "icicle/model.hpp"

namespace icicle {

struct LossWeights {
    double ce = 1.0;
    double clst = 0.8;
    double sep = -0.08;  // negative: larger separation lowers the total
    // the small from-scratch backbone drifts far more per task than a
    // pretrained one would, so the regularizer needs substantial weight
    // to hold old similarity maps in place
    double ir = 0.3;
};

enum class RegPlacement { feature, distance, similarity };

struct MaskConfig {
    double gamma = 1.0 / 49.0;  // fraction of map cells kept in the mask

    std::size_t pixel_count(std::size_t cells) const;
    void validate() const;
};

// Indices of the m largest cells of `map`, ties broken by smallest
// row-major index. The mask is a function of the ranking only.
std::vector<std::size_t> top_mask(const std::vector<double>& map, std::size_t m);

// Per-image teacher state precomputed from a frozen snapshot: its feature
// map, its head evaluations, and the per-prototype top-m masks taken from
// the snapshot similarity maps. Reused across epochs since the snapshot
// never changes within a task.
struct SnapTeacher {
    FeatureMap features;
    std::vector<HeadEval> heads;
    std::vector<std::vector<std::vector<std::size_t>>> masks;  // [head][proto] -> cells
};

SnapTeacher make_teacher(const Snapshot& snap, const TensorF& image, const MaskConfig& mask);

// min over own-class prototypes and patches of ||z - p||_2.
double cluster_cost(const FeatureMap& fm, const PrototypeHead& head, int class_label);

// min over other-class prototypes (same head) and patches. A single-class
// head has no other-class prototypes; returns 0 and sets *degenerate.
double separation_cost(const FeatureMap& fm, const PrototypeHead& head, int class_label,
                       bool* degenerate = nullptr);

// Masked similarity distillation: per old prototype, the masked absolute
// change between the snapshot map and the current map, averaged over all
// old prototypes. Returns 0 when the snapshot has no heads.
double interpretability_regularization(const Snapshot& snap, const IcicleModel& model,
                                       const TensorF& image, const MaskConfig& mask,
                                       RegPlacement placement);

double cross_entropy_full(const IcicleModel& model, const TensorF& image, int global_label);

// Distillation terms folded into the total loss by baseline methods.
struct AuxTerms {
    double lwf_weight = 0.0;
    double lwf_temperature = 2.0;
};

struct BatchItem {
    const TensorF* image = nullptr;
    int label = 0;                        // global class id
    const SnapTeacher* teacher = nullptr; // required when a snapshot is in play
};

struct LossBreakdown {
    double total = 0.0, ce = 0.0, clst = 0.0, sep = 0.0, ir = 0.0, aux = 0.0;
};

// Mean over the batch of ce*λ_ce + clst*λ_clst + sep*λ_sep + L_IR*λ_ir plus
// any aux distillation term. When with_grads is set, accumulates analytic
// gradients into the parameter .grad buffers (callers zero them first).
// Cluster/separation apply to the head owning each item's label; L_IR and
// LwF need item teachers and are skipped when the snapshot has no heads.
LossBreakdown total_loss(IcicleModel& model, const Snapshot* snap,
                         const std::vector<BatchItem>& batch, const LossWeights& weights,
                         const MaskConfig& mask, RegPlacement placement, bool with_grads,
                         const AuxTerms& aux = {});

}  // namespace icicle
