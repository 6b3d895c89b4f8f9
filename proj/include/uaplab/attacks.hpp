#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "uaplab/dataset.hpp"
#include "uaplab/model.hpp"

namespace uaplab {

enum class NormType { linf, l2 };

const char* norm_name(NormType p);
NormType parse_norm(const std::string& name);

// A single image-agnostic perturbation constrained to the lp ball of radius
// xi. The payload is float32, matching the on-disk format exactly.
struct PerturbationVector {
    Shape shape{};
    std::vector<float> v;
    NormType p = NormType::linf;
    double xi = 0.04;
    std::string source_model;
    std::uint64_t seed = 0;
    int passes = 0;
    double final_fooling_ratio = 0.0;
    std::vector<double> history; // fooling ratio after each pass

    ImageTensor as_tensor() const;
    static PerturbationVector zeros(Shape shape, NormType p, double xi);
};

struct AttackConfig {
    double xi = 0.04;
    NormType p = NormType::linf;
    double target_fooling = 0.9; // stopping rule is strict: ratio > target
    int max_passes = 50;
    int deepfool_max_iter = 50;
    double overshoot = 0.02;
    std::uint64_t shuffle_seed = 0;
};

// p = inf: coordinate clamp to [-xi, xi]; p = 2: radial rescale when outside.
ImageTensor project_lp_ball(const ImageTensor& v, NormType p, double xi);

struct DeepFoolResult {
    ImageTensor r;      // accumulated minimal perturbation, scaled by (1+overshoot)
    int iterations = 0;
    int source_label = 0;
    int flipped_label = 0;
};

// Minimal-perturbation attack stepping to the nearest linearized decision
// boundary. Throws MaxIterExceeded when the point cannot be flipped within
// the iteration budget.
DeepFoolResult deepfool(const Classifier& model, const ImageTensor& x,
                        const AttackConfig& config);
std::optional<DeepFoolResult> try_deepfool(const Classifier& model, const ImageTensor& x,
                                           const AttackConfig& config);

// Fraction of points whose prediction changes when v is added (reference is
// the model's own clean prediction, not the true label).
double fooling_ratio(const Classifier& model, const LabeledDataset& dataset,
                     const PerturbationVector& v, int jobs = 1);

class TargetNotReached : public Error {
public:
    TargetNotReached(std::string msg, PerturbationVector best)
        : Error(std::move(msg)), best_so_far(std::move(best)) {}
    PerturbationVector best_so_far;
};

// Accumulates DeepFool steps over D_p with lp projection until the fooling
// ratio strictly exceeds target_fooling or max_passes is exhausted (then
// TargetNotReached carries the best vector seen).
PerturbationVector generate_uap(const Classifier& model, const LabeledDataset& dp,
                                const AttackConfig& config, const std::string& source_model_id,
                                int jobs = 1);

// x_adv = clip(x + eps * sign(d loss / d x), 0, 1)
ImageTensor fgsm(const Classifier& model, const ImageTensor& x, int y, double eps);

// Every image replaced by clip(x + v, 0, 1); ids, grades and order unchanged.
LabeledDataset perturb_dataset(const LabeledDataset& dataset, const PerturbationVector& v);

// Binary perturbation file: magic "UAPV", version u16 LE, norm byte
// (0 = inf, 1 = 2), xi f32 LE, ndim u8, dims u32 LE each, payload f32 LE
// row-major, trailing CRC32; plus a .json sidecar with generation metadata.
constexpr std::uint16_t kPerturbationVersion = 1;

void save_perturbation(const PerturbationVector& v, const std::string& path);
PerturbationVector load_perturbation(const std::string& path);

} // namespace uaplab
