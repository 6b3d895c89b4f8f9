#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uaplab/analysis.hpp"
#include "uaplab/attacks.hpp"
#include "uaplab/dataset.hpp"
#include "uaplab/model.hpp"
#include "uaplab/train.hpp"

namespace uaplab {

struct ZooMember {
    std::string model_id;
    ClassifierModel model;
    std::optional<PerturbationVector> uap;
};

// Ordered collection of models sharing input shape and class count.
class ModelZoo {
public:
    void add(std::string model_id, ClassifierModel model,
             std::optional<PerturbationVector> uap = std::nullopt);

    const std::vector<ZooMember>& members() const { return members_; }
    std::vector<ZooMember>& members() { return members_; }
    std::size_t size() const { return members_.size(); }
    bool empty() const { return members_.empty(); }
    const ZooMember& at(std::size_t i) const { return members_[i]; }
    ZooMember& at(std::size_t i) { return members_[i]; }

private:
    std::vector<ZooMember> members_;
};

// Fine-tunes on the training set perturbed by the model's own vector. A
// nonzero mix_ratio keeps that stratified fraction of the items clean.
// v_self must originate from model_id unless allow_source_mismatch.
TrainHistory adversarial_finetune(ClassifierModel& model, const std::string& model_id,
                                  const LabeledDataset& train, const PerturbationVector& v_self,
                                  const TrainConfig& config, double mix_ratio,
                                  const LabeledDataset& validation,
                                  bool allow_source_mismatch = false);

// Modal label; ties break on highest mean per-class probability when
// confidences are given, otherwise toward the lower class index.
int majority_vote(std::span<const int> labels,
                  const std::vector<std::vector<double>>* confidences = nullptr);

// subset: indices into the zoo; empty means all members.
std::vector<int> ensemble_predict(const ModelZoo& zoo, const std::vector<ImageTensor>& batch,
                                  std::span<const std::size_t> subset = {}, int jobs = 1);

EvalMetrics evaluate_model(const Classifier& model, const LabeledDataset& dataset,
                           int jobs = 1);
EvalMetrics evaluate_ensemble(const ModelZoo& zoo, const LabeledDataset& dataset,
                              std::span<const std::size_t> subset = {}, int jobs = 1);

// One row per perturbation source, columns are target models plus the
// majority-vote ensemble, entries are quadratic kappa on the perturbed
// dataset.
TransferMatrixReport transfer_matrix(const ModelZoo& zoo, const LabeledDataset& test,
                                     const std::string& eval_split_label, int jobs = 1);

} // namespace uaplab
