#include "uaplab/robustness.hpp"

#include <algorithm>
#include <map>

#include "uaplab/errors.hpp"
#include "uaplab/util.hpp"

namespace uaplab {

void ModelZoo::add(std::string model_id, ClassifierModel model,
                   std::optional<PerturbationVector> uap) {
    for (const auto& member : members_)
        if (member.model_id == model_id)
            throw Error("zoo already contains model id '" + model_id + "'");
    if (!members_.empty()) {
        if (model.num_classes() != members_.front().model.num_classes())
            throw ShapeMismatch("zoo members must share num_classes");
        if (model.input_shape() != members_.front().model.input_shape())
            throw ShapeMismatch("zoo members must share input_shape");
    }
    members_.push_back(ZooMember{std::move(model_id), std::move(model), std::move(uap)});
}

TrainHistory adversarial_finetune(ClassifierModel& model, const std::string& model_id,
                                  const LabeledDataset& train, const PerturbationVector& v_self,
                                  const TrainConfig& config, double mix_ratio,
                                  const LabeledDataset& validation,
                                  bool allow_source_mismatch) {
    if (!allow_source_mismatch && v_self.source_model != model_id)
        throw SourceMismatch("perturbation was generated by '" + v_self.source_model +
                             "', not '" + model_id + "'");
    if (mix_ratio < 0.0 || mix_ratio > 1.0)
        throw Error("adversarial_finetune: mix_ratio must be in [0,1]");

    LabeledDataset finetune_set;
    if (mix_ratio == 0.0) {
        finetune_set = perturb_dataset(train, v_self);
    } else if (mix_ratio == 1.0) {
        finetune_set = train;
    } else {
        auto [clean_part, adv_part] = stratified_split(train, mix_ratio, config.seed,
                                                       train.role, train.role);
        LabeledDataset perturbed = perturb_dataset(adv_part, v_self);
        finetune_set = clean_part;
        finetune_set.items.insert(finetune_set.items.end(), perturbed.items.begin(),
                                  perturbed.items.end());
    }

    // early stopping watches clean and perturbed validation jointly, so the
    // fine-tuned model keeps its clean competence while hardening
    LabeledDataset val_union = validation;
    LabeledDataset val_perturbed = perturb_dataset(validation, v_self);
    val_union.items.insert(val_union.items.end(), val_perturbed.items.begin(),
                           val_perturbed.items.end());
    return run_training(model, finetune_set, val_union, config,
                        config.max_epochs_finetune, false);
}

int majority_vote(std::span<const int> labels,
                  const std::vector<std::vector<double>>* confidences) {
    if (labels.empty()) throw EmptyVotes("majority_vote: no votes");
    std::map<int, int> tally;
    for (int label : labels) {
        if (label < 0) throw LabelOutOfRange("majority_vote: negative label");
        tally[label]++;
    }
    int top_count = 0;
    for (const auto& [label, count] : tally) top_count = std::max(top_count, count);

    std::vector<int> tied;
    for (const auto& [label, count] : tally)
        if (count == top_count) tied.push_back(label);
    if (tied.size() == 1) return tied.front();

    if (confidences && confidences->size() == labels.size()) {
        // highest mean probability among the tied classes; equal means fall
        // back to the lower index because of the strict comparison
        int best = tied.front();
        double best_mean = -1.0;
        for (int cls : tied) {
            double mean = 0.0;
            for (const auto& row : *confidences)
                mean += cls < static_cast<int>(row.size()) ? row[cls] : 0.0;
            mean /= static_cast<double>(confidences->size());
            if (mean > best_mean) {
                best_mean = mean;
                best = cls;
            }
        }
        return best;
    }
    return tied.front(); // map iterates ascending, so this is the lowest label
}

std::vector<int> ensemble_predict(const ModelZoo& zoo, const std::vector<ImageTensor>& batch,
                                  std::span<const std::size_t> subset, int jobs) {
    if (zoo.empty()) throw EmptyZoo("ensemble_predict: empty zoo");
    std::vector<std::size_t> all;
    if (subset.empty()) {
        all.resize(zoo.size());
        for (std::size_t i = 0; i < zoo.size(); ++i) all[i] = i;
        subset = all;
    }
    for (std::size_t idx : subset)
        if (idx >= zoo.size()) throw Error("ensemble_predict: subset index out of range");

    std::vector<int> result(batch.size());
    parallel_for(batch.size(), jobs, [&](std::size_t item) {
        std::vector<int> votes;
        std::vector<std::vector<double>> probs;
        votes.reserve(subset.size());
        probs.reserve(subset.size());
        for (std::size_t idx : subset) {
            auto logits = zoo.at(idx).model.logits(batch[item]);
            votes.push_back(argmax_label(logits));
            probs.push_back(softmax(logits));
        }
        result[item] = majority_vote(votes, &probs);
    });
    return result;
}

namespace {

EvalMetrics metrics_from_predictions(const std::vector<int>& truth,
                                     const std::vector<int>& pred, int num_classes) {
    EvalMetrics metrics;
    metrics.confusion = confusion_matrix(truth, pred, num_classes);
    metrics.kappa = quadratic_kappa_from_confusion(metrics.confusion);
    metrics.n_samples = static_cast<int>(truth.size());
    std::int64_t agree = 0;
    for (int i = 0; i < num_classes; ++i) agree += metrics.confusion[i][i];
    metrics.accuracy = static_cast<double>(agree) / static_cast<double>(truth.size());
    return metrics;
}

std::vector<ImageTensor> dataset_images(const LabeledDataset& dataset) {
    std::vector<ImageTensor> images;
    images.reserve(dataset.size());
    for (const auto& item : dataset.items) images.push_back(item.image);
    return images;
}

} // namespace

EvalMetrics evaluate_model(const Classifier& model, const LabeledDataset& dataset, int jobs) {
    if (dataset.empty()) throw EmptyDataset("evaluate_model: empty dataset");
    std::vector<int> pred = predict_batch(model, dataset_images(dataset), jobs);
    return metrics_from_predictions(dataset.grades(), pred, model.num_classes());
}

EvalMetrics evaluate_ensemble(const ModelZoo& zoo, const LabeledDataset& dataset,
                              std::span<const std::size_t> subset, int jobs) {
    if (zoo.empty()) throw EmptyZoo("evaluate_ensemble: empty zoo");
    if (dataset.empty()) throw EmptyDataset("evaluate_ensemble: empty dataset");
    std::vector<int> pred = ensemble_predict(zoo, dataset_images(dataset), subset, jobs);
    return metrics_from_predictions(dataset.grades(), pred,
                                    zoo.at(0).model.num_classes());
}

TransferMatrixReport transfer_matrix(const ModelZoo& zoo, const LabeledDataset& test,
                                     const std::string& eval_split_label, int jobs) {
    if (zoo.empty()) throw EmptyZoo("transfer_matrix: empty zoo");
    if (test.empty()) throw EmptyDataset("transfer_matrix: empty dataset");
    for (const auto& member : zoo.members())
        if (!member.uap)
            throw MissingPerturbation("no perturbation vector for model '" +
                                      member.model_id + "'");

    TransferMatrixReport report;
    report.eval_split = eval_split_label;
    report.dataset_sha256 = dataset_digest(test);
    for (const auto& member : zoo.members()) report.row_ids.push_back(member.model_id);
    report.col_ids = report.row_ids;
    report.col_ids.push_back("ensemble");

    nlohmann::json configs = nlohmann::json::object();
    for (const auto& member : zoo.members()) {
        const PerturbationVector& v = *member.uap;
        configs[member.model_id] = {{"norm", norm_name(v.p)},
                                    {"xi", v.xi},
                                    {"source_model", v.source_model},
                                    {"passes", v.passes},
                                    {"final_fooling_ratio", v.final_fooling_ratio}};
    }
    report.configs = configs;

    for (const auto& source : zoo.members()) {
        LabeledDataset perturbed = perturb_dataset(test, *source.uap);
        std::vector<double> row;
        for (const auto& target : zoo.members())
            row.push_back(evaluate_model(target.model, perturbed, jobs).kappa);
        row.push_back(evaluate_ensemble(zoo, perturbed, {}, jobs).kappa);
        report.kappa.push_back(std::move(row));
        log_info("transfer: source " + source.model_id + " done");
    }
    return report;
}

} // namespace uaplab
