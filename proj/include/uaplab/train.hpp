#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uaplab/dataset.hpp"
#include "uaplab/model.hpp"

namespace uaplab {

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::adam;
    double learning_rate = 1e-3;
    int batch_size = 16;
    int max_epochs_pretrain = 15;
    int max_epochs_finetune = 10;
    int early_stop_patience = 5;
    std::uint64_t seed = 0;
    // Adam defaults from the original method
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
};

struct EpochStats {
    double train_loss = 0.0;
    double val_kappa = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    int best_epoch = -1; // 0-based index into epochs
    double best_val_kappa = -2.0;
};

// Mini-batch training with early stopping on validation quadratic kappa; the
// best-validation parameters are restored at the end. max_epochs selects the
// epoch budget; head_only freezes everything before the final dense layer.
TrainHistory run_training(ClassifierModel& model, const LabeledDataset& train,
                          const LabeledDataset& validation, const TrainConfig& config,
                          int max_epochs, bool head_only);

// Single-stage training with the pretrain epoch budget.
TrainHistory train(ClassifierModel& model, const LabeledDataset& train,
                   const TrainConfig& config, const LabeledDataset& validation);

struct TwoStageHistory {
    TrainHistory head_stage;
    TrainHistory full_stage;
};

// Stage 1 trains the classification head only (body parameters bit-identical
// before/after); stage 2 trains end-to-end. Each stage early-stops on the
// validation kappa.
TwoStageHistory two_stage_finetune(ClassifierModel& model, const LabeledDataset& train,
                                   const TrainConfig& config, const LabeledDataset& validation);

// Transfer-learning emulation without external weights: trains the model on a
// synthetic source task (grating-orientation classification at the same input
// shape) so the body starts from non-random features. Callers usually follow
// up with reinitialize_head, mirroring classification-layer replacement.
TrainHistory pretrain_source_task(ClassifierModel& model, const TrainConfig& config,
                                  int n_samples = 600);

void reinitialize_head(ClassifierModel& model, std::uint64_t seed);

} // namespace uaplab
