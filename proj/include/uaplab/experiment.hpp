#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "uaplab/attacks.hpp"
#include "uaplab/dataset.hpp"
#include "uaplab/preprocess.hpp"
#include "uaplab/train.hpp"

namespace uaplab {

struct ZooSpec {
    std::string arch;
    std::uint64_t seed = 0;
};

struct DatasetConfig {
    std::string source = "synthetic"; // synthetic | csv
    int n = 2000;
    int image_size = 32;
    std::array<double, kNumGrades> proportions = kAptosProportions;
    std::uint64_t seed = 7;
    std::string csv;
    std::string images;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    bool preprocess_enabled = true;
    // tracks the dataset resolution unless a config file overrides it
    PreprocessConfig preprocess = PreprocessConfig::for_target_size(DatasetConfig{}.image_size);
    std::vector<ZooSpec> zoo = {{"small-cnn-a", 1}, {"small-cnn-b", 2}, {"small-cnn-c", 3}};
    // transfer-learning emulation: source-task pretraining + head replacement
    bool emulate_pretraining = false;
    TrainConfig train;
    AttackConfig attack;
    double test_fraction = 0.2;
    double dp_fraction = 0.5;
    std::string eval_split = "test"; // test | robust
    // pipeline defaults for the hardening stage: pure single-pattern
    // adversarial fine-tuning collapses small models onto the pattern, so the
    // desk experiment mixes clean data and fine-tunes at a reduced rate (the
    // adversarial_finetune operation itself stays adversarial-only at 0)
    double mix_ratio = 0.5;
    double advft_learning_rate = 1e-4;
    double fgsm_eps = 0.04;
    int kfold_k = 4;
    int jobs = 1;
    std::string out = "runs/desk";

    static ExperimentConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    // provenance hash over the scientific fields (out dir and jobs excluded)
    std::string hash() const;
};

ExperimentConfig load_experiment_config(const std::string& path);

// Loads or synthesizes the dataset and applies the preprocessing chain.
LabeledDataset prepare_dataset(const ExperimentConfig& config);

struct DatasetSplits {
    LabeledDataset fit;  // training items outside the validation fold
    LabeledDataset val;  // fold 0 of the stratified k-fold over the train split
    LabeledDataset test;
    LabeledDataset dp; // perturbation-generation half of the train split
    LabeledDataset dr; // robustness half
};

// Deterministic split chain shared by the subcommands and the desk pipeline:
// stratified test split, k-fold validation carve-out, D_p/D_r partition.
DatasetSplits split_dataset(const LabeledDataset& full, const ExperimentConfig& config);

// eval_split config choice: "test" or "robust"
const LabeledDataset& evaluation_split(const DatasetSplits& splits,
                                       const ExperimentConfig& config);

// Full desk-scale pipeline: train zoo (two-stage), generate one UAP per
// model, transfer matrices before/after adversarial fine-tuning, paired
// t-tests and an FGSM evaluation. Artifacts land under config.out; the
// returned JSON mirrors <out>/reports/summary.json.
nlohmann::json run_desk_experiment(const ExperimentConfig& config);

// Re-hashes every artifact recorded in <out>/manifest.json; returns
// human-readable problems, empty when the chain verifies.
std::vector<std::string> verify_run(const std::string& out_dir);

std::string timestamp_utc();

} // namespace uaplab
