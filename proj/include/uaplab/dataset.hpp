#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "uaplab/tensor.hpp"

namespace uaplab {

constexpr int kNumGrades = 5;

// class proportions of the APTOS2019 training set
constexpr std::array<double, kNumGrades> kAptosProportions = {0.493, 0.101, 0.273,
                                                              0.080, 0.053};

const char* grade_name(int grade); // "No DR" .. "Proliferative DR"

enum class DatasetRole { train, test, perturb_split, robust_split };

const char* role_name(DatasetRole role);

struct DatasetItem {
    ImageTensor image;
    int grade = 0;
    std::string id;
};

struct LabeledDataset {
    std::vector<DatasetItem> items;
    DatasetRole role = DatasetRole::train;

    std::size_t size() const { return items.size(); }
    bool empty() const { return items.empty(); }
    std::vector<int> grades() const;
    std::vector<std::int64_t> class_counts(int num_classes = kNumGrades) const;
};

struct FoldAssignment {
    int k = 0;
    std::vector<int> fold_of; // aligned with dataset items
};

// CSV with header "id_code,diagnosis"; one <image_dir>/<id_code>.png per row.
// Items are sorted by id_code.
LabeledDataset load_dataset_csv(const std::string& csv_path, const std::string& image_dir);

// Ordinal synthetic fundus-like images: grade g renders g bright lesion blobs
// over a shaded disc with dark vessel curves plus pixel noise. Class counts
// follow floor(n*p) with largest-remainder distribution.
LabeledDataset generate_synthetic_dataset(int n, const std::array<double, kNumGrades>& proportions,
                                          int image_size, std::uint64_t seed);

FoldAssignment stratified_kfold(const LabeledDataset& dataset, int k, std::uint64_t seed);

// Stratified disjoint split; first part receives round(fraction*n) items with
// per-class counts within 1 of the class quota.
std::pair<LabeledDataset, LabeledDataset> stratified_split(const LabeledDataset& dataset,
                                                           double fraction,
                                                           std::uint64_t seed,
                                                           DatasetRole first_role,
                                                           DatasetRole second_role);

std::pair<LabeledDataset, LabeledDataset> split_perturb_robust(const LabeledDataset& train,
                                                               double fraction_p,
                                                               std::uint64_t seed);

std::string dataset_digest(const LabeledDataset& dataset); // sha256 over canonical bytes

} // namespace uaplab
