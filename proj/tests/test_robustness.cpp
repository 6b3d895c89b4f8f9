#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "uaplab/errors.hpp"
#include "uaplab/robustness.hpp"
#include "uaplab/util.hpp"

using namespace uaplab;

namespace {

LabeledDataset tiny_dataset(int n, Shape shape, std::uint64_t seed, int num_classes = 5) {
    Rng rng(seed);
    LabeledDataset ds;
    for (int i = 0; i < n; ++i) {
        DatasetItem item;
        item.id = "d" + std::to_string(i);
        item.grade = i % num_classes;
        item.image = ImageTensor(shape.c, shape.h, shape.w);
        for (double& p : item.image.pixels) p = rng.uniform();
        ds.items.push_back(item);
    }
    return ds;
}

ModelZoo small_zoo(Shape shape, bool with_uaps) {
    ModelZoo zoo;
    std::vector<std::string> archs = {"small-cnn-a", "small-cnn-b", "mlp"};
    for (std::size_t i = 0; i < archs.size(); ++i) {
        ClassifierModel model = build_model(archs[i], 5, shape, 10 + i);
        std::optional<PerturbationVector> uap;
        if (with_uaps) {
            PerturbationVector v = PerturbationVector::zeros(shape, NormType::linf, 0.04);
            v.source_model = archs[i];
            uap = std::move(v);
        }
        zoo.add(archs[i], std::move(model), std::move(uap));
    }
    return zoo;
}

} // namespace

TEST_CASE("majority vote modal and unanimity cases") {
    CHECK(majority_vote(std::vector<int>{1, 1, 2}) == 1);
    CHECK(majority_vote(std::vector<int>{2, 2, 2, 2}) == 2);
    CHECK(majority_vote(std::vector<int>{3}) == 3);
    CHECK_THROWS_AS(majority_vote(std::vector<int>{}), EmptyVotes);
    CHECK_THROWS_AS(majority_vote(std::vector<int>{-1, 0}), LabelOutOfRange);
}

TEST_CASE("majority vote tie-break uses mean confidence, then lower index") {
    // votes (0,1); mean probabilities class0 = 0.40, class1 = 0.45 -> class 1
    std::vector<int> votes = {0, 1};
    std::vector<std::vector<double>> probs = {{0.50, 0.45, 0.05}, {0.30, 0.45, 0.25}};
    CHECK(majority_vote(votes, &probs) == 1);

    // flip the evidence: class0 mean 0.50, class1 mean 0.40 -> class 0
    std::vector<std::vector<double>> probs2 = {{0.55, 0.40, 0.05}, {0.45, 0.40, 0.15}};
    CHECK(majority_vote(votes, &probs2) == 0);

    // no confidences: lower index wins
    CHECK(majority_vote(votes) == 0);
    CHECK(majority_vote(std::vector<int>{4, 2, 4, 2}) == 2);
}

TEST_CASE("zoo enforces unique ids and consistent shapes") {
    ModelZoo zoo;
    zoo.add("a", build_model("mlp", 5, {1, 8, 8}, 0));
    CHECK_THROWS(zoo.add("a", build_model("mlp", 5, {1, 8, 8}, 1)));
    CHECK_THROWS_AS(zoo.add("b", build_model("mlp", 5, {1, 6, 6}, 1)), ShapeMismatch);
    CHECK_THROWS_AS(zoo.add("c", build_model("mlp", 3, {1, 8, 8}, 1)), ShapeMismatch);
}

TEST_CASE("single-model ensemble equals that model's predictions") {
    Shape shape{3, 8, 8};
    LabeledDataset ds = tiny_dataset(30, shape, 3);
    ModelZoo zoo;
    zoo.add("only", build_model("small-cnn-a", 5, shape, 4));

    std::vector<ImageTensor> images;
    for (const auto& item : ds.items) images.push_back(item.image);
    std::vector<int> solo = predict_batch(zoo.at(0).model, images);
    std::vector<int> voted = ensemble_predict(zoo, images);
    CHECK(solo == voted);

    EvalMetrics m1 = evaluate_model(zoo.at(0).model, ds);
    EvalMetrics m2 = evaluate_ensemble(zoo, ds);
    CHECK(m1.kappa == doctest::Approx(m2.kappa));
    CHECK(m1.accuracy == doctest::Approx(m2.accuracy));
}

TEST_CASE("ensemble predictions are invariant under member order") {
    Shape shape{3, 8, 8};
    LabeledDataset ds = tiny_dataset(40, shape, 9);
    std::vector<ImageTensor> images;
    for (const auto& item : ds.items) images.push_back(item.image);

    ModelZoo forward = small_zoo(shape, false);
    ModelZoo reversed;
    reversed.add("mlp", build_model("mlp", 5, shape, 12));
    reversed.add("small-cnn-b", build_model("small-cnn-b", 5, shape, 11));
    reversed.add("small-cnn-a", build_model("small-cnn-a", 5, shape, 10));

    CHECK(ensemble_predict(forward, images) == ensemble_predict(reversed, images));
    CHECK_THROWS_AS(ensemble_predict(ModelZoo{}, images), EmptyZoo);
}

TEST_CASE("ensemble honors unanimity and subset selection") {
    Shape shape{1, 6, 6};
    ModelZoo zoo;
    // three copies of the same parameters always agree
    for (int i = 0; i < 3; ++i)
        zoo.add("copy" + std::to_string(i), build_model("mlp", 5, shape, 42));
    LabeledDataset ds = tiny_dataset(25, shape, 5);
    std::vector<ImageTensor> images;
    for (const auto& item : ds.items) images.push_back(item.image);

    std::vector<int> single = predict_batch(zoo.at(0).model, images);
    CHECK(ensemble_predict(zoo, images) == single);

    std::vector<std::size_t> subset = {1};
    CHECK(ensemble_predict(zoo, images, subset) == single);
}

TEST_CASE("evaluate_model metrics are internally consistent") {
    Shape shape{3, 8, 8};
    LabeledDataset ds = tiny_dataset(60, shape, 21);
    ClassifierModel model = build_model("small-cnn-c", 5, shape, 2);
    EvalMetrics m = evaluate_model(model, ds);

    std::int64_t total = 0, diag = 0;
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
            total += m.confusion[i][j];
            if (i == j) diag += m.confusion[i][j];
        }
    CHECK(total == static_cast<std::int64_t>(ds.size()));
    CHECK(m.accuracy == doctest::Approx(static_cast<double>(diag) / total));
    CHECK(m.kappa == doctest::Approx(quadratic_kappa_from_confusion(m.confusion)));
    CHECK(m.n_samples == 60);

    LabeledDataset empty;
    CHECK_THROWS_AS(evaluate_model(model, empty), EmptyDataset);
}

TEST_CASE("perfect predictor scores kappa and accuracy of one") {
    // relabel the dataset with the model's own predictions
    Shape shape{1, 8, 8};
    ClassifierModel model = build_model("mlp", 5, shape, 17);
    LabeledDataset ds = tiny_dataset(50, shape, 33);
    for (auto& item : ds.items) item.grade = predict(model, item.image);
    bool varied = false;
    for (const auto& item : ds.items) varied |= item.grade != ds.items[0].grade;
    if (varied) {
        EvalMetrics m = evaluate_model(model, ds);
        CHECK(m.kappa == doctest::Approx(1.0));
        CHECK(m.accuracy == doctest::Approx(1.0));
    }
}

TEST_CASE("transfer matrix layout and degenerate cases") {
    Shape shape{3, 8, 8};
    LabeledDataset ds = tiny_dataset(40, shape, 8);

    // M = 1: one row, two equal columns (self + ensemble-of-one)
    ModelZoo solo;
    ClassifierModel model = build_model("small-cnn-a", 5, shape, 1);
    PerturbationVector v = PerturbationVector::zeros(shape, NormType::linf, 0.04);
    v.source_model = "solo";
    solo.add("solo", std::move(model), v);
    TransferMatrixReport one = transfer_matrix(solo, ds, "test");
    REQUIRE(one.row_ids.size() == 1);
    REQUIRE(one.col_ids.size() == 2);
    CHECK(one.col_ids[1] == "ensemble");
    CHECK(one.kappa[0][0] == doctest::Approx(one.kappa[0][1]));

    // all v = 0: every column equals the target model's clean kappa
    ModelZoo zoo = small_zoo(shape, true);
    TransferMatrixReport report = transfer_matrix(zoo, ds, "test");
    REQUIRE(report.kappa.size() == 3);
    REQUIRE(report.kappa[0].size() == 4);
    for (std::size_t target = 0; target < 3; ++target) {
        double clean = evaluate_model(zoo.at(target).model, ds).kappa;
        for (std::size_t source = 0; source < 3; ++source)
            CHECK(report.kappa[source][target] == doctest::Approx(clean));
    }
    CHECK(!report.dataset_sha256.empty());

    // diagonal recomputation from the stored inputs
    for (std::size_t i = 0; i < 3; ++i) {
        double recomputed =
            evaluate_model(zoo.at(i).model, perturb_dataset(ds, *zoo.at(i).uap)).kappa;
        CHECK(report.kappa[i][i] == doctest::Approx(recomputed));
    }

    ModelZoo missing = small_zoo(shape, false);
    CHECK_THROWS_AS(transfer_matrix(missing, ds, "test"), MissingPerturbation);
}

TEST_CASE("adversarial fine-tuning enforces the source contract") {
    Shape shape{1, 6, 6};
    LabeledDataset train_ds = tiny_dataset(20, shape, 2);
    LabeledDataset val_ds = tiny_dataset(10, shape, 3);
    ClassifierModel model = build_model("mlp", 5, shape, 7);

    PerturbationVector other = PerturbationVector::zeros(shape, NormType::linf, 0.04);
    other.source_model = "someone-else";
    TrainConfig cfg;
    cfg.max_epochs_finetune = 1;
    CHECK_THROWS_AS(
        adversarial_finetune(model, "me", train_ds, other, cfg, 0.0, val_ds),
        SourceMismatch);
    // explicit override allows cross-model fine-tuning
    adversarial_finetune(model, "me", train_ds, other, cfg, 0.0, val_ds, true);
}

TEST_CASE("mix ratio one with zero perturbation equals clean fine-tuning") {
    Shape shape{1, 6, 6};
    LabeledDataset train_ds = tiny_dataset(20, shape, 12);
    LabeledDataset val_ds = tiny_dataset(10, shape, 13);

    TrainConfig cfg;
    cfg.max_epochs_finetune = 3;
    cfg.seed = 4;

    PerturbationVector zero = PerturbationVector::zeros(shape, NormType::linf, 0.04);
    zero.source_model = "m";

    ClassifierModel tuned = build_model("mlp", 5, shape, 7);
    adversarial_finetune(tuned, "m", train_ds, zero, cfg, 1.0, val_ds);

    ClassifierModel plain = build_model("mlp", 5, shape, 7);
    run_training(plain, train_ds, val_ds, cfg, cfg.max_epochs_finetune, false);

    REQUIRE(tuned.parameters().size() == plain.parameters().size());
    for (std::size_t i = 0; i < tuned.parameters().size(); ++i)
        CHECK(tuned.parameters()[i] == plain.parameters()[i]);
}

TEST_CASE("mix ratio bounds are validated") {
    Shape shape{1, 6, 6};
    LabeledDataset ds = tiny_dataset(10, shape, 1);
    ClassifierModel model = build_model("mlp", 5, shape, 1);
    PerturbationVector v = PerturbationVector::zeros(shape, NormType::linf, 0.04);
    v.source_model = "m";
    TrainConfig cfg;
    CHECK_THROWS(adversarial_finetune(model, "m", ds, v, cfg, -0.1, ds));
    CHECK_THROWS(adversarial_finetune(model, "m", ds, v, cfg, 1.5, ds));
}
