#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "uaplab/checkpoint.hpp"
#include "uaplab/dataset.hpp"
#include "uaplab/errors.hpp"
#include "uaplab/model.hpp"
#include "uaplab/train.hpp"
#include "uaplab/util.hpp"

using namespace uaplab;
namespace fs = std::filesystem;

namespace {

ImageTensor random_input(Shape shape, std::uint64_t seed) {
    Rng rng(seed);
    ImageTensor img(shape.c, shape.h, shape.w);
    for (double& p : img.pixels) p = rng.uniform();
    return img;
}

// toy two-class dataset: class decided by which half of the image is brighter
LabeledDataset toy_dataset(int n, Shape shape, std::uint64_t seed) {
    Rng rng(seed);
    LabeledDataset ds;
    for (int i = 0; i < n; ++i) {
        DatasetItem item;
        item.id = "t" + std::to_string(i);
        item.grade = i % 2;
        item.image = ImageTensor(shape.c, shape.h, shape.w, 0.1);
        int half = shape.w / 2;
        for (int c = 0; c < shape.c; ++c)
            for (int y = 0; y < shape.h; ++y)
                for (int x = 0; x < shape.w; ++x) {
                    bool bright = item.grade == 0 ? x < half : x >= half;
                    item.image.at(c, y, x) = (bright ? 0.8 : 0.2) + 0.05 * rng.uniform();
                }
        ds.items.push_back(item);
    }
    return ds;
}

} // namespace

TEST_CASE("registry builds deterministic models and rejects unknown ids") {
    ClassifierModel a = build_model("small-cnn-a", 5, {3, 32, 32}, 7);
    ClassifierModel b = build_model("small-cnn-a", 5, {3, 32, 32}, 7);
    REQUIRE(a.parameters().size() == b.parameters().size());
    for (std::size_t i = 0; i < a.parameters().size(); ++i)
        CHECK(a.parameters()[i] == b.parameters()[i]);

    ClassifierModel c = build_model("small-cnn-a", 5, {3, 32, 32}, 8);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.parameters().size(); ++i)
        any_diff |= a.parameters()[i] != c.parameters()[i];
    CHECK(any_diff);

    ClassifierModel mlp = build_model("mlp", 2, {1, 8, 8}, 0);
    CHECK(mlp.logits(random_input({1, 8, 8}, 1)).size() == 2);

    CHECK_THROWS_AS(build_model("resnet50", 5, {3, 32, 32}, 0), UnknownArchitecture);
}

TEST_CASE("every architecture differs in output for the same input") {
    ImageTensor x = random_input({3, 16, 16}, 5);
    std::vector<std::vector<double>> outputs;
    for (const std::string& arch : registered_architectures()) {
        ClassifierModel m = build_model(arch, 5, {3, 16, 16}, 3);
        outputs.push_back(m.logits(x));
    }
    for (std::size_t i = 0; i < outputs.size(); ++i)
        for (std::size_t j = i + 1; j < outputs.size(); ++j)
            CHECK(outputs[i] != outputs[j]);
}

TEST_CASE("forward is deterministic and validates input") {
    ClassifierModel m = build_model("small-cnn-b", 5, {3, 16, 16}, 2);
    ImageTensor zero(3, 16, 16, 0.0);
    CHECK(m.logits(zero) == m.logits(zero));

    ImageTensor wrong(3, 8, 8, 0.0);
    CHECK_THROWS_AS(m.logits(wrong), ShapeMismatch);

    ImageTensor withnan = zero;
    withnan.pixels[10] = std::nan("");
    CHECK_THROWS_AS(m.logits(withnan), InvalidInput);
}

TEST_CASE("softmax normalization") {
    for (const std::string& arch : registered_architectures()) {
        ClassifierModel m = build_model(arch, 5, {3, 12, 12}, 1);
        for (int trial = 0; trial < 20; ++trial) {
            auto probs = softmax(m.logits(random_input({3, 12, 12}, trial)));
            double sum = 0.0;
            for (double p : probs) sum += p;
            CHECK(std::fabs(sum - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("argmax prediction breaks ties toward the lower index") {
    std::vector<double> row = {0.1, 2.0, -1.0, 0.0, 0.0};
    CHECK(argmax_label(row) == 1);
    std::vector<double> tie = {1.0, 1.0, 0.0, 0.0, 0.0};
    CHECK(argmax_label(tie) == 0);

    ClassifierModel m = build_model("mlp", 3, {1, 4, 4}, 0);
    CHECK(predict_batch(m, {}).empty());
    std::vector<ImageTensor> batch = {random_input({1, 4, 4}, 0), random_input({1, 4, 4}, 1)};
    CHECK(predict_batch(m, batch).size() == 2);
    CHECK(forward_logits(m, batch).size() == 2);
}

TEST_CASE("input gradients match central finite differences") {
    // 100+ random coordinates per architecture, h = 1e-3, relative error <= 1e-3.
    // Coordinates where the forward and backward one-sided differences disagree
    // straddle a relu/maxpool kink; the central difference is not a derivative
    // estimate there, so they are skipped (and must stay rare).
    const double h = 1e-3;
    for (const std::string& arch : registered_architectures()) {
        ClassifierModel m = build_model(arch, 5, {3, 10, 10}, 13);
        Rng rng(99);
        int checked = 0, skipped = 0;
        for (int probe = 0; probe < 5; ++probe) {
            ImageTensor x = random_input({3, 10, 10}, 1000 + probe);
            for (int mode = 0; mode < 2; ++mode) {
                int target = rng.uniform_int(0, 4);
                ImageTensor grad = mode == 0 ? m.class_gradient(x, target)
                                             : m.loss_gradient(x, target);
                auto eval = [&](const ImageTensor& point) {
                    if (mode == 0) return m.logits(point)[target];
                    return -std::log(softmax(m.logits(point))[target]);
                };
                double f_center = eval(x);
                for (int rep = 0; rep < 12; ++rep) {
                    std::size_t coord = rng.uniform_int(0, static_cast<int>(x.numel()) - 1);
                    ImageTensor plus = x, minus = x;
                    plus.pixels[coord] += h;
                    minus.pixels[coord] -= h;
                    double f_plus = eval(plus), f_minus = eval(minus);
                    double forward = (f_plus - f_center) / h;
                    double backward = (f_center - f_minus) / h;
                    if (std::fabs(forward - backward) >
                        1e-3 * std::max({std::fabs(forward), std::fabs(backward), 1e-3})) {
                        ++skipped; // kink inside the difference interval
                        continue;
                    }
                    double fd = (f_plus - f_minus) / (2 * h);
                    double analytic = grad.pixels[coord];
                    double denom = std::max({std::fabs(fd), std::fabs(analytic), 1e-6});
                    CHECK(std::fabs(fd - analytic) / denom <= 1e-3);
                    ++checked;
                }
            }
        }
        CHECK(checked >= 100);
        CHECK(skipped <= checked / 10);
    }
}

TEST_CASE("loss gradient vanishes for a saturated correct prediction") {
    ClassifierModel m = build_model("mlp", 5, {1, 6, 6}, 4);
    ImageTensor x = random_input({1, 6, 6}, 8);
    int label = predict(m, x);
    // scale the head until the prediction saturates
    auto params = m.parameters_mut();
    for (std::size_t i = m.head_offset(); i < params.size(); ++i) params[i] *= 40.0f;
    auto probs = softmax(m.logits(x));
    REQUIRE(probs[predict(m, x)] > 1.0 - 1e-9);
    if (predict(m, x) == label) {
        ImageTensor grad = m.loss_gradient(x, label);
        CHECK(l2_norm(grad) <= 1e-4);
    }
}

TEST_CASE("class gradient validates the class index") {
    ClassifierModel m = build_model("mlp", 3, {1, 4, 4}, 0);
    ImageTensor x = random_input({1, 4, 4}, 2);
    CHECK_THROWS_AS(m.class_gradient(x, 3), InvalidClass);
    CHECK_THROWS_AS(m.loss_gradient(x, -1), InvalidClass);
}

TEST_CASE("body/head partition covers all parameters exactly once") {
    for (const std::string& arch : registered_architectures()) {
        ClassifierModel m = build_model(arch, 5, {3, 12, 12}, 0);
        std::size_t covered = 0;
        bool seen_head = false;
        for (const LayerDef& L : m.layers()) {
            covered += L.w_count + L.b_count;
            if (L.w_offset == m.head_offset() && L.w_count > 0) seen_head = true;
        }
        CHECK(covered == m.parameters().size());
        CHECK(seen_head);
        CHECK(m.head_offset() < m.parameters().size());
    }
}

TEST_CASE("training overfits a small toy dataset") {
    Shape shape{1, 8, 8};
    LabeledDataset ds = toy_dataset(10, shape, 3);
    ClassifierModel m = build_model("mlp", 2, shape, 1);
    TrainConfig cfg;
    cfg.max_epochs_pretrain = 200;
    cfg.early_stop_patience = 200;
    cfg.batch_size = 4;
    cfg.seed = 5;
    train(m, ds, cfg, ds);
    int correct = 0;
    for (const auto& item : ds.items)
        correct += predict(m, item.image) == item.grade;
    CHECK(correct == 10);
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
    Shape shape{1, 8, 8};
    LabeledDataset ds = toy_dataset(12, shape, 3);
    TrainConfig cfg;
    cfg.max_epochs_pretrain = 5;
    cfg.seed = 9;
    ClassifierModel m1 = build_model("small-cnn-a", 2, shape, 1);
    ClassifierModel m2 = build_model("small-cnn-a", 2, shape, 1);
    train(m1, ds, cfg, ds);
    train(m2, ds, cfg, ds);
    REQUIRE(m1.parameters().size() == m2.parameters().size());
    for (std::size_t i = 0; i < m1.parameters().size(); ++i)
        CHECK(m1.parameters()[i] == m2.parameters()[i]);
}

TEST_CASE("early stopping halts after patience non-improvements") {
    // learning rate 0 freezes the validation kappa, so nothing ever improves
    // after the first epoch and training stops at epoch 1 + patience
    Shape shape{1, 6, 6};
    LabeledDataset ds = toy_dataset(8, shape, 1);
    ClassifierModel m = build_model("mlp", 2, shape, 2);
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.max_epochs_pretrain = 50;
    cfg.early_stop_patience = 5;
    auto before = std::vector<float>(m.parameters().begin(), m.parameters().end());
    TrainHistory history = train(m, ds, cfg, ds);
    CHECK(history.epochs.size() == 6);
    for (std::size_t i = 0; i < before.size(); ++i)
        CHECK(m.parameters()[i] == before[i]); // lr 0 leaves parameters unchanged
}

TEST_CASE("training rejects empty datasets and bad labels") {
    Shape shape{1, 6, 6};
    ClassifierModel m = build_model("mlp", 2, shape, 2);
    TrainConfig cfg;
    LabeledDataset empty;
    LabeledDataset ok = toy_dataset(4, shape, 1);
    CHECK_THROWS_AS(train(m, empty, cfg, ok), EmptyDataset);
    LabeledDataset bad = ok;
    bad.items[0].grade = 7;
    CHECK_THROWS_AS(train(m, bad, cfg, ok), LabelOutOfRange);
}

TEST_CASE("two-stage fine-tuning freezes the body in stage one") {
    Shape shape{1, 8, 8};
    LabeledDataset ds = toy_dataset(12, shape, 2);
    ClassifierModel m = build_model("small-cnn-a", 2, shape, 6);
    auto body_before = std::vector<float>(m.parameters().begin(),
                                          m.parameters().begin() + m.head_offset());

    TrainConfig stage1_only;
    stage1_only.max_epochs_pretrain = 4;
    stage1_only.max_epochs_finetune = 0; // degenerate: head-only training
    stage1_only.seed = 3;
    two_stage_finetune(m, ds, stage1_only, ds);
    for (std::size_t i = 0; i < body_before.size(); ++i)
        CHECK(m.parameters()[i] == body_before[i]);

    // stage 2 must move at least one body parameter while loss is nonzero
    TrainConfig both;
    both.max_epochs_pretrain = 2;
    both.max_epochs_finetune = 3;
    both.seed = 3;
    ClassifierModel m2 = build_model("small-cnn-a", 2, shape, 6);
    two_stage_finetune(m2, ds, both, ds);
    bool body_changed = false;
    for (std::size_t i = 0; i < m2.head_offset(); ++i)
        body_changed |= m2.parameters()[i] != body_before[i];
    CHECK(body_changed);
}

TEST_CASE("source-task pretraining moves the body, head reinit is seeded") {
    Shape shape{3, 12, 12};
    ClassifierModel m = build_model("small-cnn-a", 5, shape, 11);
    auto before = std::vector<float>(m.parameters().begin(), m.parameters().end());

    TrainConfig cfg;
    cfg.max_epochs_pretrain = 2;
    cfg.seed = 1;
    TrainHistory history = pretrain_source_task(m, cfg, 100);
    CHECK(!history.epochs.empty());
    bool body_changed = false;
    for (std::size_t i = 0; i < m.head_offset(); ++i)
        body_changed |= m.parameters()[i] != before[i];
    CHECK(body_changed);

    reinitialize_head(m, 42);
    auto head_a = std::vector<float>(m.parameters().begin() + m.head_offset(),
                                     m.parameters().end());
    reinitialize_head(m, 42);
    auto head_b = std::vector<float>(m.parameters().begin() + m.head_offset(),
                                     m.parameters().end());
    CHECK(head_a == head_b);
    reinitialize_head(m, 43);
    auto head_c = std::vector<float>(m.parameters().begin() + m.head_offset(),
                                     m.parameters().end());
    CHECK(head_a != head_c);
}

TEST_CASE("checkpoint round trip is bit exact") {
    fs::path dir = fs::temp_directory_path() / "uaplab_ckpt_test";
    fs::create_directories(dir);
    std::string path = (dir / "model.ckpt").string();

    ClassifierModel m = build_model("small-cnn-a", 5, {3, 12, 12}, 21);
    save_checkpoint(m, path);
    ClassifierModel loaded = load_checkpoint(path);
    CHECK(loaded.arch_id() == "small-cnn-a");
    CHECK(loaded.num_classes() == 5);
    CHECK(loaded.input_shape() == Shape{3, 12, 12});

    for (int probe = 0; probe < 16; ++probe) {
        ImageTensor x = random_input({3, 12, 12}, 500 + probe);
        auto a = m.logits(x);
        auto b = loaded.logits(x);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]); // bit equal
    }
    fs::remove_all(dir);
}

TEST_CASE("checkpoint detects truncation and version issues") {
    fs::path dir = fs::temp_directory_path() / "uaplab_ckpt_err";
    fs::create_directories(dir);
    std::string path = (dir / "model.ckpt").string();
    ClassifierModel m = build_model("mlp", 3, {1, 6, 6}, 1);
    save_checkpoint(m, path);

    auto bytes = read_file_bytes(path);
    write_file_atomic(path, bytes.data(), bytes.size() / 2);
    CHECK_THROWS_AS(load_checkpoint(path), CorruptCheckpoint);

    bytes[bytes.size() / 2] ^= 0x5a;
    write_file_atomic(path, bytes.data(), bytes.size());
    CHECK_THROWS_AS(load_checkpoint(path), CorruptCheckpoint);

    CHECK_THROWS_AS(load_checkpoint((dir / "nope.ckpt").string()), IoError);
    fs::remove_all(dir);
}
