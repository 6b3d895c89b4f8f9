#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "affine_classifier.hpp"
#include "uaplab/attacks.hpp"
#include "uaplab/errors.hpp"
#include "uaplab/util.hpp"

using namespace uaplab;
namespace fs = std::filesystem;

namespace {

ImageTensor make_vec2(double a, double b) {
    ImageTensor t(1, 1, 2);
    t.pixels = {a, b};
    return t;
}

LabeledDataset dataset_from_points(const std::vector<ImageTensor>& points) {
    LabeledDataset ds;
    for (std::size_t i = 0; i < points.size(); ++i) {
        DatasetItem item;
        item.id = "p" + std::to_string(i);
        item.grade = 0;
        item.image = points[i];
        ds.items.push_back(item);
    }
    return ds;
}

} // namespace

TEST_CASE("lp projection hand cases") {
    ImageTensor v = make_vec2(0.2, -0.3);
    ImageTensor clamped = project_lp_ball(v, NormType::linf, 0.1);
    CHECK(clamped.pixels[0] == doctest::Approx(0.1));
    CHECK(clamped.pixels[1] == doctest::Approx(-0.1));

    ImageTensor w = make_vec2(3.0, 4.0);
    ImageTensor scaled = project_lp_ball(w, NormType::l2, 1.0);
    CHECK(scaled.pixels[0] == doctest::Approx(0.6));
    CHECK(scaled.pixels[1] == doctest::Approx(0.8));

    ImageTensor inside = make_vec2(0.05, 0.05);
    CHECK(project_lp_ball(inside, NormType::linf, 0.1) == inside);

    CHECK_THROWS_AS(project_lp_ball(v, NormType::linf, 0.0), InvalidBudget);
    CHECK_THROWS_AS(project_lp_ball(v, NormType::l2, -1.0), InvalidBudget);
}

TEST_CASE("lp projection is idempotent and feasible on random vectors") {
    Rng rng(31);
    for (int trial = 0; trial < 500; ++trial) {
        ImageTensor v(1, 4, 4);
        for (double& p : v.pixels) p = rng.uniform(-2.0, 2.0);
        NormType p = trial % 2 ? NormType::linf : NormType::l2;
        double xi = rng.uniform(0.01, 1.5);
        ImageTensor once = project_lp_ball(v, p, xi);
        CHECK(project_lp_ball(once, p, xi) == once);
        double norm = p == NormType::linf ? linf_norm(once) : l2_norm(once);
        CHECK(norm <= xi * (1.0 + 1e-6));
    }
}

TEST_CASE("deepfool matches the closed form on the binary affine example") {
    // f(x) = (0, w.x) with w = (3,4); at x = (1,1), distance = 7/5 = 1.4
    AffineClassifier model({1, 1, 2}, {{0.0, 0.0}, {3.0, 4.0}}, {0.0, 0.0});
    AttackConfig cfg;
    cfg.overshoot = 0.02;
    ImageTensor x = make_vec2(1.0, 1.0);
    DeepFoolResult result = deepfool(model, x, cfg);

    CHECK(result.source_label == 1);
    CHECK(result.flipped_label == 0);
    CHECK(result.iterations == 1);
    CHECK(result.r.pixels[0] == doctest::Approx(-0.84 * 1.02).epsilon(1e-9));
    CHECK(result.r.pixels[1] == doctest::Approx(-1.12 * 1.02).epsilon(1e-9));
    CHECK(l2_norm(result.r) / 1.02 == doctest::Approx(1.4).epsilon(1e-9));
    CHECK(predict(model, clip01(x)) == 1);
}

TEST_CASE("deepfool flip class matches brute force on multiclass affine models") {
    AttackConfig cfg;
    for (int trial = 0; trial < 50; ++trial) {
        Shape shape{1, 2, 3};
        AffineClassifier model = AffineClassifier::random(shape, 4, 600 + trial);
        Rng rng(trial);
        ImageTensor x(1, 2, 3);
        for (double& p : x.pixels) p = rng.uniform(-1.0, 1.0);

        auto logits = model.logits(x);
        int source = argmax_label(logits);
        int expected_class = -1;
        double expected_dist = 0.0;
        for (int cls = 0; cls < 4; ++cls) {
            if (cls == source) continue;
            double diff_norm = 0.0;
            for (std::size_t i = 0; i < x.pixels.size(); ++i) {
                double d = model.weight_row(cls)[i] - model.weight_row(source)[i];
                diff_norm += d * d;
            }
            diff_norm = std::sqrt(diff_norm);
            if (diff_norm < 1e-12) continue;
            double dist = std::fabs(logits[cls] - logits[source]) / diff_norm;
            if (expected_class < 0 || dist < expected_dist) {
                expected_class = cls;
                expected_dist = dist;
            }
        }

        DeepFoolResult result = deepfool(model, x, cfg);
        CHECK(result.flipped_label == expected_class);
        CHECK(l2_norm(result.r) / (1.0 + cfg.overshoot) ==
              doctest::Approx(expected_dist).epsilon(1e-5));
        // the perturbed point actually flips
        ImageTensor moved = x;
        for (std::size_t i = 0; i < moved.pixels.size(); ++i)
            moved.pixels[i] += result.r.pixels[i];
        CHECK(predict(model, moved) != source);
    }
}

TEST_CASE("deepfool gives up on constant logits") {
    AffineClassifier constant({1, 1, 2}, {{0.0, 0.0}, {0.0, 0.0}}, {0.3, 0.1});
    AttackConfig cfg;
    cfg.deepfool_max_iter = 5;
    CHECK_THROWS_AS(deepfool(constant, make_vec2(0.5, 0.5), cfg), MaxIterExceeded);
}

TEST_CASE("fooling ratio counts label changes against clean predictions") {
    AffineClassifier model({1, 1, 2}, {{0.0, 0.0}, {1.0, 0.0}}, {0.0, 0.0});
    // first pixel decides: > 0 -> class 1
    std::vector<ImageTensor> points = {make_vec2(0.10, 0.5), make_vec2(0.12, 0.5),
                                       make_vec2(0.60, 0.5), make_vec2(0.80, 0.5)};
    LabeledDataset ds = dataset_from_points(points);

    PerturbationVector zero = PerturbationVector::zeros({1, 1, 2}, NormType::linf, 0.2);
    CHECK(fooling_ratio(model, ds, zero) == doctest::Approx(0.0));

    PerturbationVector v = zero;
    v.v = {-0.2f, 0.0f}; // flips the two points near the boundary only
    CHECK(fooling_ratio(model, ds, v) == doctest::Approx(0.5));

    LabeledDataset reversed = ds;
    std::reverse(reversed.items.begin(), reversed.items.end());
    CHECK(fooling_ratio(model, reversed, v) == doctest::Approx(0.5));

    LabeledDataset empty;
    CHECK_THROWS_AS(fooling_ratio(model, empty, v), EmptyDataset);
}

TEST_CASE("uap stopping boundary semantics") {
    AffineClassifier model({1, 1, 2}, {{0.0, 0.0}, {1.0, 0.0}}, {0.0, 0.0});
    std::vector<ImageTensor> points = {make_vec2(0.3, 0.5), make_vec2(0.4, 0.5)};
    LabeledDataset ds = dataset_from_points(points);

    AttackConfig immediate;
    immediate.target_fooling = -1.0; // ratio 0 > -1 holds before any pass
    immediate.xi = 1.0;
    PerturbationVector v0 = generate_uap(model, ds, immediate, "affine");
    CHECK(v0.passes == 0);
    CHECK(v0.history.empty());
    CHECK(v0.final_fooling_ratio == doctest::Approx(0.0));
    for (float x : v0.v) CHECK(x == 0.0f);

    AttackConfig one_pass;
    one_pass.target_fooling = 0.0; // strict: ratio 0 > 0 fails, so a pass runs
    one_pass.xi = 1.0;
    one_pass.p = NormType::l2;
    PerturbationVector v1 = generate_uap(model, ds, one_pass, "affine");
    CHECK(v1.passes >= 1);
    CHECK(v1.history.size() == static_cast<std::size_t>(v1.passes));
    CHECK(v1.final_fooling_ratio > 0.0);
}

TEST_CASE("uap on linearly separable affine data aligns with the weight vector") {
    // all points predicted class 1 with small margins and comfortably inside
    // [0,1], so clipping never interferes; the only useful direction is -w
    // and the final vector must align with it
    AffineClassifier model({1, 1, 2}, {{0.0, 0.0}, {2.0, 1.0}}, {0.0, -1.65});
    Rng rng(77);
    std::vector<ImageTensor> points;
    while (points.size() < 40) {
        double x0 = rng.uniform(0.45, 0.65);
        double x1 = rng.uniform(0.45, 0.65);
        double margin = 2.0 * x0 + 1.0 * x1 - 1.65;
        if (margin > 0.02 && margin < 0.3) points.push_back(make_vec2(x0, x1));
    }
    LabeledDataset ds = dataset_from_points(points);

    AttackConfig cfg;
    cfg.xi = 0.3;
    cfg.p = NormType::l2;
    cfg.target_fooling = 0.9;
    cfg.max_passes = 20;
    PerturbationVector v = generate_uap(model, ds, cfg, "affine");
    CHECK(v.final_fooling_ratio > 0.9);

    double dot = v.v[0] * 2.0 + v.v[1] * 1.0;
    double cosine = dot / (std::hypot(v.v[0], v.v[1]) * std::hypot(2.0, 1.0));
    CHECK(std::fabs(cosine) >= 0.99);

    // reported ratio equals a from-scratch recomputation
    CHECK(fooling_ratio(model, ds, v) == doctest::Approx(v.final_fooling_ratio));
}

TEST_CASE("uap raises TargetNotReached with the best vector attached") {
    AffineClassifier constant({1, 1, 2}, {{0.0, 0.0}, {0.0, 0.0}}, {0.3, 0.1});
    std::vector<ImageTensor> points = {make_vec2(0.5, 0.5), make_vec2(0.2, 0.2)};
    LabeledDataset ds = dataset_from_points(points);
    AttackConfig cfg;
    cfg.max_passes = 2;
    try {
        generate_uap(constant, ds, cfg, "affine");
        FAIL("expected TargetNotReached");
    } catch (const TargetNotReached& e) {
        CHECK(e.best_so_far.passes <= 2);
        CHECK(e.best_so_far.final_fooling_ratio == doctest::Approx(0.0));
    }
}

TEST_CASE("fgsm sign pattern on a logistic model") {
    AffineClassifier model({1, 1, 2}, {{0.0, 0.0}, {1.5, -2.0}}, {0.0, 0.0});
    ImageTensor x = make_vec2(0.5, 0.5);

    ImageTensor same = fgsm(model, x, 1, 0.0);
    CHECK(same == x);

    // true class 1: dL/dx = (p1 - 1) * w, so sign(grad) = -sign(w)
    ImageTensor adv = fgsm(model, x, 1, 0.1);
    CHECK(adv.pixels[0] == doctest::Approx(0.4)); // w0 > 0 -> moves down
    CHECK(adv.pixels[1] == doctest::Approx(0.6)); // w1 < 0 -> moves up

    for (int trial = 0; trial < 20; ++trial) {
        Rng rng(trial);
        ImageTensor p(1, 1, 2);
        p.pixels = {rng.uniform(), rng.uniform()};
        ImageTensor out = fgsm(model, p, rng.uniform_int(0, 1), 0.07);
        for (std::size_t i = 0; i < out.pixels.size(); ++i) {
            CHECK(out.pixels[i] >= 0.0);
            CHECK(out.pixels[i] <= 1.0);
            CHECK(std::fabs(out.pixels[i] - p.pixels[i]) <= 0.07 + 1e-12);
        }
    }
    CHECK_THROWS_AS(fgsm(model, x, 1, -0.1), InvalidBudget);
}

TEST_CASE("perturb_dataset applies v with clipping and keeps metadata") {
    std::vector<ImageTensor> points = {make_vec2(0.99, 0.5), make_vec2(0.2, 0.0)};
    LabeledDataset ds = dataset_from_points(points);
    ds.items[0].grade = 3;

    PerturbationVector zero = PerturbationVector::zeros({1, 1, 2}, NormType::linf, 0.1);
    CHECK(perturb_dataset(ds, zero).items[0].image == ds.items[0].image);

    PerturbationVector v = zero;
    v.v = {0.05f, -0.05f};
    LabeledDataset out = perturb_dataset(ds, v);
    CHECK(out.size() == 2);
    CHECK(out.items[0].grade == 3);
    CHECK(out.items[0].id == "p0");
    CHECK(out.items[0].image.pixels[0] == doctest::Approx(1.0)); // 0.99+0.05 clipped
    CHECK(out.items[1].image.pixels[1] == doctest::Approx(0.0)); // 0.0-0.05 clipped

    PerturbationVector wrong = PerturbationVector::zeros({1, 2, 2}, NormType::linf, 0.1);
    CHECK_THROWS_AS(perturb_dataset(ds, wrong), ShapeMismatch);
}

TEST_CASE("perturbation file round trip is bit exact") {
    fs::path dir = fs::temp_directory_path() / "uaplab_uapv_test";
    fs::create_directories(dir);
    std::string path = (dir / "v.uapv").string();

    Rng rng(4);
    PerturbationVector v = PerturbationVector::zeros({3, 8, 8}, NormType::linf, 0.04);
    for (float& x : v.v) x = static_cast<float>(rng.uniform(-0.04, 0.04));
    v.source_model = "small-cnn-a";
    v.seed = 42;
    v.passes = 3;
    v.final_fooling_ratio = 0.93;
    v.history = {0.4, 0.8, 0.93};

    save_perturbation(v, path);
    PerturbationVector loaded = load_perturbation(path);
    CHECK(loaded.v == v.v);
    CHECK(loaded.p == v.p);
    CHECK(loaded.xi == doctest::Approx(v.xi));
    CHECK(loaded.shape == v.shape);
    CHECK(loaded.source_model == v.source_model);
    CHECK(loaded.seed == v.seed);
    CHECK(loaded.passes == v.passes);
    CHECK(loaded.history == v.history);

    save_perturbation(loaded, path + ".second");
    CHECK(read_file_bytes(path) == read_file_bytes(path + ".second"));

    auto bytes = read_file_bytes(path);
    bytes[bytes.size() / 2] ^= 0x1;
    write_file_atomic(path, bytes.data(), bytes.size());
    CHECK_THROWS_AS(load_perturbation(path), CorruptFile);
    fs::remove_all(dir);
}
