#include "uaplab/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include <json.hpp>

#include "uaplab/errors.hpp"
#include "uaplab/hash.hpp"
#include "uaplab/util.hpp"

namespace uaplab {

const char* norm_name(NormType p) { return p == NormType::linf ? "inf" : "2"; }

NormType parse_norm(const std::string& name) {
    if (name == "inf" || name == "linf") return NormType::linf;
    if (name == "2" || name == "l2") return NormType::l2;
    throw Error("unknown norm '" + name + "', expected inf or 2");
}

ImageTensor PerturbationVector::as_tensor() const {
    ImageTensor t(shape.c, shape.h, shape.w);
    for (std::size_t i = 0; i < v.size(); ++i) t.pixels[i] = v[i];
    return t;
}

PerturbationVector PerturbationVector::zeros(Shape shape, NormType p, double xi) {
    PerturbationVector vec;
    vec.shape = shape;
    vec.v.assign(shape.numel(), 0.0f);
    vec.p = p;
    vec.xi = xi;
    return vec;
}

namespace {

void project_inplace(std::vector<double>& v, NormType p, double xi) {
    if (p == NormType::linf) {
        for (double& x : v) x = std::clamp(x, -xi, xi);
        return;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    // the relative slack keeps re-projection an exact no-op: rescaling lands
    // within a few ulp of xi, which must not trigger a second rescale
    if (norm > xi * (1.0 + 1e-12)) {
        double scale = xi / norm;
        for (double& x : v) x *= scale;
    }
}

} // namespace

ImageTensor project_lp_ball(const ImageTensor& v, NormType p, double xi) {
    if (xi <= 0.0) throw InvalidBudget("project_lp_ball: xi must be > 0");
    ImageTensor out = v;
    project_inplace(out.pixels, p, xi);
    return out;
}

std::optional<DeepFoolResult> try_deepfool(const Classifier& model, const ImageTensor& x,
                                           const AttackConfig& config) {
    const int num_classes = model.num_classes();
    const std::size_t n = x.numel();
    const double overshoot = config.overshoot;

    std::vector<double> logits0 = model.logits(x);
    int source = argmax_label(logits0);

    std::vector<double> r_total(n, 0.0);
    ImageTensor x_cur = x;
    int flipped = source;
    int iterations = 0;

    for (int iter = 0; iter < config.deepfool_max_iter; ++iter) {
        std::vector<double> logits = model.logits(x_cur);
        flipped = argmax_label(logits);
        if (flipped != source) break;

        ImageTensor grad_source = model.class_gradient(x_cur, source);
        double best_dist = 0.0;
        std::vector<double> best_w;
        bool found = false;
        for (int cls = 0; cls < num_classes; ++cls) {
            if (cls == source) continue;
            ImageTensor grad_cls = model.class_gradient(x_cur, cls);
            std::vector<double> w(n);
            double w_norm_sq = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                w[i] = grad_cls.pixels[i] - grad_source.pixels[i];
                w_norm_sq += w[i] * w[i];
            }
            double w_norm = std::sqrt(w_norm_sq);
            if (w_norm < 1e-12) continue; // parallel boundary, cannot step toward it
            double dist = std::fabs(logits[cls] - logits[source]) / w_norm;
            if (!found || dist < best_dist) {
                found = true;
                best_dist = dist;
                best_w = std::move(w);
            }
        }
        if (!found) { ++iterations; continue; }

        double w_norm_sq = 0.0;
        for (double wi : best_w) w_norm_sq += wi * wi;
        double coeff = best_dist / std::sqrt(w_norm_sq); // |f'| / ||w'||^2
        for (std::size_t i = 0; i < n; ++i) r_total[i] += coeff * best_w[i];
        ++iterations;

        for (std::size_t i = 0; i < n; ++i)
            x_cur.pixels[i] = x.pixels[i] + (1.0 + overshoot) * r_total[i];
    }

    if (flipped == source) {
        std::vector<double> logits = model.logits(x_cur);
        flipped = argmax_label(logits);
        if (flipped == source) return std::nullopt;
    }

    DeepFoolResult result;
    result.r = ImageTensor::zeros_like(x);
    for (std::size_t i = 0; i < n; ++i)
        result.r.pixels[i] = (1.0 + overshoot) * r_total[i];
    result.iterations = iterations;
    result.source_label = source;
    result.flipped_label = flipped;
    return result;
}

DeepFoolResult deepfool(const Classifier& model, const ImageTensor& x,
                        const AttackConfig& config) {
    auto result = try_deepfool(model, x, config);
    if (!result)
        throw MaxIterExceeded("deepfool: no label flip within " +
                              std::to_string(config.deepfool_max_iter) + " iterations");
    return *result;
}

namespace {

ImageTensor add_perturbation(const ImageTensor& x, const PerturbationVector& v) {
    ImageTensor out = x;
    for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] += v.v[i];
    clip01_inplace(out);
    return out;
}

void check_perturbation_shape(const LabeledDataset& dataset, const PerturbationVector& v) {
    if (dataset.empty()) throw EmptyDataset("perturbation: empty dataset");
    if (dataset.items.front().image.shape() != v.shape)
        throw ShapeMismatch("perturbation shape does not match dataset images");
}

} // namespace

double fooling_ratio(const Classifier& model, const LabeledDataset& dataset,
                     const PerturbationVector& v, int jobs) {
    check_perturbation_shape(dataset, v);
    std::vector<char> fooled(dataset.size(), 0);
    parallel_for(dataset.size(), jobs, [&](std::size_t i) {
        const ImageTensor& x = dataset.items[i].image;
        int clean = predict(model, x);
        int attacked = predict(model, add_perturbation(x, v));
        fooled[i] = attacked != clean;
    });
    std::size_t count = 0;
    for (char f : fooled) count += f;
    return static_cast<double>(count) / static_cast<double>(dataset.size());
}

PerturbationVector generate_uap(const Classifier& model, const LabeledDataset& dp,
                                const AttackConfig& config,
                                const std::string& source_model_id, int jobs) {
    if (dp.empty()) throw EmptyDataset("generate_uap: empty D_p");
    if (config.xi <= 0.0) throw InvalidBudget("generate_uap: xi must be > 0");

    PerturbationVector vec =
        PerturbationVector::zeros(dp.items.front().image.shape(), config.p, config.xi);
    vec.source_model = source_model_id;
    vec.seed = config.shuffle_seed;

    // reference predictions on clean points, fixed for the whole generation
    std::vector<int> clean_pred(dp.size());
    parallel_for(dp.size(), jobs,
                 [&](std::size_t i) { clean_pred[i] = predict(model, dp.items[i].image); });

    auto current_ratio = [&]() {
        std::vector<char> fooled(dp.size(), 0);
        parallel_for(dp.size(), jobs, [&](std::size_t i) {
            fooled[i] = predict(model, add_perturbation(dp.items[i].image, vec)) !=
                        clean_pred[i];
        });
        std::size_t count = 0;
        for (char f : fooled) count += f;
        return static_cast<double>(count) / static_cast<double>(dp.size());
    };

    double ratio = current_ratio();
    PerturbationVector best = vec;
    best.final_fooling_ratio = ratio;

    Rng shuffle_rng(config.shuffle_seed);
    std::vector<std::size_t> order(dp.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> working(vec.v.size());

    while (ratio <= config.target_fooling && vec.passes < config.max_passes) {
        shuffle_rng.shuffle(order);
        for (std::size_t idx : order) {
            const ImageTensor& x = dp.items[idx].image;
            ImageTensor x_pert = add_perturbation(x, vec);
            if (predict(model, x_pert) != clean_pred[idx]) continue;
            auto step = try_deepfool(model, x_pert, config);
            if (!step) continue; // unfoolable within budget, skip
            for (std::size_t i = 0; i < working.size(); ++i)
                working[i] = static_cast<double>(vec.v[i]) + step->r.pixels[i];
            project_inplace(working, config.p, config.xi);
            for (std::size_t i = 0; i < working.size(); ++i)
                vec.v[i] = static_cast<float>(working[i]);
        }
        vec.passes++;
        ratio = current_ratio();
        vec.history.push_back(ratio);
        vec.final_fooling_ratio = ratio;
        if (ratio > best.final_fooling_ratio) best = vec;
        log_debug("uap " + source_model_id + " pass " + std::to_string(vec.passes) +
                  " fooling " + format_fixed(ratio, 4));
    }

    if (ratio <= config.target_fooling)
        throw TargetNotReached("generate_uap: fooling ratio " + format_fixed(ratio, 4) +
                                   " did not exceed target " +
                                   format_fixed(config.target_fooling, 4) + " after " +
                                   std::to_string(vec.passes) + " passes",
                               best);
    return vec;
}

ImageTensor fgsm(const Classifier& model, const ImageTensor& x, int y, double eps) {
    if (eps < 0.0) throw InvalidBudget("fgsm: eps must be >= 0");
    ImageTensor grad = model.loss_gradient(x, y);
    ImageTensor out = x;
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        double g = grad.pixels[i];
        double sign = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
        out.pixels[i] += eps * sign;
    }
    clip01_inplace(out);
    return out;
}

LabeledDataset perturb_dataset(const LabeledDataset& dataset, const PerturbationVector& v) {
    check_perturbation_shape(dataset, v);
    LabeledDataset out;
    out.role = dataset.role;
    out.items.reserve(dataset.size());
    for (const auto& item : dataset.items) {
        DatasetItem copy;
        copy.id = item.id;
        copy.grade = item.grade;
        copy.image = add_perturbation(item.image, v);
        out.items.push_back(std::move(copy));
    }
    return out;
}

namespace {

void push_u16(std::vector<unsigned char>& out, std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v));
    out.push_back(static_cast<unsigned char>(v >> 8));
}

void push_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void push_f32(std::vector<unsigned char>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    push_u32(out, bits);
}

} // namespace

void save_perturbation(const PerturbationVector& v, const std::string& path) {
    std::vector<unsigned char> out;
    out.insert(out.end(), {'U', 'A', 'P', 'V'});
    push_u16(out, kPerturbationVersion);
    out.push_back(v.p == NormType::linf ? 0 : 1);
    push_f32(out, static_cast<float>(v.xi));
    out.push_back(3); // ndim
    push_u32(out, static_cast<std::uint32_t>(v.shape.c));
    push_u32(out, static_cast<std::uint32_t>(v.shape.h));
    push_u32(out, static_cast<std::uint32_t>(v.shape.w));
    std::size_t payload_at = out.size();
    out.resize(out.size() + v.v.size() * sizeof(float));
    std::memcpy(out.data() + payload_at, v.v.data(), v.v.size() * sizeof(float));
    push_u32(out, crc32_of(out.data(), out.size()));
    write_file_atomic(path, out.data(), out.size());

    nlohmann::json sidecar;
    sidecar["schema"] = "uaplab/uap/v1";
    sidecar["source_model"] = v.source_model;
    sidecar["seed"] = v.seed;
    sidecar["passes"] = v.passes;
    sidecar["final_fooling_ratio"] = v.final_fooling_ratio;
    sidecar["history"] = v.history;
    sidecar["norm"] = norm_name(v.p);
    sidecar["xi"] = v.xi;
    write_file_atomic(path + ".json", sidecar.dump(2) + "\n");
}

PerturbationVector load_perturbation(const std::string& path) {
    auto bytes = read_file_bytes(path);
    if (bytes.size() < 4 + 2 + 1 + 4 + 1 + 12 + 4)
        throw CorruptFile(path + ": file too short");
    std::uint32_t stored_crc = std::uint32_t(bytes[bytes.size() - 4]) |
                               (std::uint32_t(bytes[bytes.size() - 3]) << 8) |
                               (std::uint32_t(bytes[bytes.size() - 2]) << 16) |
                               (std::uint32_t(bytes[bytes.size() - 1]) << 24);
    if (crc32_of(bytes.data(), bytes.size() - 4) != stored_crc)
        throw CorruptFile(path + ": checksum failure");
    if (std::memcmp(bytes.data(), "UAPV", 4) != 0)
        throw CorruptFile(path + ": bad magic");

    std::size_t pos = 4;
    std::uint16_t version =
        static_cast<std::uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
    pos += 2;
    if (version != kPerturbationVersion)
        throw VersionMismatch(path + ": perturbation version " + std::to_string(version));

    PerturbationVector v;
    v.p = bytes[pos++] == 0 ? NormType::linf : NormType::l2;
    std::uint32_t xi_bits = 0;
    std::memcpy(&xi_bits, &bytes[pos], 4);
    float xi_f = 0.0f;
    std::memcpy(&xi_f, &xi_bits, 4);
    v.xi = xi_f;
    pos += 4;
    int ndim = bytes[pos++];
    if (ndim != 3) throw CorruptFile(path + ": expected 3 dims");
    std::uint32_t dims[3];
    for (auto& d : dims) {
        std::memcpy(&d, &bytes[pos], 4);
        pos += 4;
    }
    v.shape = Shape{static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                    static_cast<int>(dims[2])};
    std::size_t count = v.shape.numel();
    if (pos + count * sizeof(float) + 4 != bytes.size())
        throw CorruptFile(path + ": payload size mismatch");
    v.v.resize(count);
    std::memcpy(v.v.data(), &bytes[pos], count * sizeof(float));

    try {
        nlohmann::json sidecar = nlohmann::json::parse(read_file(path + ".json"));
        v.source_model = sidecar.value("source_model", "");
        v.seed = sidecar.value("seed", std::uint64_t{0});
        v.passes = sidecar.value("passes", 0);
        v.final_fooling_ratio = sidecar.value("final_fooling_ratio", 0.0);
        v.history = sidecar.value("history", std::vector<double>{});
    } catch (const IoError&) {
        // sidecar optional; binary payload is self-contained
    }
    return v;
}

} // namespace uaplab
