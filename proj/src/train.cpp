#include "uaplab/train.hpp"

#include <cmath>
#include <numeric>

#include "uaplab/analysis.hpp"
#include "uaplab/errors.hpp"
#include "uaplab/util.hpp"

namespace uaplab {

namespace {

void check_dataset(const ClassifierModel& model, const LabeledDataset& data,
                   const char* what) {
    if (data.empty()) throw EmptyDataset(std::string(what) + ": empty dataset");
    for (const auto& item : data.items)
        if (item.grade < 0 || item.grade >= model.num_classes())
            throw LabelOutOfRange(std::string(what) + ": label " +
                                  std::to_string(item.grade) + " for id " + item.id);
}

double validation_kappa(const ClassifierModel& model, const LabeledDataset& val) {
    std::vector<ImageTensor> images;
    images.reserve(val.size());
    for (const auto& item : val.items) images.push_back(item.image);
    std::vector<int> pred = predict_batch(model, images);
    try {
        return quadratic_kappa(val.grades(), pred, model.num_classes()).value;
    } catch (const DegenerateMarginals&) {
        return 0.0; // constant-and-identical raters; treat as chance level
    }
}

class Optimizer {
public:
    Optimizer(const TrainConfig& config, std::size_t n_params)
        : config_(config), m_(n_params, 0.0), v_(n_params, 0.0) {}

    void step(std::span<float> params, std::span<const double> grads, std::size_t begin,
              std::size_t end) {
        ++t_;
        if (config_.optimizer == OptimizerKind::sgd) {
            for (std::size_t i = begin; i < end; ++i)
                params[i] = static_cast<float>(params[i] - config_.learning_rate * grads[i]);
            return;
        }
        double b1t = 1.0 - std::pow(config_.adam_beta1, t_);
        double b2t = 1.0 - std::pow(config_.adam_beta2, t_);
        for (std::size_t i = begin; i < end; ++i) {
            m_[i] = config_.adam_beta1 * m_[i] + (1.0 - config_.adam_beta1) * grads[i];
            v_[i] = config_.adam_beta2 * v_[i] + (1.0 - config_.adam_beta2) * grads[i] * grads[i];
            double m_hat = m_[i] / b1t;
            double v_hat = v_[i] / b2t;
            params[i] = static_cast<float>(
                params[i] - config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.adam_eps));
        }
    }

private:
    TrainConfig config_;
    std::vector<double> m_, v_;
    int t_ = 0;
};

} // namespace

TrainHistory run_training(ClassifierModel& model, const LabeledDataset& train_set,
                          const LabeledDataset& validation, const TrainConfig& config,
                          int max_epochs, bool head_only) {
    check_dataset(model, train_set, "train");
    check_dataset(model, validation, "validation");
    if (config.batch_size < 1) throw Error("train: batch_size must be >= 1");
    if (config.early_stop_patience < 1) throw Error("train: patience must be >= 1");

    std::size_t n_params = model.parameters().size();
    std::size_t begin = head_only ? model.head_offset() : 0;
    Optimizer optimizer(config, n_params);
    Rng rng(config.seed);

    TrainHistory history;
    std::vector<float> best_params(model.parameters().begin(), model.parameters().end());
    int stall = 0;

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> grads(n_params);

    for (int epoch = 0; epoch < max_epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::fill(grads.begin(), grads.end(), 0.0);
            for (std::size_t i = start; i < stop; ++i) {
                const DatasetItem& item = train_set.items[order[i]];
                epoch_loss +=
                    model.loss_and_param_grad(item.image, item.grade, grads, head_only);
            }
            double scale = 1.0 / static_cast<double>(stop - start);
            for (std::size_t i = begin; i < n_params; ++i) grads[i] *= scale;
            optimizer.step(model.parameters_mut(), grads, begin, n_params);
        }

        EpochStats stats;
        stats.train_loss = epoch_loss / static_cast<double>(train_set.size());
        stats.val_kappa = validation_kappa(model, validation);
        history.epochs.push_back(stats);

        if (stats.val_kappa > history.best_val_kappa) {
            history.best_val_kappa = stats.val_kappa;
            history.best_epoch = epoch;
            best_params.assign(model.parameters().begin(), model.parameters().end());
            stall = 0;
        } else {
            ++stall;
            if (stall >= config.early_stop_patience) break;
        }
    }

    if (history.best_epoch >= 0)
        std::copy(best_params.begin(), best_params.end(), model.parameters_mut().begin());
    return history;
}

TrainHistory train(ClassifierModel& model, const LabeledDataset& train_set,
                   const TrainConfig& config, const LabeledDataset& validation) {
    return run_training(model, train_set, validation, config, config.max_epochs_pretrain,
                        false);
}

TwoStageHistory two_stage_finetune(ClassifierModel& model, const LabeledDataset& train_set,
                                   const TrainConfig& config,
                                   const LabeledDataset& validation) {
    TwoStageHistory history;
    if (config.max_epochs_pretrain > 0)
        history.head_stage = run_training(model, train_set, validation, config,
                                          config.max_epochs_pretrain, true);
    if (config.max_epochs_finetune > 0)
        history.full_stage = run_training(model, train_set, validation, config,
                                          config.max_epochs_finetune, false);
    return history;
}

namespace {

// oriented sinusoidal grating with per-image frequency, phase and noise
LabeledDataset grating_dataset(int n, Shape shape, int num_classes, std::uint64_t seed) {
    LabeledDataset ds;
    ds.items.reserve(n);
    for (int i = 0; i < n; ++i) {
        Rng rng(Rng::derive(seed, i));
        DatasetItem item;
        item.id = "src" + std::to_string(i);
        item.grade = i % num_classes;
        double angle = item.grade * 3.14159265358979323846 / num_classes;
        double freq = rng.uniform(0.5, 1.2);
        double phase = rng.uniform(0.0, 6.283185307179586);
        item.image = ImageTensor(shape.c, shape.h, shape.w);
        for (int c = 0; c < shape.c; ++c)
            for (int y = 0; y < shape.h; ++y)
                for (int x = 0; x < shape.w; ++x) {
                    double u = std::cos(angle) * x + std::sin(angle) * y;
                    double v = 0.5 + 0.4 * std::sin(freq * u + phase) +
                               0.03 * rng.gaussian();
                    item.image.at(c, y, x) = std::clamp(v, 0.0, 1.0);
                }
        ds.items.push_back(std::move(item));
    }
    return ds;
}

} // namespace

TrainHistory pretrain_source_task(ClassifierModel& model, const TrainConfig& config,
                                  int n_samples) {
    LabeledDataset source = grating_dataset(n_samples, model.input_shape(),
                                            model.num_classes(), config.seed ^ 0x5a5a);
    auto [val, fit] = stratified_split(source, 0.2, config.seed ^ 0xa5a5,
                                       DatasetRole::test, DatasetRole::train);
    return run_training(model, fit, val, config, config.max_epochs_pretrain, false);
}

void reinitialize_head(ClassifierModel& model, std::uint64_t seed) {
    Rng rng(seed);
    const LayerDef& head = model.layers().back();
    std::size_t fan_in = static_cast<std::size_t>(head.in_c) * head.in_h * head.in_w;
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    auto params = model.parameters_mut();
    for (std::size_t i = 0; i < head.w_count; ++i)
        params[head.w_offset + i] = static_cast<float>(rng.uniform(-limit, limit));
    for (std::size_t i = 0; i < head.b_count; ++i) params[head.b_offset + i] = 0.0f;
}

} // namespace uaplab
