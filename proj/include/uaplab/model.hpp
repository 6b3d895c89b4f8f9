#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "uaplab/tensor.hpp"

namespace uaplab {

// Minimal differentiable-classifier interface: everything the attack and
// evaluation code needs. Externally supplied models only have to implement
// this, keeping the methodology model-agnostic.
class Classifier {
public:
    virtual ~Classifier() = default;

    virtual int num_classes() const = 0;
    virtual Shape input_shape() const = 0;
    virtual std::vector<double> logits(const ImageTensor& x) const = 0;

    // d logit_k / d x
    virtual ImageTensor class_gradient(const ImageTensor& x, int k) const = 0;
    // d CE(softmax(f(x)), y) / d x
    virtual ImageTensor loss_gradient(const ImageTensor& x, int y) const = 0;
};

std::vector<double> softmax(std::span<const double> logits);

// argmax with ties broken toward the lower class index
int argmax_label(std::span<const double> logits);
int predict(const Classifier& model, const ImageTensor& x);
std::vector<int> predict_batch(const Classifier& model, const std::vector<ImageTensor>& batch,
                               int jobs = 1);
std::vector<std::vector<double>> forward_logits(const Classifier& model,
                                                const std::vector<ImageTensor>& batch,
                                                int jobs = 1);

enum class Activation { none, relu, tanh_sat };
enum class PoolKind { max, avg };
enum class LayerKind { conv, pool, dense };

struct LayerDef {
    LayerKind kind = LayerKind::dense;
    int in_c = 0, in_h = 0, in_w = 0;
    int out_c = 0, out_h = 0, out_w = 0;
    int ksize = 0, pad = 0;
    Activation act = Activation::none;
    PoolKind pool = PoolKind::max;
    std::size_t w_offset = 0, w_count = 0, b_offset = 0, b_count = 0;
};

// Small CPU classifier with a flat float32 parameter store and a body/head
// partition at the final dense layer. All arithmetic is double precision.
class ClassifierModel : public Classifier {
public:
    ClassifierModel() = default;

    const std::string& arch_id() const { return arch_id_; }
    int num_classes() const override { return num_classes_; }
    Shape input_shape() const override { return input_shape_; }

    std::vector<double> logits(const ImageTensor& x) const override;
    ImageTensor class_gradient(const ImageTensor& x, int k) const override;
    ImageTensor loss_gradient(const ImageTensor& x, int y) const override;

    std::span<const float> parameters() const { return params_; }
    std::span<float> parameters_mut() { return params_; }
    std::size_t head_offset() const { return head_offset_; }

    // Cross-entropy loss for one sample; parameter gradients are accumulated
    // into grads (same length as parameters()). With head_only only the final
    // dense layer receives gradient.
    double loss_and_param_grad(const ImageTensor& x, int y, std::span<double> grads,
                               bool head_only) const;

    const std::vector<LayerDef>& layers() const { return layers_; }

    // used by the registry and checkpoint loader
    static ClassifierModel from_spec(std::string arch_id, int num_classes, Shape input_shape,
                                     std::vector<LayerDef> layers, std::vector<float> params,
                                     std::size_t head_offset);

private:
    struct ForwardCache {
        std::vector<std::vector<double>> act;       // act[0] = input, act[L] = logits
        std::vector<std::vector<int>> pool_argmax;  // per layer, max pools only
    };

    std::vector<double> forward(const ImageTensor& x, ForwardCache* cache) const;
    // dlogits -> gradients. Any of param_grads / input_grad may be null.
    void backward(const ForwardCache& cache, std::span<const double> dlogits,
                  double* param_grads, double* input_grad, bool head_only) const;
    void check_input(const ImageTensor& x) const;

    std::string arch_id_;
    Shape input_shape_{};
    int num_classes_ = 0;
    std::vector<LayerDef> layers_;
    std::vector<float> params_;
    std::size_t head_offset_ = 0;
};

// Registry of small heterogeneous reference architectures standing in for the
// production model zoo: two conv depths, a width variant and an MLP.
ClassifierModel build_model(const std::string& arch_id, int num_classes, Shape input_shape,
                            std::uint64_t seed);
std::vector<std::string> registered_architectures();

} // namespace uaplab
