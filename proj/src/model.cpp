#include "uaplab/model.hpp"

#include <algorithm>
#include <cmath>

#include "uaplab/errors.hpp"
#include "uaplab/util.hpp"

namespace uaplab {

std::vector<double> softmax(std::span<const double> logits) {
    double max_logit = *std::max_element(logits.begin(), logits.end());
    std::vector<double> probs(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - max_logit);
        sum += probs[i];
    }
    for (double& p : probs) p /= sum;
    return probs;
}

int argmax_label(std::span<const double> logits) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(logits.size()); ++i)
        if (logits[i] > logits[best]) best = i;
    return best;
}

int predict(const Classifier& model, const ImageTensor& x) {
    auto l = model.logits(x);
    return argmax_label(l);
}

std::vector<int> predict_batch(const Classifier& model, const std::vector<ImageTensor>& batch,
                               int jobs) {
    std::vector<int> labels(batch.size());
    parallel_for(batch.size(), jobs,
                 [&](std::size_t i) { labels[i] = predict(model, batch[i]); });
    return labels;
}

std::vector<std::vector<double>> forward_logits(const Classifier& model,
                                                const std::vector<ImageTensor>& batch,
                                                int jobs) {
    std::vector<std::vector<double>> out(batch.size());
    parallel_for(batch.size(), jobs,
                 [&](std::size_t i) { out[i] = model.logits(batch[i]); });
    return out;
}

namespace {

void apply_activation(Activation act, std::vector<double>& v) {
    switch (act) {
        case Activation::none: break;
        case Activation::relu:
            for (double& x : v)
                if (x < 0.0) x = 0.0;
            break;
        case Activation::tanh_sat:
            for (double& x : v) x = std::tanh(x);
            break;
    }
}

// gradient through the activation, using post-activation values
void activation_backward(Activation act, const std::vector<double>& post,
                         std::vector<double>& grad) {
    switch (act) {
        case Activation::none: break;
        case Activation::relu:
            for (std::size_t i = 0; i < grad.size(); ++i)
                if (post[i] <= 0.0) grad[i] = 0.0;
            break;
        case Activation::tanh_sat:
            for (std::size_t i = 0; i < grad.size(); ++i)
                grad[i] *= 1.0 - post[i] * post[i];
            break;
    }
}

} // namespace

void ClassifierModel::check_input(const ImageTensor& x) const {
    if (x.shape() != input_shape_)
        throw ShapeMismatch(arch_id_ + ": input shape mismatch");
    if (!all_finite(x)) throw InvalidInput(arch_id_ + ": non-finite input pixel");
}

std::vector<double> ClassifierModel::forward(const ImageTensor& x, ForwardCache* cache) const {
    std::vector<double> cur = x.pixels;
    if (cache) {
        cache->act.clear();
        cache->pool_argmax.assign(layers_.size(), {});
        cache->act.push_back(cur);
    }

    for (std::size_t li = 0; li < layers_.size(); ++li) {
        const LayerDef& L = layers_[li];
        std::vector<double> next(static_cast<std::size_t>(L.out_c) * L.out_h * L.out_w);
        const float* w = params_.data() + L.w_offset;
        const float* b = params_.data() + L.b_offset;

        if (L.kind == LayerKind::conv) {
            int ih = L.in_h, iw = L.in_w, oh = L.out_h, ow = L.out_w;
            int k = L.ksize, pad = L.pad;
            for (int oc = 0; oc < L.out_c; ++oc) {
                double* out_plane = next.data() + static_cast<std::size_t>(oc) * oh * ow;
                std::fill(out_plane, out_plane + static_cast<std::size_t>(oh) * ow,
                          static_cast<double>(b[oc]));
                for (int ic = 0; ic < L.in_c; ++ic) {
                    const double* in_plane =
                        cur.data() + static_cast<std::size_t>(ic) * ih * iw;
                    const float* wk = w + (static_cast<std::size_t>(oc) * L.in_c + ic) * k * k;
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            double wv = wk[ky * k + kx];
                            int x0 = std::max(0, pad - kx);
                            int x1 = std::min(ow, iw + pad - kx);
                            if (x0 >= x1) continue;
                            for (int oy = 0; oy < oh; ++oy) {
                                int iy = oy - pad + ky;
                                if (iy < 0 || iy >= ih) continue;
                                const double* src = in_plane + static_cast<std::size_t>(iy) * iw +
                                                    (x0 - pad + kx);
                                double* dst = out_plane + static_cast<std::size_t>(oy) * ow + x0;
                                for (int i = 0; i < x1 - x0; ++i) dst[i] += wv * src[i];
                            }
                        }
                    }
                }
            }
            apply_activation(L.act, next);
        } else if (L.kind == LayerKind::pool) {
            int ih = L.in_h, iw = L.in_w, oh = L.out_h, ow = L.out_w;
            std::vector<int>* argmax = nullptr;
            if (cache && L.pool == PoolKind::max) {
                cache->pool_argmax[li].assign(next.size(), 0);
                argmax = &cache->pool_argmax[li];
            }
            for (int c = 0; c < L.in_c; ++c) {
                const double* in_plane = cur.data() + static_cast<std::size_t>(c) * ih * iw;
                double* out_plane = next.data() + static_cast<std::size_t>(c) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < ow; ++ox) {
                        int iy = 2 * oy, ix = 2 * ox;
                        if (L.pool == PoolKind::max) {
                            int best = iy * iw + ix;
                            double bv = in_plane[best];
                            const int cand[3] = {iy * iw + ix + 1, (iy + 1) * iw + ix,
                                                 (iy + 1) * iw + ix + 1};
                            for (int idx : cand) {
                                if (in_plane[idx] > bv) {
                                    bv = in_plane[idx];
                                    best = idx;
                                }
                            }
                            out_plane[oy * ow + ox] = bv;
                            if (argmax)
                                (*argmax)[static_cast<std::size_t>(c) * oh * ow + oy * ow + ox] =
                                    best;
                        } else {
                            out_plane[oy * ow + ox] =
                                0.25 * (in_plane[iy * iw + ix] + in_plane[iy * iw + ix + 1] +
                                        in_plane[(iy + 1) * iw + ix] +
                                        in_plane[(iy + 1) * iw + ix + 1]);
                        }
                    }
                }
            }
        } else { // dense
            std::size_t in_n = cur.size();
            for (int o = 0; o < L.out_c; ++o) {
                const float* wrow = w + static_cast<std::size_t>(o) * in_n;
                double acc = b[o];
                for (std::size_t i = 0; i < in_n; ++i) acc += double(wrow[i]) * cur[i];
                next[o] = acc;
            }
            apply_activation(L.act, next);
        }

        cur = std::move(next);
        if (cache) cache->act.push_back(cur);
    }
    return cur;
}

void ClassifierModel::backward(const ForwardCache& cache, std::span<const double> dlogits,
                               double* param_grads, double* input_grad, bool head_only) const {
    std::vector<double> dcur(dlogits.begin(), dlogits.end());

    for (int li = static_cast<int>(layers_.size()) - 1; li >= 0; --li) {
        const LayerDef& L = layers_[li];
        const std::vector<double>& in = cache.act[li];
        const std::vector<double>& out = cache.act[li + 1];
        const float* w = params_.data() + L.w_offset;

        if (L.kind != LayerKind::pool) activation_backward(L.act, out, dcur);

        bool is_head = (L.w_offset == head_offset_);
        bool want_params = param_grads && (!head_only || is_head);
        bool want_input = input_grad || li > 0;
        if (head_only && is_head) want_input = false; // nothing earlier needs gradient

        std::vector<double> din;
        if (want_input) din.assign(in.size(), 0.0);

        if (L.kind == LayerKind::conv) {
            int ih = L.in_h, iw = L.in_w, oh = L.out_h, ow = L.out_w;
            int k = L.ksize, pad = L.pad;
            for (int oc = 0; oc < L.out_c; ++oc) {
                const double* dout_plane = dcur.data() + static_cast<std::size_t>(oc) * oh * ow;
                if (want_params) {
                    double db = 0.0;
                    for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i)
                        db += dout_plane[i];
                    param_grads[L.b_offset + oc] += db;
                }
                for (int ic = 0; ic < L.in_c; ++ic) {
                    const double* in_plane = in.data() + static_cast<std::size_t>(ic) * ih * iw;
                    double* din_plane =
                        want_input ? din.data() + static_cast<std::size_t>(ic) * ih * iw : nullptr;
                    std::size_t wk_base = (static_cast<std::size_t>(oc) * L.in_c + ic) * k * k;
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            int x0 = std::max(0, pad - kx);
                            int x1 = std::min(ow, iw + pad - kx);
                            if (x0 >= x1) continue;
                            double wv = w[wk_base + ky * k + kx];
                            double dw = 0.0;
                            for (int oy = 0; oy < oh; ++oy) {
                                int iy = oy - pad + ky;
                                if (iy < 0 || iy >= ih) continue;
                                const double* src = in_plane + static_cast<std::size_t>(iy) * iw +
                                                    (x0 - pad + kx);
                                const double* dout_row =
                                    dout_plane + static_cast<std::size_t>(oy) * ow + x0;
                                if (want_params)
                                    for (int i = 0; i < x1 - x0; ++i) dw += dout_row[i] * src[i];
                                if (want_input) {
                                    double* dst = din_plane + static_cast<std::size_t>(iy) * iw +
                                                  (x0 - pad + kx);
                                    for (int i = 0; i < x1 - x0; ++i) dst[i] += wv * dout_row[i];
                                }
                            }
                            if (want_params) param_grads[L.w_offset + wk_base + ky * k + kx] += dw;
                        }
                    }
                }
            }
        } else if (L.kind == LayerKind::pool) {
            int ih = L.in_h, iw = L.in_w, oh = L.out_h, ow = L.out_w;
            for (int c = 0; want_input && c < L.in_c; ++c) {
                const double* dout_plane = dcur.data() + static_cast<std::size_t>(c) * oh * ow;
                double* din_plane = din.data() + static_cast<std::size_t>(c) * ih * iw;
                for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < ow; ++ox) {
                        double g = dout_plane[oy * ow + ox];
                        if (L.pool == PoolKind::max) {
                            int src = cache.pool_argmax[li]
                                                       [static_cast<std::size_t>(c) * oh * ow +
                                                        oy * ow + ox];
                            din_plane[src] += g;
                        } else {
                            int iy = 2 * oy, ix = 2 * ox;
                            din_plane[iy * iw + ix] += 0.25 * g;
                            din_plane[iy * iw + ix + 1] += 0.25 * g;
                            din_plane[(iy + 1) * iw + ix] += 0.25 * g;
                            din_plane[(iy + 1) * iw + ix + 1] += 0.25 * g;
                        }
                    }
                }
            }
        } else { // dense
            std::size_t in_n = in.size();
            for (int o = 0; o < L.out_c; ++o) {
                double g = dcur[o];
                const float* wrow = w + static_cast<std::size_t>(o) * in_n;
                if (want_params) {
                    param_grads[L.b_offset + o] += g;
                    double* dw_row = param_grads + L.w_offset + static_cast<std::size_t>(o) * in_n;
                    for (std::size_t i = 0; i < in_n; ++i) dw_row[i] += g * in[i];
                }
                if (want_input)
                    for (std::size_t i = 0; i < in_n; ++i) din[i] += double(wrow[i]) * g;
            }
        }

        if (head_only && is_head) return;
        if (li == 0) {
            if (input_grad && want_input)
                std::copy(din.begin(), din.end(), input_grad);
            return;
        }
        dcur = std::move(din);
    }
}

std::vector<double> ClassifierModel::logits(const ImageTensor& x) const {
    check_input(x);
    auto out = forward(x, nullptr);
    for (double v : out)
        if (!std::isfinite(v)) throw InvalidInput(arch_id_ + ": non-finite logits");
    return out;
}

ImageTensor ClassifierModel::class_gradient(const ImageTensor& x, int k) const {
    check_input(x);
    if (k < 0 || k >= num_classes_)
        throw InvalidClass(arch_id_ + ": class index " + std::to_string(k));
    ForwardCache cache;
    forward(x, &cache);
    std::vector<double> dlogits(num_classes_, 0.0);
    dlogits[k] = 1.0;
    ImageTensor grad = ImageTensor::zeros_like(x);
    backward(cache, dlogits, nullptr, grad.pixels.data(), false);
    return grad;
}

ImageTensor ClassifierModel::loss_gradient(const ImageTensor& x, int y) const {
    check_input(x);
    if (y < 0 || y >= num_classes_)
        throw InvalidClass(arch_id_ + ": label " + std::to_string(y));
    ForwardCache cache;
    auto out = forward(x, &cache);
    std::vector<double> dlogits = softmax(out);
    dlogits[y] -= 1.0;
    ImageTensor grad = ImageTensor::zeros_like(x);
    backward(cache, dlogits, nullptr, grad.pixels.data(), false);
    return grad;
}

double ClassifierModel::loss_and_param_grad(const ImageTensor& x, int y,
                                            std::span<double> grads, bool head_only) const {
    check_input(x);
    if (y < 0 || y >= num_classes_)
        throw LabelOutOfRange(arch_id_ + ": label " + std::to_string(y));
    if (grads.size() != params_.size())
        throw ShapeMismatch(arch_id_ + ": gradient buffer size mismatch");
    ForwardCache cache;
    auto out = forward(x, &cache);
    std::vector<double> probs = softmax(out);
    double loss = -std::log(std::max(probs[y], 1e-300));
    std::vector<double> dlogits = probs;
    dlogits[y] -= 1.0;
    backward(cache, dlogits, grads.data(), nullptr, head_only);
    return loss;
}

ClassifierModel ClassifierModel::from_spec(std::string arch_id, int num_classes,
                                           Shape input_shape, std::vector<LayerDef> layers,
                                           std::vector<float> params, std::size_t head_offset) {
    ClassifierModel m;
    m.arch_id_ = std::move(arch_id);
    m.num_classes_ = num_classes;
    m.input_shape_ = input_shape;
    m.layers_ = std::move(layers);
    m.params_ = std::move(params);
    m.head_offset_ = head_offset;
    return m;
}

namespace {

struct ArchBuilder {
    std::vector<LayerDef> layers;
    int c, h, w;
    std::size_t offset = 0;

    explicit ArchBuilder(Shape in) : c(in.c), h(in.h), w(in.w) {}

    void conv(int out_c, int k, Activation act) {
        LayerDef L;
        L.kind = LayerKind::conv;
        L.in_c = c; L.in_h = h; L.in_w = w;
        L.ksize = k;
        L.pad = (k - 1) / 2;
        L.out_c = out_c;
        L.out_h = h + 2 * L.pad - k + 1;
        L.out_w = w + 2 * L.pad - k + 1;
        L.act = act;
        L.w_offset = offset;
        L.w_count = static_cast<std::size_t>(out_c) * c * k * k;
        L.b_offset = offset + L.w_count;
        L.b_count = out_c;
        offset += L.w_count + L.b_count;
        layers.push_back(L);
        c = L.out_c; h = L.out_h; w = L.out_w;
    }

    void pool(PoolKind kind) {
        LayerDef L;
        L.kind = LayerKind::pool;
        L.in_c = c; L.in_h = h; L.in_w = w;
        L.out_c = c; L.out_h = h / 2; L.out_w = w / 2;
        L.pool = kind;
        layers.push_back(L);
        h = L.out_h; w = L.out_w;
    }

    void dense(int out_n, Activation act) {
        LayerDef L;
        L.kind = LayerKind::dense;
        L.in_c = c; L.in_h = h; L.in_w = w;
        L.out_c = out_n; L.out_h = 1; L.out_w = 1;
        L.act = act;
        L.w_offset = offset;
        L.w_count = static_cast<std::size_t>(out_n) * c * h * w;
        L.b_offset = offset + L.w_count;
        L.b_count = out_n;
        offset += L.w_count + L.b_count;
        layers.push_back(L);
        c = out_n; h = 1; w = 1;
    }
};

void init_params(std::vector<float>& params, const std::vector<LayerDef>& layers,
                 std::uint64_t seed) {
    Rng rng(seed);
    for (const LayerDef& L : layers) {
        if (L.kind == LayerKind::pool) continue;
        std::size_t fan_in = L.kind == LayerKind::conv
                                 ? static_cast<std::size_t>(L.in_c) * L.ksize * L.ksize
                                 : static_cast<std::size_t>(L.in_c) * L.in_h * L.in_w;
        std::size_t fan_out = L.kind == LayerKind::conv
                                  ? static_cast<std::size_t>(L.out_c) * L.ksize * L.ksize
                                  : static_cast<std::size_t>(L.out_c);
        double limit = L.act == Activation::tanh_sat
                           ? std::sqrt(6.0 / static_cast<double>(fan_in + fan_out))
                           : std::sqrt(6.0 / static_cast<double>(fan_in));
        for (std::size_t i = 0; i < L.w_count; ++i)
            params[L.w_offset + i] = static_cast<float>(rng.uniform(-limit, limit));
        for (std::size_t i = 0; i < L.b_count; ++i) params[L.b_offset + i] = 0.0f;
    }
}

} // namespace

std::vector<std::string> registered_architectures() {
    return {"small-cnn-a", "small-cnn-b", "small-cnn-c", "mlp"};
}

ClassifierModel build_model(const std::string& arch_id, int num_classes, Shape input_shape,
                            std::uint64_t seed) {
    if (num_classes < 2) throw Error("build_model: num_classes must be >= 2");
    if (input_shape.c < 1 || input_shape.h < 4 || input_shape.w < 4)
        throw Error("build_model: input shape too small");

    ArchBuilder b(input_shape);
    if (arch_id == "small-cnn-a") {
        b.conv(8, 3, Activation::relu);
        b.pool(PoolKind::max);
        b.conv(16, 3, Activation::relu);
        b.pool(PoolKind::max);
        b.dense(32, Activation::relu);
        b.dense(num_classes, Activation::none);
    } else if (arch_id == "small-cnn-b") {
        b.conv(12, 3, Activation::relu);
        b.pool(PoolKind::max);
        b.conv(12, 3, Activation::relu);
        b.pool(PoolKind::avg);
        b.dense(24, Activation::relu);
        b.dense(num_classes, Activation::none);
    } else if (arch_id == "small-cnn-c") {
        b.conv(6, 3, Activation::relu);
        b.pool(PoolKind::max);
        b.conv(12, 3, Activation::relu);
        b.conv(12, 3, Activation::relu);
        b.pool(PoolKind::avg);
        b.dense(48, Activation::relu);
        b.dense(num_classes, Activation::none);
    } else if (arch_id == "mlp") {
        b.dense(64, Activation::tanh_sat);
        b.dense(32, Activation::tanh_sat);
        b.dense(num_classes, Activation::none);
    } else {
        throw UnknownArchitecture("no architecture named '" + arch_id + "'");
    }

    std::vector<float> params(b.offset);
    init_params(params, b.layers, seed);
    std::size_t head_offset = b.layers.back().w_offset;
    return ClassifierModel::from_spec(arch_id, num_classes, input_shape,
                                      std::move(b.layers), std::move(params), head_offset);
}

} // namespace uaplab
