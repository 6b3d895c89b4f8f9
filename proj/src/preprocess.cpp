#include "uaplab/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "uaplab/errors.hpp"
#include "uaplab/hash.hpp"

namespace uaplab {

namespace {

double grey_intensity(const ImageTensor& img, int y, int x) {
    if (img.channels == 3)
        return 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
    return img.at(0, y, x);
}

// reflective index (symmetric, edge pixel repeated): -1 -> 0, n -> n-1
int reflect(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - i - 1;
    }
    return i;
}

std::vector<double> gaussian_taps(double sigma) {
    int radius = static_cast<int>(std::floor(4.0 * sigma));
    std::vector<double> taps(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        double v = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
        taps[i + radius] = v;
        sum += v;
    }
    for (double& t : taps) t /= sum;
    return taps;
}

} // namespace

ImageTensor trim_black_borders(const ImageTensor& img, double intensity_threshold) {
    if (img.empty()) throw EmptyResult("trim_black_borders: empty input");
    if (intensity_threshold < 0.0 || intensity_threshold >= 1.0)
        throw Error("trim_black_borders: threshold must be in [0,1)");

    auto row_dark = [&](int y) {
        for (int x = 0; x < img.width; ++x)
            if (grey_intensity(img, y, x) > intensity_threshold) return false;
        return true;
    };
    auto col_dark = [&](int x, int y0, int y1) {
        for (int y = y0; y <= y1; ++y)
            if (grey_intensity(img, y, x) > intensity_threshold) return false;
        return true;
    };

    int top = 0, bottom = img.height - 1;
    while (top <= bottom && row_dark(top)) ++top;
    if (top > bottom) throw EmptyResult("trim_black_borders: image entirely below threshold");
    while (bottom > top && row_dark(bottom)) --bottom;

    int left = 0, right = img.width - 1;
    while (left <= right && col_dark(left, top, bottom)) ++left;
    while (right > left && col_dark(right, top, bottom)) --right;

    ImageTensor out(img.channels, bottom - top + 1, right - left + 1);
    for (int c = 0; c < img.channels; ++c)
        for (int y = top; y <= bottom; ++y)
            for (int x = left; x <= right; ++x)
                out.at(c, y - top, x - left) = img.at(c, y, x);
    return out;
}

ImageTensor resize_bilinear(const ImageTensor& img, int out_height, int out_width) {
    if (img.empty() || out_height < 1 || out_width < 1)
        throw Error("resize_bilinear: bad dimensions");
    ImageTensor out(img.channels, out_height, out_width);
    double sy = static_cast<double>(img.height) / out_height;
    double sx = static_cast<double>(img.width) / out_width;
    for (int y = 0; y < out_height; ++y) {
        double src_y = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(src_y));
        double fy = src_y - y0;
        int y0c = std::clamp(y0, 0, img.height - 1);
        int y1c = std::clamp(y0 + 1, 0, img.height - 1);
        for (int x = 0; x < out_width; ++x) {
            double src_x = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(src_x));
            double fx = src_x - x0;
            int x0c = std::clamp(x0, 0, img.width - 1);
            int x1c = std::clamp(x0 + 1, 0, img.width - 1);
            for (int c = 0; c < img.channels; ++c) {
                double v00 = img.at(c, y0c, x0c), v01 = img.at(c, y0c, x1c);
                double v10 = img.at(c, y1c, x0c), v11 = img.at(c, y1c, x1c);
                out.at(c, y, x) = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                  fy * ((1 - fx) * v10 + fx * v11);
            }
        }
    }
    return out;
}

ImageTensor circular_crop(const ImageTensor& img, double fill) {
    if (img.empty()) throw Error("circular_crop: empty input");
    ImageTensor out = img;
    double cy = img.height / 2.0;
    double cx = img.width / 2.0;
    double radius = std::min(img.height, img.width) / 2.0;
    double r2 = radius * radius;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double dy = (y + 0.5) - cy;
            double dx = (x + 0.5) - cx;
            if (dy * dy + dx * dx > r2)
                for (int c = 0; c < img.channels; ++c) out.at(c, y, x) = fill;
        }
    }
    return out;
}

ImageTensor smooth_normalize(const ImageTensor& img, double sigma, double alpha,
                             double beta, double gamma) {
    if (sigma <= 0.0) throw InvalidSigma("smooth_normalize: sigma must be > 0");
    if (img.empty()) throw Error("smooth_normalize: empty input");

    auto taps = gaussian_taps(sigma);
    int radius = (static_cast<int>(taps.size()) - 1) / 2;

    // separable blur: horizontal then vertical
    ImageTensor tmp(img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                double acc = 0.0;
                for (int t = -radius; t <= radius; ++t)
                    acc += taps[t + radius] * img.at(c, y, reflect(x + t, img.width));
                tmp.at(c, y, x) = acc;
            }
    ImageTensor blurred(img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                double acc = 0.0;
                for (int t = -radius; t <= radius; ++t)
                    acc += taps[t + radius] * tmp.at(c, reflect(y + t, img.height), x);
                blurred.at(c, y, x) = acc;
            }

    ImageTensor out(img.channels, img.height, img.width);
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        double v = alpha * img.pixels[i] + beta * blurred.pixels[i] + gamma;
        out.pixels[i] = std::clamp(v, 0.0, 1.0);
    }
    return out;
}

ImageTensor preprocess_image(const ImageTensor& img, const PreprocessConfig& cfg) {
    ImageTensor stage = trim_black_borders(img, cfg.black_threshold);
    stage = resize_bilinear(stage, cfg.target_size, cfg.target_size);
    stage = circular_crop(stage, cfg.fill);
    return smooth_normalize(stage, cfg.sigma, cfg.alpha, cfg.beta, cfg.gamma);
}

std::string preprocess_config_hash(const PreprocessConfig& cfg) {
    nlohmann::json j;
    j["black_threshold"] = cfg.black_threshold;
    j["target_size"] = cfg.target_size;
    j["fill"] = cfg.fill;
    j["sigma"] = cfg.sigma;
    j["alpha"] = cfg.alpha;
    j["beta"] = cfg.beta;
    j["gamma"] = cfg.gamma;
    return Sha256::of(j.dump());
}

} // namespace uaplab
