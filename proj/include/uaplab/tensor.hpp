#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "uaplab/errors.hpp"

namespace uaplab {

struct Shape {
    int c = 0;
    int h = 0;
    int w = 0;

    bool operator==(const Shape&) const = default;
    std::size_t numel() const { return static_cast<std::size_t>(c) * h * w; }
};

// C x H x W image (or image-shaped tensor), row-major, pixels expected in [0,1]
// for actual images; attack/gradient tensors may hold arbitrary reals.
struct ImageTensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> pixels;

    ImageTensor() = default;
    ImageTensor(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w),
          pixels(static_cast<std::size_t>(c) * h * w, fill) {}

    static ImageTensor zeros_like(const ImageTensor& other) {
        return ImageTensor(other.channels, other.height, other.width);
    }

    Shape shape() const { return Shape{channels, height, width}; }
    std::size_t numel() const { return pixels.size(); }
    bool empty() const { return pixels.empty(); }

    double& at(int c, int y, int x) {
        return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
    }

    bool operator==(const ImageTensor&) const = default;
};

inline void clip01_inplace(ImageTensor& img) {
    for (double& p : img.pixels) {
        if (p < 0.0) p = 0.0;
        else if (p > 1.0) p = 1.0;
    }
}

inline ImageTensor clip01(ImageTensor img) {
    clip01_inplace(img);
    return img;
}

inline double linf_norm(const ImageTensor& t) {
    double m = 0.0;
    for (double p : t.pixels) m = std::max(m, std::fabs(p));
    return m;
}

inline double l2_norm(const ImageTensor& t) {
    double s = 0.0;
    for (double p : t.pixels) s += p * p;
    return std::sqrt(s);
}

inline bool all_finite(const ImageTensor& t) {
    for (double p : t.pixels)
        if (!std::isfinite(p)) return false;
    return true;
}

inline void require_shape(const ImageTensor& t, const Shape& expect, const char* what) {
    if (t.shape() != expect)
        throw ShapeMismatch(std::string(what) + ": tensor shape does not match");
}

} // namespace uaplab
