#pragma once

#include <string>

#include "uaplab/tensor.hpp"

namespace uaplab {

struct PreprocessConfig {
    double black_threshold = 7.0 / 255.0;
    int target_size = 224;
    double fill = 0.0;
    double sigma = 224.0 / 30.0;
    double alpha = 4.0;
    double beta = -4.0;
    double gamma = 0.5;

    // default blur scale tracks the output resolution
    static PreprocessConfig for_target_size(int size) {
        PreprocessConfig cfg;
        cfg.target_size = size;
        cfg.sigma = size / 30.0;
        return cfg;
    }
};

// Removes maximal leading/trailing rows and columns whose greyscale intensity
// is <= threshold everywhere. Throws EmptyResult when nothing remains.
ImageTensor trim_black_borders(const ImageTensor& img, double intensity_threshold);

ImageTensor resize_bilinear(const ImageTensor& img, int out_height, int out_width);

// Pixels strictly outside the centered circle of radius min(H,W)/2 are set to
// fill (distances measured between pixel centers).
ImageTensor circular_crop(const ImageTensor& img, double fill);

// clip(alpha*img + beta*gaussian_blur(img, sigma) + gamma, 0, 1); the kernel
// is truncated at 4*sigma, normalized, with reflective boundary handling.
ImageTensor smooth_normalize(const ImageTensor& img, double sigma, double alpha,
                             double beta, double gamma);

// trim -> resize -> circular crop -> smooth
ImageTensor preprocess_image(const ImageTensor& img, const PreprocessConfig& cfg);

std::string preprocess_config_hash(const PreprocessConfig& cfg);

} // namespace uaplab
