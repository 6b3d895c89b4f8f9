#pragma once

#include <string>
#include <vector>

#include "uaplab/tensor.hpp"

namespace uaplab {

// 8-bit non-interlaced PNG, greyscale / RGB / greyscale+alpha / RGBA
// (alpha is dropped on read). Pixels map to [0,1].
ImageTensor decode_png(const std::vector<unsigned char>& bytes);
ImageTensor read_png(const std::string& path);

// channels must be 1 (greyscale) or 3 (RGB); values are clamped to [0,1]
// and quantized to 8 bits
std::vector<unsigned char> encode_png(const ImageTensor& img);
void write_png(const std::string& path, const ImageTensor& img);

} // namespace uaplab
