#pragma once

#include <string>

#include "tdm/tensor.hpp"

namespace tdm {

// 8-bit PNG, grayscale for C=1 and RGB for C=3; values clamped to [0,1].
void write_png(const std::string& path, const Tensor& image);
Tensor read_png(const std::string& path);

// Header-less little-endian float32 dump in C order; shape comes from the
// clip manifest.
void write_f32(const std::string& path, const Tensor& image);
Tensor read_f32(const std::string& path, const std::vector<int>& shape);

}  // namespace tdm
