#pragma once

#include <string>

#include "mdeh/tensor.hpp"

namespace mdeh {

/// Images are (C,H,W) f32 tensors in [0,1]; C is 1 (gray) or 3 (RGB).

Tensor load_png(const std::string& path);
/// 8-bit PNG; values are clamped and rounded. Writes atomically (tmp+rename).
void save_png(const std::string& path, const Tensor& image);

/// Rec.601 luma of an RGB pixel column vector.
inline float luminance(float r, float g, float b) {
  return 0.299f * r + 0.587f * g + 0.114f * b;
}

/// Round-trip a [0,1] float through the 8-bit quantization PNG storage applies.
inline float quantize8(float v) {
  float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<float>(static_cast<int>(c * 255.0f + 0.5f)) / 255.0f;
}
Tensor quantized8(const Tensor& image);

}  // namespace mdeh
