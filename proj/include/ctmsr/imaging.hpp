#pragma once

#include <string>

#include "ctmsr/tensor.hpp"

namespace ctmsr {

// 8-bit RGB PNG I/O with the value map png = round((v + 1) * 127.5), clamped
// to [0, 255]; reading applies the inverse map back into [-1, 1].
void write_png(const std::string& path, const Tensor& img);
Tensor read_png(const std::string& path);

// Separable Gaussian blur with reflected borders; no-op when sigma == 0.
Tensor gaussian_blur(const Tensor& img, double sigma);

// Factor-f block mean.
Tensor downsample_box(const Tensor& img, int factor);

// Catmull-Rom (a = -0.5) resampling with center-aligned coordinates and
// reflected borders. Downsampling widens the kernel by the scale factor so it
// antialiases.
Tensor resize_bicubic(const Tensor& img, int out_h, int out_w);

}  // namespace ctmsr
