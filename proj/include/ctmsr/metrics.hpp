#pragma once

#include "ctmsr/tensor.hpp"

namespace ctmsr {

// 10 * log10(peak^2 / MSE) with peak 2 for the [-1, 1] value range, capped at
// 99 dB (the cap doubles as the identical-input sentinel).
double psnr(const Tensor& a, const Tensor& b);

// Same, computed on the luma channel (BT.601 weights 0.299/0.587/0.114).
double psnr_y(const Tensor& a, const Tensor& b);

// Mean structural similarity over an 11x11 Gaussian window (std 1.5),
// stabilizers C1 = (0.01 L)^2 and C2 = (0.03 L)^2 with L = 2, averaged over
// channels and window positions; requires sides >= 11.
double ssim(const Tensor& a, const Tensor& b);

}  // namespace ctmsr
