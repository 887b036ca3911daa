#pragma once

#include <cstdint>
#include <vector>

#include "ctmsr/tensor.hpp"

namespace ctmsr {

// Hand-rolled layers with explicit forward caches and gradient accumulation.
// Each layer owns its parameters and matching gradient buffers; backward()
// adds into the gradient buffers and returns the gradient w.r.t. the input.
// Caches hold exactly what backward needs, so one (forward, backward) pair
// per item keeps memory bounded.

// 2-D convolution on (C, H, W) tensors via im2col and a GEMM. Kernel k with
// "same" padding k/2; stride 1 or 2.
struct Conv2d {
    int in_ch = 0, out_ch = 0, ksize = 3, stride = 1;
    Tensor w;  // (out_ch, in_ch * k * k)
    Tensor b;  // (out_ch)
    Tensor gw, gb;

    struct Cache {
        std::vector<int> in_shape;
        Tensor cols;  // (in_ch * k * k, out_h * out_w)
    };

    Conv2d() = default;
    Conv2d(int in, int out, int k, int s);

    void init(Rng& rng);  // Gaussian, std sqrt(2 / fan_in)
    void zero_params();
    Tensor forward(const Tensor& x, Cache* cache) const;
    Tensor backward(const Tensor& dy, const Cache& cache);
};

// Group normalization with per-channel affine parameters. The group count is
// the largest divisor of the channel count not exceeding 8.
struct GroupNorm {
    int channels = 0, groups = 1;
    double eps = 1e-5;
    Tensor gamma, beta;  // (channels)
    Tensor ggamma, gbeta;

    struct Cache {
        Tensor xhat;  // normalized input
        std::vector<double> inv_std;
    };

    GroupNorm() = default;
    explicit GroupNorm(int ch);

    Tensor forward(const Tensor& x, Cache* cache) const;
    Tensor backward(const Tensor& dy, const Cache& cache);
};

// Fully connected layer on rank-1 tensors.
struct Linear {
    int in_dim = 0, out_dim = 0;
    Tensor w;  // (out_dim, in_dim)
    Tensor b;  // (out_dim)
    Tensor gw, gb;

    struct Cache {
        Tensor x;
    };

    Linear() = default;
    Linear(int in, int out);

    void init(Rng& rng);  // Gaussian, std 1/sqrt(in_dim)
    Tensor forward(const Tensor& x, Cache* cache) const;
    Tensor backward(const Tensor& dy, const Cache& cache);
};

// x * sigmoid(x), elementwise; backward takes the forward input.
Tensor silu(const Tensor& x);
Tensor silu_backward(const Tensor& dy, const Tensor& x);

// (C, H, W) -> (C*r^2, H/r, W/r) space-to-depth rearrangement and inverse.
Tensor pixel_unshuffle(const Tensor& x, int r);
Tensor pixel_unshuffle_backward(const Tensor& dy, int r);

// (C, H, W) -> (C, H*r, W*r) nearest-neighbor upsampling; backward sum-pools.
Tensor nearest_upsample(const Tensor& x, int r);
Tensor nearest_upsample_backward(const Tensor& dy, int r);

// Sinusoidal embedding of a scalar: dim/2 sine and dim/2 cosine components
// with geometrically spaced frequencies from 1 down to 1/10000.
Tensor sinusoidal_embedding(double v, int dim);

int norm_groups(int channels);

}  // namespace ctmsr
