#include "ctmsr/nn.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <string>

namespace ctmsr {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;

int conv_out_side(int n, int k, int stride) { return (n + 2 * (k / 2) - k) / stride + 1; }

// Gathers k*k patches around each output location into a (C*k*k, out_h*out_w)
// matrix; out-of-bounds taps read zero.
Tensor im2col(const Tensor& x, int k, int stride) {
    int C = x.channels(), H = x.height(), W = x.width();
    int p = k / 2;
    int oh = conv_out_side(H, k, stride), ow = conv_out_side(W, k, stride);
    Tensor cols({C * k * k, oh * ow});
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                double* row = &cols.data[(static_cast<size_t>(c) * k * k + ky * k + kx) * oh * ow];
                for (int oy = 0; oy < oh; ++oy) {
                    int y = oy * stride + ky - p;
                    for (int ox = 0; ox < ow; ++ox) {
                        int xx = ox * stride + kx - p;
                        row[oy * ow + ox] = (y >= 0 && y < H && xx >= 0 && xx < W) ? x.at(c, y, xx) : 0.0;
                    }
                }
            }
    return cols;
}

// Scatter-adds column gradients back onto the input grid (adjoint of im2col).
Tensor col2im(const Tensor& dcols, const std::vector<int>& in_shape, int k, int stride) {
    int C = in_shape[0], H = in_shape[1], W = in_shape[2];
    int p = k / 2;
    int oh = conv_out_side(H, k, stride), ow = conv_out_side(W, k, stride);
    Tensor dx(in_shape);
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const double* row = &dcols.data[(static_cast<size_t>(c) * k * k + ky * k + kx) * oh * ow];
                for (int oy = 0; oy < oh; ++oy) {
                    int y = oy * stride + ky - p;
                    if (y < 0 || y >= H) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        int xx = ox * stride + kx - p;
                        if (xx >= 0 && xx < W) dx.at(c, y, xx) += row[oy * ow + ox];
                    }
                }
            }
    return dx;
}

}  // namespace

Conv2d::Conv2d(int in, int out, int k, int s)
    : in_ch(in),
      out_ch(out),
      ksize(k),
      stride(s),
      w({out, in * k * k}),
      b({out}),
      gw({out, in * k * k}),
      gb({out}) {
    if (k != 1 && k != 3) throw std::invalid_argument("Conv2d: kernel must be 1 or 3");
    if (s != 1 && s != 2) throw std::invalid_argument("Conv2d: stride must be 1 or 2");
}

void Conv2d::init(Rng& rng) {
    double std = std::sqrt(2.0 / (in_ch * ksize * ksize));
    for (double& v : w.data) v = std * rng.normal();
    fill(b, 0.0);
}

void Conv2d::zero_params() {
    fill(w, 0.0);
    fill(b, 0.0);
}

Tensor Conv2d::forward(const Tensor& x, Cache* cache) const {
    if (x.rank() != 3 || x.channels() != in_ch)
        throw std::invalid_argument("Conv2d: expected " + std::to_string(in_ch) + " channels, got " + x.shape_str());
    int oh = conv_out_side(x.height(), ksize, stride), ow = conv_out_side(x.width(), ksize, stride);
    Tensor cols = im2col(x, ksize, stride);
    Tensor y({out_ch, oh, ow});
    int ckk = in_ch * ksize * ksize, npix = oh * ow;
    MapCM wm(w.data.data(), out_ch, ckk);
    MapCM cm(cols.data.data(), ckk, npix);
    MapM ym(y.data.data(), out_ch, npix);
    ym.noalias() = wm * cm;
    for (int c = 0; c < out_ch; ++c) ym.row(c).array() += b.data[c];
    if (cache) {
        cache->in_shape = x.shape;
        cache->cols = std::move(cols);
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& dy, const Cache& cache) {
    int ckk = in_ch * ksize * ksize;
    int npix = dy.height() * dy.width();
    MapCM dym(dy.data.data(), out_ch, npix);
    MapCM cm(cache.cols.data.data(), ckk, npix);
    MapM gwm(gw.data.data(), out_ch, ckk);
    gwm.noalias() += dym * cm.transpose();
    // Fixed-order bias reduction: a vectorized sum would group partial sums by
    // runtime buffer alignment, making reruns differ in the last bit.
    for (int c = 0; c < out_ch; ++c) {
        const double* row = &dy.data[static_cast<size_t>(c) * npix];
        double s = 0.0;
        for (int i = 0; i < npix; ++i) s += row[i];
        gb.data[c] += s;
    }
    Tensor dcols({ckk, npix});
    MapM dcm(dcols.data.data(), ckk, npix);
    MapCM wm(w.data.data(), out_ch, ckk);
    dcm.noalias() = wm.transpose() * dym;
    return col2im(dcols, cache.in_shape, ksize, stride);
}

int norm_groups(int channels) {
    for (int g = 8; g > 1; --g)
        if (channels % g == 0) return g;
    return 1;
}

GroupNorm::GroupNorm(int ch)
    : channels(ch), groups(norm_groups(ch)), gamma({ch}, 1.0), beta({ch}), ggamma({ch}), gbeta({ch}) {}

Tensor GroupNorm::forward(const Tensor& x, Cache* cache) const {
    if (x.rank() != 3 || x.channels() != channels)
        throw std::invalid_argument("GroupNorm: expected " + std::to_string(channels) + " channels, got " +
                                    x.shape_str());
    int cpg = channels / groups;
    size_t plane = static_cast<size_t>(x.height()) * x.width();
    size_t m = cpg * plane;
    Tensor xhat(x.shape);
    std::vector<double> inv_std(groups);
    for (int g = 0; g < groups; ++g) {
        const double* in = &x.data[g * m];
        double mu = 0.0;
        for (size_t i = 0; i < m; ++i) mu += in[i];
        mu /= static_cast<double>(m);
        double var = 0.0;
        for (size_t i = 0; i < m; ++i) {
            double d = in[i] - mu;
            var += d * d;
        }
        var /= static_cast<double>(m);
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[g] = is;
        for (size_t i = 0; i < m; ++i) xhat.data[g * m + i] = (in[i] - mu) * is;
    }
    Tensor y(x.shape);
    for (int c = 0; c < channels; ++c)
        for (size_t i = 0; i < plane; ++i) y.data[c * plane + i] = gamma.data[c] * xhat.data[c * plane + i] + beta.data[c];
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

Tensor GroupNorm::backward(const Tensor& dy, const Cache& cache) {
    int cpg = channels / groups;
    size_t plane = static_cast<size_t>(dy.height()) * dy.width();
    size_t m = cpg * plane;
    Tensor dxhat(dy.shape);
    for (int c = 0; c < channels; ++c) {
        double sg = 0.0, sb = 0.0;
        for (size_t i = 0; i < plane; ++i) {
            double d = dy.data[c * plane + i];
            sg += d * cache.xhat.data[c * plane + i];
            sb += d;
            dxhat.data[c * plane + i] = d * gamma.data[c];
        }
        ggamma.data[c] += sg;
        gbeta.data[c] += sb;
    }
    Tensor dx(dy.shape);
    for (int g = 0; g < groups; ++g) {
        const double* dh = &dxhat.data[g * m];
        const double* xh = &cache.xhat.data[g * m];
        double sum_dh = 0.0, sum_dh_xh = 0.0;
        for (size_t i = 0; i < m; ++i) {
            sum_dh += dh[i];
            sum_dh_xh += dh[i] * xh[i];
        }
        double inv_m = 1.0 / static_cast<double>(m);
        for (size_t i = 0; i < m; ++i)
            dx.data[g * m + i] = cache.inv_std[g] * (dh[i] - inv_m * sum_dh - xh[i] * inv_m * sum_dh_xh);
    }
    return dx;
}

Linear::Linear(int in, int out) : in_dim(in), out_dim(out), w({out, in}), b({out}), gw({out, in}), gb({out}) {}

void Linear::init(Rng& rng) {
    double std = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (double& v : w.data) v = std * rng.normal();
    fill(b, 0.0);
}

Tensor Linear::forward(const Tensor& x, Cache* cache) const {
    if (x.rank() != 1 || x.shape[0] != in_dim)
        throw std::invalid_argument("Linear: expected (" + std::to_string(in_dim) + "), got " + x.shape_str());
    Tensor y({out_dim});
    for (int o = 0; o < out_dim; ++o) {
        double s = b.data[o];
        const double* wr = &w.data[static_cast<size_t>(o) * in_dim];
        for (int i = 0; i < in_dim; ++i) s += wr[i] * x.data[i];
        y.data[o] = s;
    }
    if (cache) cache->x = x;
    return y;
}

Tensor Linear::backward(const Tensor& dy, const Cache& cache) {
    Tensor dx({in_dim});
    for (int o = 0; o < out_dim; ++o) {
        double d = dy.data[o];
        gb.data[o] += d;
        double* gwr = &gw.data[static_cast<size_t>(o) * in_dim];
        const double* wr = &w.data[static_cast<size_t>(o) * in_dim];
        for (int i = 0; i < in_dim; ++i) {
            gwr[i] += d * cache.x.data[i];
            dx.data[i] += d * wr[i];
        }
    }
    return dx;
}

Tensor silu(const Tensor& x) {
    Tensor y(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) {
        double s = 1.0 / (1.0 + std::exp(-x.data[i]));
        y.data[i] = x.data[i] * s;
    }
    return y;
}

Tensor silu_backward(const Tensor& dy, const Tensor& x) {
    require_same_shape(dy, x, "silu_backward");
    Tensor dx(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) {
        double s = 1.0 / (1.0 + std::exp(-x.data[i]));
        dx.data[i] = dy.data[i] * s * (1.0 + x.data[i] * (1.0 - s));
    }
    return dx;
}

Tensor pixel_unshuffle(const Tensor& x, int r) {
    if (x.rank() != 3 || x.height() % r || x.width() % r)
        throw std::invalid_argument("pixel_unshuffle: " + x.shape_str() + " not divisible by " + std::to_string(r));
    int C = x.channels(), oh = x.height() / r, ow = x.width() / r;
    Tensor y({C * r * r, oh, ow});
    for (int c = 0; c < C; ++c)
        for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx)
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox)
                        y.at(c * r * r + dy * r + dx, oy, ox) = x.at(c, oy * r + dy, ox * r + dx);
    return y;
}

Tensor pixel_unshuffle_backward(const Tensor& dy, int r) {
    if (dy.rank() != 3 || dy.channels() % (r * r))
        throw std::invalid_argument("pixel_unshuffle_backward: bad shape " + dy.shape_str());
    int C = dy.channels() / (r * r), ih = dy.height() * r, iw = dy.width() * r;
    Tensor dx({C, ih, iw});
    for (int c = 0; c < C; ++c)
        for (int ry = 0; ry < r; ++ry)
            for (int rx = 0; rx < r; ++rx)
                for (int oy = 0; oy < dy.height(); ++oy)
                    for (int ox = 0; ox < dy.width(); ++ox)
                        dx.at(c, oy * r + ry, ox * r + rx) = dy.at(c * r * r + ry * r + rx, oy, ox);
    return dx;
}

Tensor nearest_upsample(const Tensor& x, int r) {
    if (x.rank() != 3) throw std::invalid_argument("nearest_upsample: expected rank-3, got " + x.shape_str());
    Tensor y({x.channels(), x.height() * r, x.width() * r});
    for (int c = 0; c < x.channels(); ++c)
        for (int yy = 0; yy < y.height(); ++yy)
            for (int xx = 0; xx < y.width(); ++xx) y.at(c, yy, xx) = x.at(c, yy / r, xx / r);
    return y;
}

Tensor nearest_upsample_backward(const Tensor& dy, int r) {
    if (dy.rank() != 3 || dy.height() % r || dy.width() % r)
        throw std::invalid_argument("nearest_upsample_backward: bad shape " + dy.shape_str());
    Tensor dx({dy.channels(), dy.height() / r, dy.width() / r});
    for (int c = 0; c < dy.channels(); ++c)
        for (int yy = 0; yy < dy.height(); ++yy)
            for (int xx = 0; xx < dy.width(); ++xx) dx.at(c, yy / r, xx / r) += dy.at(c, yy, xx);
    return dx;
}

Tensor sinusoidal_embedding(double v, int dim) {
    if (dim < 2 || dim % 2) throw std::invalid_argument("sinusoidal_embedding: dim must be even and >= 2");
    int half = dim / 2;
    Tensor e({dim});
    for (int i = 0; i < half; ++i) {
        double freq = half > 1 ? std::exp(-std::log(10000.0) * i / (half - 1)) : 1.0;
        e.data[i] = std::sin(v * freq);
        e.data[half + i] = std::cos(v * freq);
    }
    return e;
}

}  // namespace ctmsr
