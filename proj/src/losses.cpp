#include "ctmsr/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "ctmsr/diffusion.hpp"
#include "ctmsr/nn.hpp"

namespace ctmsr {

void LossWeights::validate() const {
    if (lambda1 < 0 || lambda2 < 0 || lambda_ct < 0 || lambda_dtm < 0)
        throw std::invalid_argument("LossWeights: weights must be >= 0");
    if (!(charbonnier_eps > 0)) throw std::invalid_argument("LossWeights: charbonnier_eps must be > 0");
    if (!(omega_floor_scale > 0)) throw std::invalid_argument("LossWeights: omega_floor_scale must be > 0");
}

double charbonnier(const Tensor& a, const Tensor& b, double eps) {
    require_same_shape(a, b, "charbonnier");
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        s += std::sqrt(d * d + eps * eps);
    }
    return s / static_cast<double>(a.data.size());
}

Tensor charbonnier_grad(const Tensor& a, const Tensor& b, double eps) {
    require_same_shape(a, b, "charbonnier_grad");
    Tensor g(a.shape);
    double inv_n = 1.0 / static_cast<double>(a.data.size());
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        g.data[i] = inv_n * d / std::sqrt(d * d + eps * eps);
    }
    return g;
}

namespace {

constexpr int kProxyFilters = 16;
constexpr int kProxyScales[] = {1, 2, 4};

Tensor avgpool(const Tensor& x, int s) {
    if (s == 1) return x;
    int oh = x.height() / s, ow = x.width() / s;
    Tensor y({x.channels(), oh, ow});
    double inv = 1.0 / (s * s);
    for (int c = 0; c < x.channels(); ++c)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                for (int dy = 0; dy < s; ++dy)
                    for (int dx = 0; dx < s; ++dx) acc += x.at(c, oy * s + dy, ox * s + dx);
                y.at(c, oy, ox) = acc * inv;
            }
    return y;
}

void avgpool_backward_into(const Tensor& dy, int s, Tensor& dx) {
    if (s == 1) {
        axpy(1.0, dy, dx);
        return;
    }
    double inv = 1.0 / (s * s);
    for (int c = 0; c < dy.channels(); ++c)
        for (int oy = 0; oy < dy.height(); ++oy)
            for (int ox = 0; ox < dy.width(); ++ox) {
                double g = dy.at(c, oy, ox) * inv;
                for (int py = 0; py < s; ++py)
                    for (int px = 0; px < s; ++px) dx.at(c, oy * s + py, ox * s + px) += g;
            }
}

// One fixed random filter bank per scale, drawn in a fixed order from the
// seed so the distance is a deterministic function of (images, seed).
std::vector<Conv2d> proxy_banks(int channels, uint64_t seed) {
    Rng rng(seed);
    double std = 1.0 / std::sqrt(9.0 * channels);
    std::vector<Conv2d> banks;
    for (size_t i = 0; i < std::size(kProxyScales); ++i) {
        Conv2d bank(channels, kProxyFilters, 3, 1);
        for (double& v : bank.w.data) v = std * rng.normal();
        banks.push_back(std::move(bank));
    }
    return banks;
}

}  // namespace

double perceptual_proxy(const Tensor& a, const Tensor& b, uint64_t seed) {
    require_same_shape(a, b, "perceptual_proxy");
    if (a.rank() != 3) throw std::invalid_argument("perceptual_proxy: expected rank-3 images");
    std::vector<Conv2d> banks = proxy_banks(a.channels(), seed);
    double total = 0.0;
    int used = 0;
    for (size_t i = 0; i < std::size(kProxyScales); ++i) {
        int s = kProxyScales[i];
        if (a.height() < s || a.width() < s) continue;
        Tensor fa = banks[i].forward(avgpool(a, s), nullptr);
        Tensor fb = banks[i].forward(avgpool(b, s), nullptr);
        total += mse(fa, fb);
        ++used;
    }
    return total / used;
}

Tensor perceptual_proxy_grad(const Tensor& a, const Tensor& b, uint64_t seed) {
    require_same_shape(a, b, "perceptual_proxy_grad");
    std::vector<Conv2d> banks = proxy_banks(a.channels(), seed);
    Tensor da(a.shape);
    int used = 0;
    for (size_t i = 0; i < std::size(kProxyScales); ++i) {
        int s = kProxyScales[i];
        if (a.height() < s || a.width() < s) continue;
        ++used;
    }
    for (size_t i = 0; i < std::size(kProxyScales); ++i) {
        int s = kProxyScales[i];
        if (a.height() < s || a.width() < s) continue;
        Conv2d::Cache cache;
        Tensor fa = banks[i].forward(avgpool(a, s), &cache);
        Tensor fb = banks[i].forward(avgpool(b, s), nullptr);
        // d/dfa of mse(fa, fb) is 2 (fa - fb) / n, averaged over scales.
        Tensor dfa(fa.shape);
        double c = 2.0 / (static_cast<double>(fa.size()) * used);
        for (size_t j = 0; j < fa.data.size(); ++j) dfa.data[j] = c * (fa.data[j] - fb.data[j]);
        avgpool_backward_into(banks[i].backward(dfa, cache), s, da);
    }
    return da;
}

double metric_d(const Tensor& a, const Tensor& b, const LossWeights& w) {
    return w.lambda1 * perceptual_proxy(a, b, kPerceptualSeed) + w.lambda2 * charbonnier(a, b, w.charbonnier_eps);
}

Tensor metric_d_grad(const Tensor& a, const Tensor& b, const LossWeights& w) {
    Tensor g = perceptual_proxy_grad(a, b, kPerceptualSeed);
    scale(g, w.lambda1);
    axpy(w.lambda2, charbonnier_grad(a, b, w.charbonnier_eps), g);
    return g;
}

double ct_loss(const ConsistencyModel& online, const SRPair& pair, int t, const Tensor& noise, const LossWeights& w) {
    auto [prev, cur] = adjacent_pair(pair, t, noise, online.cfg);
    Tensor target = consistency_output(online, prev.x_t, pair.cond, t - 1);
    Tensor est = consistency_output(online, cur.x_t, pair.cond, t);
    return metric_d(est, target, w);
}

double omega(const Tensor& x_hat0, const Tensor& x0, double floor) {
    require_same_shape(x_hat0, x0, "omega");
    double l1 = 0.0;
    for (size_t i = 0; i < x0.data.size(); ++i) l1 += std::fabs(x_hat0.data[i] - x0.data[i]);
    return static_cast<double>(x0.size()) / std::max(l1, floor);
}

namespace {

Tensor teacher_pair_grad(const DtmContext& ctx, const Tensor& x_hat0, const SRPair& pair, int t, const Tensor& noise,
                         bool real_is_ground_truth) {
    if (!ctx.teacher) throw std::invalid_argument("DtmContext: missing teacher");
    if (t < ctx.t_min || t > ctx.t_max)
        throw std::out_of_range("dtm step " + std::to_string(t) + " outside [" + std::to_string(ctx.t_min) + ", " +
                                std::to_string(ctx.t_max) + "]");
    require_same_shape(x_hat0, pair.hr, "dtm: x_hat0 vs hr");
    require_same_shape(x_hat0, noise, "dtm: x_hat0 vs noise");
    const ScheduleConfig& cfg = ctx.teacher->cfg;
    double a = residual_level(t, cfg), s = noise_level(t, cfg);

    // The generated image and the ground truth run through the same forward
    // process with one shared noise draw, then through the frozen teacher.
    Tensor x_t(pair.hr.shape), xhat_t(pair.hr.shape);
    for (size_t i = 0; i < x_t.data.size(); ++i) {
        x_t.data[i] = pair.hr.data[i] + a * (pair.cond.data[i] - pair.hr.data[i]) + s * noise.data[i];
        xhat_t.data[i] = x_hat0.data[i] + a * (pair.cond.data[i] - x_hat0.data[i]) + s * noise.data[i];
    }
    Tensor f_fake = consistency_output(*ctx.teacher, xhat_t, pair.cond, t);
    Tensor f_real = real_is_ground_truth ? pair.hr : consistency_output(*ctx.teacher, x_t, pair.cond, t);

    double wgt = omega(x_hat0, pair.hr, ctx.omega_floor_scale * static_cast<double>(x_hat0.size()));
    Tensor g(x_hat0.shape);
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] = wgt * (f_fake.data[i] - f_real.data[i]);
    return g;
}

}  // namespace

Tensor dtm_grad(const DtmContext& ctx, const Tensor& x_hat0, const SRPair& pair, int t, const Tensor& noise) {
    return teacher_pair_grad(ctx, x_hat0, pair, t, noise, false);
}

Tensor sds_grad(const DtmContext& ctx, const Tensor& x_hat0, const SRPair& pair, int t, const Tensor& noise) {
    return teacher_pair_grad(ctx, x_hat0, pair, t, noise, true);
}

double dtm_surrogate_loss(const Tensor& x_hat0, const Tensor& grad, const LossWeights&, const std::string& mode) {
    require_same_shape(x_hat0, grad, "dtm_surrogate_loss");
    Tensor target = x_hat0 - grad;
    if (mode == "l2") return 0.5 * mse(x_hat0, target);
    if (mode == "perceptual") return 0.5 * perceptual_proxy(x_hat0, target, kPerceptualSeed);
    throw std::invalid_argument("dtm_surrogate_loss: unknown mode '" + mode + "'");
}

Tensor dtm_surrogate_grad(const Tensor& x_hat0, const Tensor& grad, const LossWeights&, const std::string& mode) {
    require_same_shape(x_hat0, grad, "dtm_surrogate_grad");
    Tensor target = x_hat0 - grad;
    if (mode == "l2") {
        Tensor g(x_hat0.shape);
        double inv_n = 1.0 / static_cast<double>(x_hat0.size());
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] = (x_hat0.data[i] - target.data[i]) * inv_n;
        return g;
    }
    if (mode == "perceptual") {
        Tensor g = perceptual_proxy_grad(x_hat0, target, kPerceptualSeed);
        scale(g, 0.5);
        return g;
    }
    throw std::invalid_argument("dtm_surrogate_grad: unknown mode '" + mode + "'");
}

}  // namespace ctmsr
