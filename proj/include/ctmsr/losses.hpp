#pragma once

#include <cstdint>
#include <string>

#include "ctmsr/backbone.hpp"
#include "ctmsr/data.hpp"
#include "ctmsr/tensor.hpp"

namespace ctmsr {

// Filter-bank seed baked into metric_d and the surrogate loss so the
// perceptual distance is one fixed function, not a per-call choice.
inline constexpr uint64_t kPerceptualSeed = 0x0C75A11DULL;

struct LossWeights {
    double lambda1 = 0.5;             // perceptual weight inside the metric
    double lambda2 = 0.5;             // Charbonnier weight inside the metric
    double lambda_ct = 1.0;           // consistency term in the stage-2 total
    double lambda_dtm = 1.6;          // trajectory-matching term in the stage-2 total
    double charbonnier_eps = 1e-3;
    double omega_floor_scale = 1e-8;  // per-element scale; absolute floor is scale * element count

    void validate() const;  // throws std::invalid_argument
};

// Frozen teacher plus the timestep range for trajectory matching.
struct DtmContext {
    const ConsistencyModel* teacher = nullptr;
    int t_min = 1;
    int t_max = 1;
    double omega_floor_scale = 1e-8;
};

// Smooth L1: mean over elements of sqrt((a-b)^2 + eps^2). Floor value eps.
double charbonnier(const Tensor& a, const Tensor& b, double eps);
Tensor charbonnier_grad(const Tensor& a, const Tensor& b, double eps);  // d/da

// Mean squared distance between fixed random 3x3 filter-bank feature maps of
// the two images, averaged over average-pooling scales 1, 2 and 4. Zero at
// identity, symmetric, deterministic per seed.
double perceptual_proxy(const Tensor& a, const Tensor& b, uint64_t seed);
Tensor perceptual_proxy_grad(const Tensor& a, const Tensor& b, uint64_t seed);  // d/da

// d(a, b) = lambda1 * perceptual + lambda2 * Charbonnier.
double metric_d(const Tensor& a, const Tensor& b, const LossWeights& w);
Tensor metric_d_grad(const Tensor& a, const Tensor& b, const LossWeights& w);  // d/da

// Consistency loss at step t: d(f(x_t, y0, t), f(x_{t-1}, y0, t-1)) with both
// trajectory points sharing one noise draw. Value only; the trainer owns the
// backward pass, where only the t branch carries gradient.
double ct_loss(const ConsistencyModel& online, const SRPair& pair, int t, const Tensor& noise, const LossWeights& w);

// Per-image weight: element count / max(L1 distance, floor).
double omega(const Tensor& x_hat0, const Tensor& x0, double floor);

// Trajectory-matching gradient: noise the generated image and the ground
// truth with one shared draw, run both through the frozen teacher at step t,
// and weight the output difference by omega. Identical inputs give an exact
// zero array.
Tensor dtm_grad(const DtmContext& ctx, const Tensor& x_hat0, const SRPair& pair, int t, const Tensor& noise);

// Surrogate objective 0.5 * D(x_hat0, stopgrad(x_hat0 - grad)); D is the
// perceptual proxy in "perceptual" mode and mean squared error in "l2" mode,
// where the analytic gradient reduces to grad / element_count.
double dtm_surrogate_loss(const Tensor& x_hat0, const Tensor& grad, const LossWeights& w, const std::string& mode);
Tensor dtm_surrogate_grad(const Tensor& x_hat0, const Tensor& grad, const LossWeights& w, const std::string& mode);

// Score-distillation ablation: like dtm_grad but the real branch is the
// ground truth image itself, omega-weighted.
Tensor sds_grad(const DtmContext& ctx, const Tensor& x_hat0, const SRPair& pair, int t, const Tensor& noise);

}  // namespace ctmsr
