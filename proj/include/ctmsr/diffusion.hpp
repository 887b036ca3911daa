#pragma once

#include "ctmsr/backbone.hpp"
#include "ctmsr/data.hpp"
#include "ctmsr/schedules.hpp"
#include "ctmsr/tensor.hpp"

namespace ctmsr {

// One point on the noising trajectory, with the Gaussian draw retained so
// adjacent points can share it.
struct LatentState {
    Tensor x_t;
    int t = 0;
    Tensor noise;
};

// x_t = x0 + alpha(t) * (y0 - x0) + sigma(t) * noise. The mean drifts from
// the HR image toward the conditioner while the noise level grows, so the
// terminal state is the noisy conditioner itself.
LatentState sample_forward(const SRPair& pair, int t, const Tensor& noise, const ScheduleConfig& cfg);

// The states at t-1 and t built from one shared noise draw; requires t >= 1.
std::pair<LatentState, LatentState> adjacent_pair(const SRPair& pair, int t, const Tensor& noise,
                                                  const ScheduleConfig& cfg);

// f(x_t, y0, t) = skip(t) * x_t + out(t) * F(x_t, y0, t). At t = 0 this is
// the identity on x_t and the denoiser is not evaluated.
Tensor consistency_output(const ConsistencyModel& model, const Tensor& x_t, const Tensor& y0, int t,
                          BackboneCache* cache = nullptr);

// Single-evaluation super-resolution: x_T = y0 + sigma_max * noise, then
// f(x_T, y0, T). Returns the raw model output; callers clamp for file output.
Tensor one_step_sr(const ConsistencyModel& model, const Tensor& y0, const Tensor& noise, const ScheduleConfig& cfg);

}  // namespace ctmsr
