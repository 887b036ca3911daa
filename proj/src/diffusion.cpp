#include "ctmsr/diffusion.hpp"

#include <stdexcept>

namespace ctmsr {

LatentState sample_forward(const SRPair& pair, int t, const Tensor& noise, const ScheduleConfig& cfg) {
    require_same_shape(pair.hr, pair.cond, "sample_forward: hr vs cond");
    require_same_shape(pair.hr, noise, "sample_forward: hr vs noise");
    double a = residual_level(t, cfg);
    double s = noise_level(t, cfg);
    LatentState st;
    st.t = t;
    st.noise = noise;
    if (t == 0) {
        st.x_t = pair.hr;
        return st;
    }
    st.x_t = Tensor(pair.hr.shape);
    for (size_t i = 0; i < st.x_t.data.size(); ++i)
        st.x_t.data[i] = pair.hr.data[i] + a * (pair.cond.data[i] - pair.hr.data[i]) + s * noise.data[i];
    return st;
}

std::pair<LatentState, LatentState> adjacent_pair(const SRPair& pair, int t, const Tensor& noise,
                                                  const ScheduleConfig& cfg) {
    if (t < 1 || t > cfg.total_steps)
        throw std::out_of_range("adjacent_pair: step " + std::to_string(t) + " outside [1, " +
                                std::to_string(cfg.total_steps) + "]");
    return {sample_forward(pair, t - 1, noise, cfg), sample_forward(pair, t, noise, cfg)};
}

Tensor consistency_output(const ConsistencyModel& model, const Tensor& x_t, const Tensor& y0, int t,
                          BackboneCache* cache) {
    require_same_shape(x_t, y0, "consistency_output: x_t vs y0");
    if (t == 0) return x_t;  // exact identity; skip(0)=1, out(0)=0
    SkipOutScales sc = skip_out_scales(t, model.cfg);
    double u = static_cast<double>(t) / model.cfg.total_steps;
    Tensor f = model.net.forward(concat_channels(x_t, y0), u, cache);
    Tensor out(x_t.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = sc.skip * x_t.data[i] + sc.out * f.data[i];
    return out;
}

Tensor one_step_sr(const ConsistencyModel& model, const Tensor& y0, const Tensor& noise, const ScheduleConfig& cfg) {
    require_same_shape(y0, noise, "one_step_sr: y0 vs noise");
    Tensor x_T(y0.shape);
    for (size_t i = 0; i < x_T.data.size(); ++i) x_T.data[i] = y0.data[i] + cfg.sigma_max * noise.data[i];
    // Evaluated at the terminal step, where every quantity depends only on
    // sigma_max and sigma_data, never on the discretization count.
    SkipOutScales sc = skip_out_scales(cfg.total_steps, cfg);
    Tensor f = model.net.forward(concat_channels(x_T, y0), 1.0, nullptr);
    Tensor out(y0.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = sc.skip * x_T.data[i] + sc.out * f.data[i];
    return out;
}

}  // namespace ctmsr
