#include "ctmsr/schedules.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ctmsr {

void ScheduleConfig::validate() const {
    if (total_steps < 2) throw std::invalid_argument("ScheduleConfig: total_steps must be >= 2");
    if (!(sigma_max > 0.0)) throw std::invalid_argument("ScheduleConfig: sigma_max must be > 0");
    if (!(rho_noise > 0.0)) throw std::invalid_argument("ScheduleConfig: rho_noise must be > 0");
    if (!(rho_residual > 0.0)) throw std::invalid_argument("ScheduleConfig: rho_residual must be > 0");
    if (!(sigma_data > 0.0)) throw std::invalid_argument("ScheduleConfig: sigma_data must be > 0");
}

ScheduleConfig ScheduleConfig::with_total_steps(int t) const {
    ScheduleConfig c = *this;
    c.total_steps = t;
    return c;
}

namespace {
void check_step(int t, const ScheduleConfig& cfg, const char* what) {
    if (t < 0 || t > cfg.total_steps)
        throw std::out_of_range(std::string(what) + ": step " + std::to_string(t) + " outside [0, " +
                                std::to_string(cfg.total_steps) + "]");
}
}  // namespace

double noise_level(int t, const ScheduleConfig& cfg) {
    check_step(t, cfg, "noise_level");
    if (t == 0) return 0.0;
    if (t == cfg.total_steps) return cfg.sigma_max;
    return cfg.sigma_max * std::pow(static_cast<double>(t) / cfg.total_steps, cfg.rho_noise);
}

double residual_level(int t, const ScheduleConfig& cfg) {
    check_step(t, cfg, "residual_level");
    if (t == 0) return 0.0;
    if (t == cfg.total_steps) return 1.0;
    return std::pow(static_cast<double>(t) / cfg.total_steps, cfg.rho_residual);
}

SkipOutScales skip_out_scales(int t, const ScheduleConfig& cfg) {
    check_step(t, cfg, "skip_out_scales");
    if (t == 0) return {1.0, 0.0};
    double s = noise_level(t, cfg);
    double sd2 = cfg.sigma_data * cfg.sigma_data;
    double denom = s * s + sd2;
    return {sd2 / denom, cfg.sigma_data * s / std::sqrt(denom)};
}

void StepCurriculum::validate() const {
    if (final_steps < 2) throw std::invalid_argument("StepCurriculum: final_steps must be >= 2");
    if (initial_steps < final_steps) throw std::invalid_argument("StepCurriculum: initial_steps must be >= final_steps");
    if (total_iters < initial_steps - final_steps + 1)
        throw std::invalid_argument("StepCurriculum: total_iters too small for the step range");
}

long long StepCurriculum::phase_length() const {
    return total_iters / (initial_steps - final_steps + 1);
}

int curriculum_steps(long long k, const StepCurriculum& cur) {
    if (k < 0) throw std::out_of_range("curriculum_steps: negative iteration");
    long long phase = cur.phase_length();
    long long dropped = k / phase;
    long long steps = cur.initial_steps - dropped;
    if (steps < cur.final_steps) steps = cur.final_steps;
    return static_cast<int>(steps);
}

}  // namespace ctmsr
