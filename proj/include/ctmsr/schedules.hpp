#pragma once

#include <cstdint>

namespace ctmsr {

// Closed-form noise / residual schedules on the integer grid t = 0..T.
//   sigma(t) = sigma_max * (t/T)^rho_noise
//   alpha(t) = (t/T)^rho_residual
// Both vanish at t=0; sigma(T)=sigma_max and alpha(T)=1.
struct ScheduleConfig {
    int total_steps = 4;       // T, the trajectory discretization count
    double sigma_max = 2.0;    // terminal noise level, image value range [-1,1]
    double rho_noise = 1.0;    // noise growth exponent
    double rho_residual = 1.0; // residual growth exponent
    double sigma_data = 0.5;   // signal scale for the skip/out scalings

    void validate() const;  // throws std::invalid_argument
    ScheduleConfig with_total_steps(int t) const;
};

double noise_level(int t, const ScheduleConfig& cfg);     // sigma(t)
double residual_level(int t, const ScheduleConfig& cfg);  // alpha(t)

// Blending coefficients for the consistency wrapper. skip(0)=1 and out(0)=0
// exactly, so the wrapper is the identity at t=0.
//   skip(t) = sigma_data^2 / (sigma(t)^2 + sigma_data^2)
//   out(t)  = sigma_data * sigma(t) / sqrt(sigma(t)^2 + sigma_data^2)
struct SkipOutScales {
    double skip;
    double out;
};
SkipOutScales skip_out_scales(int t, const ScheduleConfig& cfg);

// Linearly decreasing step curriculum: the discretization count starts at
// initial_steps and drops by one every phase_length() iterations until it
// saturates at final_steps.
struct StepCurriculum {
    int initial_steps = 4;         // s0
    int final_steps = 3;           // s1
    long long total_iters = 5000;  // K, stage-1 iteration budget

    void validate() const;
    long long phase_length() const;  // K' = floor(K / (s0 - s1 + 1))
};

int curriculum_steps(long long k, const StepCurriculum& cur);

}  // namespace ctmsr
