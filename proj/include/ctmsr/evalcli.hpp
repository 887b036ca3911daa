#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctmsr/data.hpp"

namespace ctmsr {

// One evaluated image: model metrics against ground truth next to the same
// metrics for the bicubic-upscale baseline.
struct EvalRow {
    std::string id;
    double psnr_model = 0.0;
    double ssim_model = 0.0;
    double charbonnier_model = 0.0;
    double proxy_model = 0.0;
    double psnr_bicubic = 0.0;
    double ssim_bicubic = 0.0;
    double charbonnier_bicubic = 0.0;
    double proxy_bicubic = 0.0;
};

struct EvalReport {
    std::string checkpoint;
    long long iter = 0;
    uint64_t seed = 0;
    std::string split;
    std::vector<EvalRow> rows;
    EvalRow aggregate;             // arithmetic mean over rows, id "mean"
    long long images = 0;
    long long backbone_calls = 0;  // equals images: inference is one-step
};

struct InferStats {
    std::vector<std::string> outputs;
    std::vector<double> model_ms;  // per image; PNG decode/encode excluded
    long long backbone_calls = 0;
};

// Runs one-step SR over a single PNG or every PNG in a directory, writing x4
// outputs plus out_dir/timing.csv. noise_mode "zero" is fully deterministic;
// "gauss" draws per-image noise seeded by mix_seed(seed, image_index).
InferStats run_infer(const std::string& checkpoint_path, const std::string& input_path,
                     const std::string& out_dir, const std::string& noise_mode, uint64_t seed);

// Zero-noise evaluation of a checkpoint on one dataset split. Writes a CSV
// report (per-image rows, then the aggregate row) when report_path is
// non-empty and returns the same data structurally.
EvalReport run_eval(const std::string& checkpoint_path, const std::string& manifest_path,
                    const std::string& split, const std::string& report_path, uint64_t seed = 0);

void write_eval_report(const EvalReport& report, const std::string& path);

// Entry point behind main(): generate-data, train-ct, train-dtm, train-sds,
// infer, eval. Returns the process exit status (2 for usage errors).
int cli_dispatch(int argc, char** argv);

}  // namespace ctmsr
