#pragma once

#include <string>

#include "ctmsr/backbone.hpp"
#include "ctmsr/data.hpp"
#include "ctmsr/losses.hpp"
#include "ctmsr/schedules.hpp"
#include "ctmsr/trainer.hpp"

namespace ctmsr {

// The full experiment recipe, parsed from a sectioned key = value file.
// Parsing is strict: unknown sections or keys, malformed values and
// cross-field violations are all errors, so a config never silently drifts.
struct RunConfig {
    ScheduleConfig schedule;
    StepCurriculum curriculum;
    TrainConfig train;  // carries copies of schedule/curriculum/weights/backbone
    DegradationSpec degradation;
    LossWeights weights;
    BackboneSpec backbone;
    std::string data_dir;
    std::string checkpoint_dir;
    std::string report_dir;

    void validate() const;  // throws std::invalid_argument
};

RunConfig parse_run_config(const std::string& path);
RunConfig parse_run_config_text(const std::string& text, const std::string& origin);

}  // namespace ctmsr
