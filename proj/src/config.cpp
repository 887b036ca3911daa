#include "ctmsr/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ctmsr {

namespace {

[[noreturn]] void fail(const std::string& origin, int line, const std::string& msg) {
    throw std::invalid_argument(origin + ":" + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct Entry {
    std::string section, key, value;
    int line;
};

double to_real(const Entry& e, const std::string& origin) {
    size_t pos = 0;
    double v;
    try {
        v = std::stod(e.value, &pos);
    } catch (const std::exception&) {
        fail(origin, e.line, "expected a number for " + e.key + ", got '" + e.value + "'");
    }
    if (pos != e.value.size()) fail(origin, e.line, "trailing characters in number for " + e.key);
    return v;
}

long long to_int(const Entry& e, const std::string& origin) {
    size_t pos = 0;
    long long v;
    try {
        v = std::stoll(e.value, &pos);
    } catch (const std::exception&) {
        fail(origin, e.line, "expected an integer for " + e.key + ", got '" + e.value + "'");
    }
    if (pos != e.value.size()) fail(origin, e.line, "trailing characters in integer for " + e.key);
    return v;
}

uint64_t to_u64(const Entry& e, const std::string& origin) {
    size_t pos = 0;
    uint64_t v;
    try {
        v = std::stoull(e.value, &pos);
    } catch (const std::exception&) {
        fail(origin, e.line, "expected an unsigned integer for " + e.key + ", got '" + e.value + "'");
    }
    if (pos != e.value.size()) fail(origin, e.line, "trailing characters in integer for " + e.key);
    return v;
}

bool to_bool(const Entry& e, const std::string& origin) {
    if (e.value == "true" || e.value == "1") return true;
    if (e.value == "false" || e.value == "0") return false;
    fail(origin, e.line, "expected true/false for " + e.key + ", got '" + e.value + "'");
}

}  // namespace

void RunConfig::validate() const {
    schedule.validate();
    curriculum.validate();
    weights.validate();
    backbone.validate();
    degradation.validate();
    train.validate();
    if (curriculum.initial_steps > schedule.total_steps)
        throw std::invalid_argument("RunConfig: curriculum initial_steps exceeds schedule total_steps");
}

RunConfig parse_run_config_text(const std::string& text, const std::string& origin) {
    RunConfig rc;
    std::istringstream in(text);
    std::string raw, section;
    int lineno = 0;
    std::vector<Entry> entries;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = trim(raw);
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = trim(line.substr(0, hash));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail(origin, lineno, "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            static const char* known[] = {"schedule", "curriculum", "train", "weights",
                                          "backbone", "degradation", "paths"};
            bool ok = false;
            for (const char* k : known) ok = ok || section == k;
            if (!ok) fail(origin, lineno, "unknown section [" + section + "]");
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos) fail(origin, lineno, "expected key = value, got '" + line + "'");
        if (section.empty()) fail(origin, lineno, "key outside any section");
        entries.push_back({section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), lineno});
    }

    for (const Entry& e : entries) {
        const std::string& s = e.section;
        const std::string& k = e.key;
        if (s == "schedule") {
            if (k == "total_steps") rc.schedule.total_steps = static_cast<int>(to_int(e, origin));
            else if (k == "sigma_max") rc.schedule.sigma_max = to_real(e, origin);
            else if (k == "rho_noise") rc.schedule.rho_noise = to_real(e, origin);
            else if (k == "rho_residual") rc.schedule.rho_residual = to_real(e, origin);
            else if (k == "sigma_data") rc.schedule.sigma_data = to_real(e, origin);
            else fail(origin, e.line, "unknown key " + k + " in [schedule]");
        } else if (s == "curriculum") {
            if (k == "initial_steps") rc.curriculum.initial_steps = static_cast<int>(to_int(e, origin));
            else if (k == "final_steps") rc.curriculum.final_steps = static_cast<int>(to_int(e, origin));
            else if (k == "total_iters") rc.curriculum.total_iters = to_int(e, origin);
            else fail(origin, e.line, "unknown key " + k + " in [curriculum]");
        } else if (s == "train") {
            if (k == "stage1_iters") rc.train.stage1_iters = to_int(e, origin);
            else if (k == "stage2_iters") rc.train.stage2_iters = to_int(e, origin);
            else if (k == "batch_size") rc.train.batch_size = static_cast<int>(to_int(e, origin));
            else if (k == "learning_rate") rc.train.learning_rate = to_real(e, origin);
            else if (k == "teacher_refresh_every") rc.train.teacher_refresh_every = to_int(e, origin);
            else if (k == "seed") rc.train.seed = to_u64(e, origin);
            else if (k == "checkpoint_every") rc.train.checkpoint_every = to_int(e, origin);
            else if (k == "surrogate_mode") rc.train.surrogate_mode = e.value;
            else if (k == "early_stop") rc.train.early_stop = to_bool(e, origin);
            else fail(origin, e.line, "unknown key " + k + " in [train]");
        } else if (s == "weights") {
            if (k == "lambda1") rc.weights.lambda1 = to_real(e, origin);
            else if (k == "lambda2") rc.weights.lambda2 = to_real(e, origin);
            else if (k == "lambda_ct") rc.weights.lambda_ct = to_real(e, origin);
            else if (k == "lambda_dtm") rc.weights.lambda_dtm = to_real(e, origin);
            else if (k == "charbonnier_eps") rc.weights.charbonnier_eps = to_real(e, origin);
            else if (k == "omega_floor_scale") rc.weights.omega_floor_scale = to_real(e, origin);
            else fail(origin, e.line, "unknown key " + k + " in [weights]");
        } else if (s == "backbone") {
            if (k == "base_channels") rc.backbone.base_channels = static_cast<int>(to_int(e, origin));
            else if (k == "depth") rc.backbone.depth = static_cast<int>(to_int(e, origin));
            else if (k == "downsample_factor") rc.backbone.downsample_factor = static_cast<int>(to_int(e, origin));
            else if (k == "time_embed_dim") rc.backbone.time_embed_dim = static_cast<int>(to_int(e, origin));
            else fail(origin, e.line, "unknown key " + k + " in [backbone]");
        } else if (s == "degradation") {
            if (k == "blur_sigma") rc.degradation.blur_sigma = to_real(e, origin);
            else if (k == "kernel") rc.degradation.kernel = e.value;
            else if (k == "noise_sigma") rc.degradation.noise_sigma = to_real(e, origin);
            else fail(origin, e.line, "unknown key " + k + " in [degradation]");
        } else if (s == "paths") {
            if (k == "data") rc.data_dir = e.value;
            else if (k == "checkpoints") rc.checkpoint_dir = e.value;
            else if (k == "reports") rc.report_dir = e.value;
            else fail(origin, e.line, "unknown key " + k + " in [paths]");
        }
    }

    rc.train.schedule = rc.schedule;
    rc.train.curriculum = rc.curriculum;
    rc.train.weights = rc.weights;
    rc.train.backbone = rc.backbone;
    rc.train.out_dir = rc.checkpoint_dir;
    rc.validate();
    return rc;
}

RunConfig parse_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    std::ostringstream text;
    text << in.rdbuf();
    return parse_run_config_text(text.str(), path);
}

}  // namespace ctmsr
