#include "ctmsr/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "ctmsr/diffusion.hpp"

namespace fs = std::filesystem;

namespace ctmsr {

void TrainConfig::validate() const {
    if (stage1_iters < 1 || stage2_iters < 1) throw std::invalid_argument("TrainConfig: iteration counts must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (!(learning_rate > 0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (teacher_refresh_every < 1) throw std::invalid_argument("TrainConfig: teacher_refresh_every must be >= 1");
    if (checkpoint_every < 1) throw std::invalid_argument("TrainConfig: checkpoint_every must be >= 1");
    if (surrogate_mode != "perceptual" && surrogate_mode != "l2")
        throw std::invalid_argument("TrainConfig: surrogate_mode must be 'perceptual' or 'l2'");
    curriculum.validate();
    weights.validate();
    schedule.validate();
    backbone.validate();
    if (curriculum.initial_steps > schedule.total_steps)
        throw std::invalid_argument("TrainConfig: curriculum initial_steps exceeds the schedule's total_steps");
}

namespace {

std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

const char* stage_name(Stage s, bool sds) { return s == Stage::CT ? "ct" : (sds ? "sds" : "dtm"); }

class LossLog {
public:
    explicit LossLog(const std::string& dir) {
        if (dir.empty()) return;
        fs::create_directories(dir);
        std::string path = dir + "/loss_log.csv";
        bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
        out_.open(path, std::ios::app);
        if (!out_) throw std::runtime_error("cannot open loss log " + path);
        if (fresh) out_ << "k,stage,ct_loss,dtm_loss,total,lr,T_k,wallclock_ms\n";
    }

    void row(long long k, const char* stage, double ct, double dtm, double total, double lr, int Tk, double ms) {
        if (!out_.is_open()) return;
        char msbuf[32];
        std::snprintf(msbuf, sizeof msbuf, "%.3f", ms);
        out_ << k << "," << stage << "," << g17(ct) << "," << g17(dtm) << "," << g17(total) << "," << g17(lr) << ","
             << Tk << "," << msbuf << "\n";
        out_.flush();
    }

private:
    std::ofstream out_;
};

// One training iteration over a freshly drawn batch. The consistency branch
// always runs; the trajectory-matching branch runs only in stage 2 with a
// positive weight, and draws nothing from the generator otherwise, so a
// zero-weight stage-2 run replays the stage-1 sequence exactly.
IterStats run_iteration(TrainState& state, const TrainConfig& cfg, const std::vector<SRPair>& pairs) {
    auto t0 = std::chrono::steady_clock::now();
    const LossWeights& w = cfg.weights;
    int Tk = curriculum_steps(state.k, cfg.curriculum);
    ScheduleConfig cfgk = cfg.schedule.with_total_steps(Tk);
    state.model.cfg = cfgk;
    if (state.teacher) state.teacher->cfg = cfgk;
    bool dtm_active = state.stage == Stage::DTM && w.lambda_dtm > 0.0;
    double ct_scale = (state.stage == Stage::DTM ? w.lambda_ct : 1.0) / cfg.batch_size;

    state.model.net.zero_grads();
    IterStats stats;
    stats.k = state.k;
    stats.stage = state.stage;
    stats.T_k = Tk;
    double ct_sum = 0.0, dtm_sum = 0.0;

    for (int b = 0; b < cfg.batch_size; ++b) {
        const SRPair& pair = pairs[state.rng.uniform_int(0, static_cast<long long>(pairs.size()) - 1)];

        int t = static_cast<int>(state.rng.uniform_int(1, Tk));
        stats.max_t = std::max(stats.max_t, t);
        Tensor eps(pair.hr.shape);
        state.rng.fill_normal(eps);
        auto [prev, cur] = adjacent_pair(pair, t, eps, cfgk);
        Tensor target = consistency_output(state.model, prev.x_t, pair.cond, t - 1);
        BackboneCache cache;
        Tensor est = consistency_output(state.model, cur.x_t, pair.cond, t, &cache);
        ct_sum += metric_d(est, target, w);
        Tensor dest = metric_d_grad(est, target, w);
        scale(dest, ct_scale * skip_out_scales(t, cfgk).out);
        state.model.net.backward(dest, cache);

        if (dtm_active) {
            int tp = static_cast<int>(state.rng.uniform_int(1, Tk));
            Tensor eps_gen(pair.hr.shape);
            state.rng.fill_normal(eps_gen);
            LatentState gen = sample_forward(pair, tp, eps_gen, cfgk);
            BackboneCache gen_cache;
            Tensor xhat0 = consistency_output(state.model, gen.x_t, pair.cond, tp, &gen_cache);

            DtmContext ctx{&*state.teacher, 1, Tk, w.omega_floor_scale};
            int tm = static_cast<int>(state.rng.uniform_int(ctx.t_min, ctx.t_max));
            Tensor eps_match(pair.hr.shape);
            state.rng.fill_normal(eps_match);
            Tensor g = cfg.sds ? sds_grad(ctx, xhat0, pair, tm, eps_match)
                               : dtm_grad(ctx, xhat0, pair, tm, eps_match);
            dtm_sum += dtm_surrogate_loss(xhat0, g, w, cfg.surrogate_mode);
            Tensor dxhat = dtm_surrogate_grad(xhat0, g, w, cfg.surrogate_mode);
            scale(dxhat, w.lambda_dtm / cfg.batch_size * skip_out_scales(tp, cfgk).out);
            state.model.net.backward(dxhat, gen_cache);
        }
    }

    stats.ct = ct_sum / cfg.batch_size;
    stats.dtm = dtm_sum / cfg.batch_size;
    stats.total = state.stage == Stage::DTM ? w.lambda_ct * stats.ct + w.lambda_dtm * stats.dtm : stats.ct;
    if (!std::isfinite(stats.total))
        throw std::runtime_error("non-finite loss (ct=" + g17(stats.ct) + ", dtm=" + g17(stats.dtm) + ")");

    optimizer_step(state, cfg.learning_rate);
    ++state.k;
    stats.wallclock_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return stats;
}

[[noreturn]] void abort_with_checkpoint(TrainState& state, const TrainConfig& cfg, const std::exception& e) {
    if (!cfg.out_dir.empty()) save_checkpoint(state, cfg.out_dir + "/ckpt_abort.ckpt");
    throw std::runtime_error("training aborted at iteration " + std::to_string(state.k) + ": " + e.what());
}

void maybe_checkpoint(TrainState& state, const TrainConfig& cfg, long long done) {
    if (!cfg.out_dir.empty() && done % cfg.checkpoint_every == 0)
        save_checkpoint(state, cfg.out_dir + "/ckpt_latest.ckpt");
}

// Plateau rule: compare the mean loss of the last 500 iterations with the 500
// before; stop below 0.5% relative improvement.
class PlateauDetector {
public:
    bool update(double loss) {
        hist_.push_back(loss);
        size_t n = hist_.size();
        if (n < 1000 || n % 500) return false;
        double prev = 0.0, last = 0.0;
        for (size_t i = n - 1000; i < n - 500; ++i) prev += hist_[i];
        for (size_t i = n - 500; i < n; ++i) last += hist_[i];
        return prev > 0.0 && (prev - last) / prev < 0.005;
    }

private:
    std::vector<double> hist_;
};

}  // namespace

TrainState init_train_state(const TrainConfig& cfg) {
    cfg.validate();
    TrainState state;
    state.model = init_params(cfg.backbone, cfg.schedule, mix_seed(cfg.seed, 1));
    state.rng = Rng(mix_seed(cfg.seed, 2));
    for (const auto& p : state.model.net.params())
        state.moments.push_back({Tensor(p.value->shape), Tensor(p.value->shape)});
    return state;
}

void train_ct(TrainState& state, const TrainConfig& cfg, const std::vector<SRPair>& pairs, long long iters) {
    if (pairs.empty()) throw std::invalid_argument("train_ct: empty dataset");
    LossLog log(cfg.out_dir);
    PlateauDetector plateau;
    for (long long i = 0; i < iters; ++i) {
        IterStats stats;
        try {
            stats = run_iteration(state, cfg, pairs);
        } catch (const std::exception& e) {
            abort_with_checkpoint(state, cfg, e);
        }
        log.row(stats.k, stage_name(stats.stage, cfg.sds), stats.ct, 0.0, stats.total, cfg.learning_rate, stats.T_k,
                stats.wallclock_ms);
        if (cfg.on_iter) cfg.on_iter(state, stats);
        maybe_checkpoint(state, cfg, i + 1);
        if (cfg.early_stop && plateau.update(stats.ct)) break;
    }
}

void train_dtm(TrainState& state, const TrainConfig& cfg, const std::vector<SRPair>& pairs, long long iters) {
    if (pairs.empty()) throw std::invalid_argument("train_dtm: empty dataset");
    if (state.stage == Stage::CT) {
        state.stage = Stage::DTM;
        state.stage2_start_k = state.k;
    }
    LossLog log(cfg.out_dir);
    for (long long i = 0; i < iters; ++i) {
        bool refresh = (state.k - state.stage2_start_k) % cfg.teacher_refresh_every == 0;
        if (refresh) state.teacher = snapshot(state.model);
        IterStats stats;
        try {
            stats = run_iteration(state, cfg, pairs);
        } catch (const std::exception& e) {
            abort_with_checkpoint(state, cfg, e);
        }
        stats.teacher_refreshed = refresh;
        log.row(stats.k, stage_name(stats.stage, cfg.sds), stats.ct, stats.dtm, stats.total, cfg.learning_rate,
                stats.T_k, stats.wallclock_ms);
        if (cfg.on_iter) cfg.on_iter(state, stats);
        maybe_checkpoint(state, cfg, i + 1);
    }
}

TrainState train_stage1(const TrainConfig& cfg, const DatasetHandle& data) {
    cfg.validate();
    std::vector<SRPair> pairs = load_split(data, "train");
    TrainState state = init_train_state(cfg);
    train_ct(state, cfg, pairs, cfg.stage1_iters);
    if (!cfg.out_dir.empty()) save_checkpoint(state, cfg.out_dir + "/ckpt_final.ckpt");
    return state;
}

TrainState train_stage2(TrainState state, const TrainConfig& cfg, const DatasetHandle& data) {
    cfg.validate();
    std::vector<SRPair> pairs = load_split(data, "train");
    train_dtm(state, cfg, pairs, cfg.stage2_iters);
    if (!cfg.out_dir.empty()) save_checkpoint(state, cfg.out_dir + "/ckpt_final.ckpt");
    return state;
}

void optimizer_step(TrainState& state, double lr) {
    auto params = state.model.net.params();
    if (state.moments.size() != params.size())
        throw std::logic_error("optimizer_step: moments misaligned with the parameter registry");
    for (const auto& p : params)
        if (!p.grad->all_finite())
            throw std::runtime_error("optimizer_step: non-finite gradient in parameter '" + p.name + "'");
    ++state.adam_steps;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.adam_steps));
    double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.adam_steps));
    for (size_t i = 0; i < params.size(); ++i) {
        const Tensor& g = *params[i].grad;
        Tensor& m = state.moments[i].m;
        Tensor& v = state.moments[i].v;
        Tensor& p = *params[i].value;
        for (size_t j = 0; j < p.data.size(); ++j) {
            m.data[j] = b1 * m.data[j] + (1.0 - b1) * g.data[j];
            v.data[j] = b2 * v.data[j] + (1.0 - b2) * g.data[j] * g.data[j];
            p.data[j] -= lr * (m.data[j] / bc1) / (std::sqrt(v.data[j] / bc2) + eps);
        }
    }
}

namespace {

constexpr char kCkptMagic[] = "ctmsr-ckpt-v1\n";

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

void put_string(std::ostream& out, const std::string& s) {
    put<uint32_t>(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
    uint32_t n = get<uint32_t>(in);
    if (n > (1u << 20)) throw std::runtime_error("checkpoint: implausible string length");
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return s;
}

void put_doubles(std::ostream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void get_doubles(std::istream& in, std::vector<double>& v) {
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write(kCkptMagic, sizeof kCkptMagic - 1);
    put<uint32_t>(out, state.stage == Stage::DTM ? 1u : 0u);
    put<int64_t>(out, state.k);
    put<int64_t>(out, state.adam_steps);
    put<int64_t>(out, state.stage2_start_k);
    const ScheduleConfig& sc = state.model.cfg;
    put<int32_t>(out, sc.total_steps);
    put<double>(out, sc.sigma_max);
    put<double>(out, sc.rho_noise);
    put<double>(out, sc.rho_residual);
    put<double>(out, sc.sigma_data);
    const BackboneSpec& bs = state.model.arch;
    put<int32_t>(out, bs.in_channels);
    put<int32_t>(out, bs.base_channels);
    put<int32_t>(out, bs.depth);
    put<int32_t>(out, bs.downsample_factor);
    put<int32_t>(out, bs.time_embed_dim);
    put_string(out, state.rng.serialize());

    auto params = state.model.net.params();
    put<uint32_t>(out, static_cast<uint32_t>(params.size()));
    for (const auto& p : params) {
        put_string(out, p.name);
        put<uint32_t>(out, static_cast<uint32_t>(p.value->shape.size()));
        for (int d : p.value->shape) put<int32_t>(out, d);
        put_doubles(out, p.value->data);
    }
    put<uint8_t>(out, state.moments.empty() ? 0 : 1);
    for (const auto& mo : state.moments) {
        put_doubles(out, mo.m.data);
        put_doubles(out, mo.v.data);
    }
    put<uint8_t>(out, state.teacher ? 1 : 0);
    if (state.teacher)
        for (const auto& p : state.teacher->net.params()) put_doubles(out, p.value->data);
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

TrainState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[sizeof kCkptMagic - 1];
    in.read(magic, sizeof magic);
    if (!in || std::string(magic, sizeof magic) != kCkptMagic)
        throw std::runtime_error("load_checkpoint: version mismatch, expected header ctmsr-ckpt-v1");

    TrainState state;
    state.stage = get<uint32_t>(in) == 1 ? Stage::DTM : Stage::CT;
    state.k = get<int64_t>(in);
    state.adam_steps = get<int64_t>(in);
    state.stage2_start_k = get<int64_t>(in);
    ScheduleConfig sc;
    sc.total_steps = get<int32_t>(in);
    sc.sigma_max = get<double>(in);
    sc.rho_noise = get<double>(in);
    sc.rho_residual = get<double>(in);
    sc.sigma_data = get<double>(in);
    BackboneSpec bs;
    bs.in_channels = get<int32_t>(in);
    bs.base_channels = get<int32_t>(in);
    bs.depth = get<int32_t>(in);
    bs.downsample_factor = get<int32_t>(in);
    bs.time_embed_dim = get<int32_t>(in);
    state.rng = Rng::deserialize(get_string(in));

    state.model = init_params(bs, sc, 0);
    auto params = state.model.net.params();
    uint32_t n = get<uint32_t>(in);
    if (n != params.size()) throw std::runtime_error("load_checkpoint: parameter count mismatch");
    for (auto& p : params) {
        std::string name = get_string(in);
        if (name != p.name) throw std::runtime_error("load_checkpoint: parameter order mismatch at " + name);
        uint32_t rank = get<uint32_t>(in);
        std::vector<int> shape(rank);
        for (auto& d : shape) d = get<int32_t>(in);
        if (shape != p.value->shape) throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
        get_doubles(in, p.value->data);
    }
    if (get<uint8_t>(in)) {
        for (const auto& p : params) {
            AdamMoments mo{Tensor(p.value->shape), Tensor(p.value->shape)};
            get_doubles(in, mo.m.data);
            get_doubles(in, mo.v.data);
            state.moments.push_back(std::move(mo));
        }
    }
    if (get<uint8_t>(in)) {
        state.teacher = snapshot(state.model);
        for (auto& p : state.teacher->net.params()) get_doubles(in, p.value->data);
    }
    return state;
}

}  // namespace ctmsr
