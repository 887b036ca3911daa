#include "ctmsr/evalcli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include <CLI11.hpp>

#include "ctmsr/config.hpp"
#include "ctmsr/diffusion.hpp"
#include "ctmsr/imaging.hpp"
#include "ctmsr/losses.hpp"
#include "ctmsr/metrics.hpp"
#include "ctmsr/trainer.hpp"

namespace fs = std::filesystem;

namespace ctmsr {

namespace {

std::string g10(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

Tensor clamped(const Tensor& t) {
    Tensor c = t;
    clamp(c, -1.0, 1.0);
    return c;
}

EvalRow measure(const std::string& id, const Tensor& sr, const Tensor& baseline, const Tensor& hr) {
    const double eps = LossWeights{}.charbonnier_eps;
    EvalRow r;
    r.id = id;
    r.psnr_model = psnr(sr, hr);
    r.ssim_model = ssim(sr, hr);
    r.charbonnier_model = charbonnier(sr, hr, eps);
    r.proxy_model = perceptual_proxy(sr, hr, kPerceptualSeed);
    r.psnr_bicubic = psnr(baseline, hr);
    r.ssim_bicubic = ssim(baseline, hr);
    r.charbonnier_bicubic = charbonnier(baseline, hr, eps);
    r.proxy_bicubic = perceptual_proxy(baseline, hr, kPerceptualSeed);
    return r;
}

std::vector<fs::path> collect_inputs(const std::string& input_path) {
    std::vector<fs::path> inputs;
    fs::path p(input_path);
    if (fs::is_directory(p)) {
        for (const auto& e : fs::directory_iterator(p))
            if (e.is_regular_file() && e.path().extension() == ".png") inputs.push_back(e.path());
        std::sort(inputs.begin(), inputs.end());
        if (inputs.empty()) throw std::runtime_error("run_infer: no .png files in " + input_path);
    } else if (fs::is_regular_file(p)) {
        inputs.push_back(p);
    } else {
        throw std::runtime_error("run_infer: input not found: " + input_path);
    }
    return inputs;
}

// Parses a strictly numeric unsigned seed; anything else is an error so a
// typo'd environment variable never silently trains with seed 0.
uint64_t parse_seed(const std::string& text, const std::string& what) {
    size_t pos = 0;
    uint64_t v;
    try {
        v = std::stoull(text, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument(what + ": expected an unsigned integer seed, got '" + text + "'");
    }
    if (pos != text.size())
        throw std::invalid_argument(what + ": trailing characters in seed '" + text + "'");
    return v;
}

// Seed precedence: explicit --seed, then CTMSR_SEED, then the fallback
// (config seed for training commands, 0 for inference).
uint64_t resolve_seed(bool cli_given, uint64_t cli_seed, uint64_t fallback) {
    if (cli_given) return cli_seed;
    if (const char* env = std::getenv("CTMSR_SEED")) return parse_seed(env, "CTMSR_SEED");
    return fallback;
}

void progress_printer(const TrainState&, const IterStats& is) {
    if (is.k % 100 != 0) return;
    std::fprintf(stderr, "k=%lld stage=%s T=%d ct=%.5f dtm=%.5f total=%.5f %.1f ms/it\n", is.k,
                 is.stage == Stage::CT ? "ct" : "dtm", is.T_k, is.ct, is.dtm, is.total, is.wallclock_ms);
}

DatasetHandle open_dataset(const RunConfig& rc) {
    if (rc.data_dir.empty())
        throw std::invalid_argument("config: [paths] data is required for this command");
    return read_manifest((fs::path(rc.data_dir) / "manifest.txt").string());
}

int run_generate_data(const std::string& config_path, int n, int patch, const std::string& out_override,
                      bool seed_given, uint64_t cli_seed) {
    RunConfig rc = parse_run_config(config_path);
    uint64_t seed = resolve_seed(seed_given, cli_seed, rc.train.seed);
    std::string dir = out_override.empty() ? rc.data_dir : out_override;
    if (dir.empty())
        throw std::invalid_argument("generate-data: no output directory (pass --out or set [paths] data)");
    DatasetHandle h = generate_corpus(n, patch, seed, dir, rc.degradation);
    std::cout << "wrote " << h.entries.size() << " pairs and " << h.manifest_path << "\n";
    return 0;
}

int run_train_ct(const std::string& config_path, bool seed_given, uint64_t cli_seed) {
    RunConfig rc = parse_run_config(config_path);
    rc.train.seed = resolve_seed(seed_given, cli_seed, rc.train.seed);
    rc.train.on_iter = progress_printer;
    DatasetHandle data = open_dataset(rc);
    TrainState st = train_stage1(rc.train, data);
    std::cout << "stage-1 done at k=" << st.k;
    if (!rc.train.out_dir.empty()) std::cout << ", checkpoint " << rc.train.out_dir << "/ckpt_final.ckpt";
    std::cout << "\n";
    return 0;
}

int run_train_stage2(const std::string& config_path, const std::string& init_ckpt, bool sds,
                     bool seed_given, uint64_t cli_seed) {
    RunConfig rc = parse_run_config(config_path);
    rc.train.sds = sds;
    rc.train.on_iter = progress_printer;
    TrainState st = load_checkpoint(init_ckpt);
    if (seed_given || std::getenv("CTMSR_SEED") != nullptr) {
        // A fresh seed replaces the draw stream carried in the checkpoint so
        // repeated fine-tunes from one stage-1 artifact explore differently.
        rc.train.seed = resolve_seed(seed_given, cli_seed, rc.train.seed);
        st.rng = Rng(mix_seed(rc.train.seed, 2));
    }
    DatasetHandle data = open_dataset(rc);
    st = train_stage2(std::move(st), rc.train, data);
    std::cout << "stage-2 (" << (sds ? "sds" : "dtm") << ") done at k=" << st.k;
    if (!rc.train.out_dir.empty()) std::cout << ", checkpoint " << rc.train.out_dir << "/ckpt_final.ckpt";
    std::cout << "\n";
    return 0;
}

}  // namespace

InferStats run_infer(const std::string& checkpoint_path, const std::string& input_path,
                     const std::string& out_dir, const std::string& noise_mode, uint64_t seed) {
    if (noise_mode != "zero" && noise_mode != "gauss")
        throw std::invalid_argument("run_infer: noise mode must be zero or gauss, got " + noise_mode);
    TrainState state = load_checkpoint(checkpoint_path);
    ConsistencyModel& model = state.model;
    model.net.reset_eval_count();

    std::vector<fs::path> inputs = collect_inputs(input_path);
    fs::create_directories(out_dir);

    InferStats stats;
    for (size_t i = 0; i < inputs.size(); ++i) {
        Tensor lr = read_png(inputs[i].string());
        Tensor y0 = resize_bicubic(lr, lr.height() * kScaleFactor, lr.width() * kScaleFactor);
        clamp(y0, -1.0, 1.0);
        Tensor noise(y0.shape);
        if (noise_mode == "gauss") {
            Rng rng(mix_seed(seed, static_cast<uint64_t>(i)));
            rng.fill_normal(noise);
        }
        auto t0 = std::chrono::steady_clock::now();
        Tensor sr = one_step_sr(model, y0, noise, model.cfg);
        auto t1 = std::chrono::steady_clock::now();
        stats.model_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());

        std::string out_path = (fs::path(out_dir) / inputs[i].filename()).string();
        write_png(out_path, clamped(sr));
        stats.outputs.push_back(out_path);
    }

    stats.backbone_calls = model.net.eval_count();
    if (stats.backbone_calls != static_cast<long long>(inputs.size()))
        throw std::runtime_error("run_infer: one-step contract violated: " + std::to_string(stats.backbone_calls) +
                                 " denoiser calls for " + std::to_string(inputs.size()) + " images");

    std::ofstream timing((fs::path(out_dir) / "timing.csv").string());
    if (!timing) throw std::runtime_error("run_infer: cannot write timing.csv in " + out_dir);
    timing << "id,model_ms\n";
    double total = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        timing << inputs[i].stem().string() << "," << g10(stats.model_ms[i]) << "\n";
        total += stats.model_ms[i];
    }
    timing << "mean," << g10(total / static_cast<double>(inputs.size())) << "\n";
    return stats;
}

void write_eval_report(const EvalReport& report, const std::string& path) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_eval_report: cannot open " + path);
    out << "# checkpoint=" << report.checkpoint << " iter=" << report.iter << " seed=" << report.seed
        << " split=" << report.split << "\n";
    out << "id,psnr,ssim,charbonnier,proxy,psnr_bicubic,ssim_bicubic,charbonnier_bicubic,proxy_bicubic\n";
    auto emit = [&](const EvalRow& r) {
        out << r.id << "," << g10(r.psnr_model) << "," << g10(r.ssim_model) << ","
            << g10(r.charbonnier_model) << "," << g10(r.proxy_model) << "," << g10(r.psnr_bicubic) << ","
            << g10(r.ssim_bicubic) << "," << g10(r.charbonnier_bicubic) << "," << g10(r.proxy_bicubic) << "\n";
    };
    for (const EvalRow& r : report.rows) emit(r);
    emit(report.aggregate);
}

EvalReport run_eval(const std::string& checkpoint_path, const std::string& manifest_path,
                    const std::string& split, const std::string& report_path, uint64_t seed) {
    TrainState state = load_checkpoint(checkpoint_path);
    ConsistencyModel& model = state.model;
    model.net.reset_eval_count();

    DatasetHandle handle = read_manifest(manifest_path);
    std::vector<ManifestEntry> entries = handle.split_entries(split);
    if (entries.empty()) throw std::runtime_error("run_eval: split '" + split + "' is empty in " + manifest_path);
    std::vector<SRPair> pairs = load_split(handle, split);

    EvalReport report;
    report.checkpoint = checkpoint_path;
    report.iter = state.k;
    report.seed = seed;
    report.split = split;
    report.images = static_cast<long long>(pairs.size());

    EvalRow sum;
    for (size_t i = 0; i < pairs.size(); ++i) {
        const SRPair& pair = pairs[i];
        Tensor noise(pair.hr.shape);  // zero draw: deterministic evaluation
        Tensor sr = clamped(one_step_sr(model, pair.cond, noise, model.cfg));
        char id[16];
        std::snprintf(id, sizeof(id), "%05d", entries[i].id);
        EvalRow r = measure(id, sr, pair.cond, pair.hr);
        sum.psnr_model += r.psnr_model;
        sum.ssim_model += r.ssim_model;
        sum.charbonnier_model += r.charbonnier_model;
        sum.proxy_model += r.proxy_model;
        sum.psnr_bicubic += r.psnr_bicubic;
        sum.ssim_bicubic += r.ssim_bicubic;
        sum.charbonnier_bicubic += r.charbonnier_bicubic;
        sum.proxy_bicubic += r.proxy_bicubic;
        report.rows.push_back(std::move(r));
    }

    const double n = static_cast<double>(pairs.size());
    report.aggregate.id = "mean";
    report.aggregate.psnr_model = sum.psnr_model / n;
    report.aggregate.ssim_model = sum.ssim_model / n;
    report.aggregate.charbonnier_model = sum.charbonnier_model / n;
    report.aggregate.proxy_model = sum.proxy_model / n;
    report.aggregate.psnr_bicubic = sum.psnr_bicubic / n;
    report.aggregate.ssim_bicubic = sum.ssim_bicubic / n;
    report.aggregate.charbonnier_bicubic = sum.charbonnier_bicubic / n;
    report.aggregate.proxy_bicubic = sum.proxy_bicubic / n;

    report.backbone_calls = model.net.eval_count();
    if (report.backbone_calls != report.images)
        throw std::runtime_error("run_eval: one-step contract violated: " + std::to_string(report.backbone_calls) +
                                 " denoiser calls for " + std::to_string(report.images) + " images");

    if (!report_path.empty()) write_eval_report(report, report_path);
    return report;
}

int cli_dispatch(int argc, char** argv) {
    CLI::App app{"One-step diffusion super-resolution: data synthesis, two-stage training, inference, evaluation"};
    app.require_subcommand(1);

    std::string config_path, init_ckpt, checkpoint, input, out_dir, manifest;
    std::string split = "val", report = "eval_report.csv", noise_mode = "zero";
    uint64_t seed = 0;
    int n_images = 500, patch = 32;

    CLI::App* gen = app.add_subcommand("generate-data", "Synthesize an HR/LR PNG corpus with a manifest");
    gen->add_option("--config", config_path, "Run configuration file")->required();
    gen->add_option("--n", n_images, "Number of image pairs");
    gen->add_option("--patch-size", patch, "HR patch side in pixels");
    gen->add_option("--out", out_dir, "Output directory (default: the config data path)");
    gen->add_option("--seed", seed, "Corpus seed");

    CLI::App* tct = app.add_subcommand("train-ct", "Stage 1: consistency training from scratch");
    tct->add_option("--config", config_path, "Run configuration file")->required();
    tct->add_option("--seed", seed, "Seed override");

    CLI::App* tdtm = app.add_subcommand("train-dtm", "Stage 2: trajectory-matching fine-tune of a stage-1 checkpoint");
    tdtm->add_option("--config", config_path, "Run configuration file")->required();
    tdtm->add_option("--init", init_ckpt, "Stage-1 checkpoint to fine-tune")->required();
    tdtm->add_option("--seed", seed, "Seed override (reseeds the sampling stream)");

    CLI::App* tsds = app.add_subcommand("train-sds", "Stage 2 ablation: score-distillation fine-tune");
    tsds->add_option("--config", config_path, "Run configuration file")->required();
    tsds->add_option("--init", init_ckpt, "Stage-1 checkpoint to fine-tune")->required();
    tsds->add_option("--seed", seed, "Seed override (reseeds the sampling stream)");

    CLI::App* inf = app.add_subcommand("infer", "One-step x4 super-resolution of a PNG or a directory of PNGs");
    inf->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
    inf->add_option("--input", input, "LR image file or directory")->required();
    inf->add_option("--out", out_dir, "Output directory")->required();
    inf->add_option("--noise", noise_mode, "Terminal noise mode: zero or gauss");
    inf->add_option("--seed", seed, "Noise seed for gauss mode");

    CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split against the bicubic baseline");
    ev->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
    ev->add_option("--manifest", manifest, "Dataset manifest file")->required();
    ev->add_option("--split", split, "Dataset split (train or val)");
    ev->add_option("--report", report, "CSV report path");
    ev->add_option("--seed", seed, "Seed recorded in the report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            std::cout << app.help();
            return 0;
        }
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (*gen) return run_generate_data(config_path, n_images, patch, out_dir, gen->count("--seed") > 0, seed);
        if (*tct) return run_train_ct(config_path, tct->count("--seed") > 0, seed);
        if (*tdtm) return run_train_stage2(config_path, init_ckpt, false, tdtm->count("--seed") > 0, seed);
        if (*tsds) return run_train_stage2(config_path, init_ckpt, true, tsds->count("--seed") > 0, seed);
        if (*inf) {
            InferStats stats = run_infer(checkpoint, input, out_dir, noise_mode,
                                         resolve_seed(inf->count("--seed") > 0, seed, 0));
            double total = 0.0;
            for (double ms : stats.model_ms) total += ms;
            std::cout << "super-resolved " << stats.outputs.size() << " image(s), "
                      << g10(total / static_cast<double>(stats.model_ms.size())) << " ms/image (model only)\n";
            return 0;
        }
        if (*ev) {
            EvalReport rep = run_eval(checkpoint, manifest, split, report,
                                      resolve_seed(ev->count("--seed") > 0, seed, 0));
            std::cout << "split=" << rep.split << " images=" << rep.images << " psnr=" << g10(rep.aggregate.psnr_model)
                      << " dB (bicubic " << g10(rep.aggregate.psnr_bicubic) << " dB) ssim="
                      << g10(rep.aggregate.ssim_model) << " proxy=" << g10(rep.aggregate.proxy_model) << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace ctmsr
