#include "ctmsr/data.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ctmsr/imaging.hpp"

namespace fs = std::filesystem;

namespace ctmsr {

void DegradationSpec::validate() const {
    if (!(blur_sigma >= 0.0) || !std::isfinite(blur_sigma))
        throw std::invalid_argument("DegradationSpec: blur_sigma must be finite and >= 0");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
        throw std::invalid_argument("DegradationSpec: noise_sigma must be finite and >= 0");
    if (kernel != "box" && kernel != "bicubic")
        throw std::invalid_argument("DegradationSpec: kernel must be 'box' or 'bicubic', got '" + kernel + "'");
}

std::vector<ManifestEntry> DatasetHandle::split_entries(const std::string& split) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
        if (e.split == split) out.push_back(e);
    return out;
}

namespace {

// Zero-centered random field: blurred white noise rescaled to a target peak.
Tensor random_field(int n, Rng& rng, double peak) {
    Tensor noise({1, n, n});
    rng.fill_normal(noise);
    double sigma = 1.0 + 2.0 * rng.uniform();
    Tensor f = gaussian_blur(noise, sigma);
    double m = mean(f);
    double amax = 1e-12;
    for (double v : f.data) amax = std::max(amax, std::fabs(v - m));
    for (double& v : f.data) v = (v - m) / amax * peak;
    return f;
}

Tensor oriented_gradient(int n, Rng& rng, double amp) {
    double theta = rng.uniform() * 2.0 * M_PI;
    double cx = std::cos(theta), cy = std::sin(theta);
    Tensor f({1, n, n});
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double u = (2.0 * x - (n - 1)) / n;
            double v = (2.0 * y - (n - 1)) / n;
            f.at(0, y, x) = amp * (cx * u + cy * v);
        }
    return f;
}

Tensor piecewise_shapes(int n, Rng& rng) {
    Tensor f({1, n, n}, 0.4 * rng.uniform() - 0.2);
    int count = static_cast<int>(rng.uniform_int(3, 8));
    for (int s = 0; s < count; ++s) {
        double level = 1.8 * rng.uniform() - 0.9;
        bool disc = rng.uniform() < 0.5;
        double cx = rng.uniform() * n, cy = rng.uniform() * n;
        double rx = (0.08 + 0.25 * rng.uniform()) * n;
        double ry = (0.08 + 0.25 * rng.uniform()) * n;
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                bool inside;
                if (disc) {
                    double dx = (x - cx) / rx, dy = (y - cy) / ry;
                    inside = dx * dx + dy * dy <= 1.0;
                } else {
                    inside = std::fabs(x - cx) <= rx && std::fabs(y - cy) <= ry;
                }
                if (inside) f.at(0, y, x) = level;
            }
    }
    return f;
}

}  // namespace

Tensor synth_hr_patch(int patch_size, uint64_t seed) {
    if (patch_size < kScaleFactor || patch_size % kScaleFactor)
        throw std::invalid_argument("synth_hr_patch: patch_size must be a positive multiple of 4");
    Rng rng(seed);
    int mode = static_cast<int>(rng.uniform_int(0, 2));
    Tensor base;
    switch (mode) {
        case 0: base = random_field(patch_size, rng, 0.5 + 0.45 * rng.uniform()); break;
        case 1: {
            base = oriented_gradient(patch_size, rng, 0.4 + 0.5 * rng.uniform());
            Tensor texture = random_field(patch_size, rng, 0.25);
            axpy(1.0, texture, base);
            break;
        }
        default: base = piecewise_shapes(patch_size, rng); break;
    }
    // Shared luminance pattern plus a weak per-channel field keeps the
    // channels correlated the way photographs are.
    Tensor img({3, patch_size, patch_size});
    for (int c = 0; c < 3; ++c) {
        double gain = 0.85 + 0.3 * rng.uniform();
        Tensor chroma = random_field(patch_size, rng, 0.12);
        for (int y = 0; y < patch_size; ++y)
            for (int x = 0; x < patch_size; ++x) img.at(c, y, x) = gain * base.at(0, y, x) + chroma.at(0, y, x);
    }
    clamp(img, -1.0, 1.0);
    return img;
}

Tensor degrade(const Tensor& hr, const DegradationSpec& spec) {
    spec.validate();
    if (hr.rank() != 3) throw std::invalid_argument("degrade: expected rank-3 image");
    if (hr.height() % kScaleFactor || hr.width() % kScaleFactor)
        throw std::invalid_argument("degrade: HR side not divisible by " + std::to_string(kScaleFactor));

    Tensor blurred = gaussian_blur(hr, spec.blur_sigma);
    Tensor lr;
    if (spec.kernel == "box")
        lr = downsample_box(blurred, kScaleFactor);
    else
        lr = resize_bicubic(blurred, hr.height() / kScaleFactor, hr.width() / kScaleFactor);

    if (spec.noise_sigma > 0.0) {
        Rng rng(spec.seed);
        for (double& v : lr.data) v += spec.noise_sigma * rng.normal();
    }
    clamp(lr, -1.0, 1.0);
    return lr;
}

SRPair make_pair(const Tensor& hr, const DegradationSpec& spec) {
    Tensor lr = degrade(hr, spec);
    return assemble_pair(hr, lr);
}

SRPair assemble_pair(const Tensor& hr, const Tensor& lr) {
    SRPair p;
    p.hr = hr;
    p.lr = lr;
    p.cond = resize_bicubic(lr, hr.height(), hr.width());
    clamp(p.cond, -1.0, 1.0);
    return p;
}

std::string sha256_file_pair(const std::string& path_a, const std::string& path_b) {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("sha256: init failed");
    }
    for (const std::string& path : {path_a, path_b}) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            EVP_MD_CTX_free(ctx);
            throw std::runtime_error("sha256: cannot open " + path);
        }
        char buf[1 << 16];
        while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
            EVP_DigestUpdate(ctx, buf, static_cast<size_t>(in.gcount()));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) {
        static const char* hex = "0123456789abcdef";
        os << hex[digest[i] >> 4] << hex[digest[i] & 0xf];
    }
    return os.str();
}

DatasetHandle generate_corpus(int n, int patch_size, uint64_t seed, const std::string& out_dir,
                              const DegradationSpec& degradation) {
    if (n < 1) throw std::invalid_argument("generate_corpus: n must be >= 1");
    if (patch_size < kScaleFactor || patch_size % kScaleFactor)
        throw std::invalid_argument("generate_corpus: patch_size must be a positive multiple of 4");
    degradation.validate();

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir))
        throw std::runtime_error("generate_corpus: cannot create output directory " + out_dir);

    DatasetHandle handle;
    handle.manifest_path = (fs::path(out_dir) / "manifest.txt").string();
    handle.patch_size = patch_size;
    handle.generator_seed = seed;

    int n_train = std::max(1, (n * 9) / 10);
    if (n_train == n && n > 1) n_train = n - 1;

    for (int i = 0; i < n; ++i) {
        uint64_t item_seed = mix_seed(seed, static_cast<uint64_t>(i));
        Tensor hr = synth_hr_patch(patch_size, item_seed);
        DegradationSpec item_spec = degradation;
        item_spec.seed = mix_seed(item_seed, 0xD5C0DEULL);
        Tensor lr = degrade(hr, item_spec);

        char hr_name[64], lr_name[64];
        std::snprintf(hr_name, sizeof(hr_name), "hr_%05d.png", i);
        std::snprintf(lr_name, sizeof(lr_name), "lr_%05d.png", i);
        std::string hr_path = (fs::path(out_dir) / hr_name).string();
        std::string lr_path = (fs::path(out_dir) / lr_name).string();
        write_png(hr_path, hr);
        write_png(lr_path, lr);

        ManifestEntry e;
        e.id = i;
        e.hr_path = hr_name;
        e.lr_path = lr_name;
        e.split = i < n_train ? "train" : "val";
        e.seed = item_seed;
        e.sha256 = sha256_file_pair(hr_path, lr_path);
        handle.entries.push_back(std::move(e));
    }
    write_manifest(handle);
    return handle;
}

void write_manifest(const DatasetHandle& handle) {
    std::ofstream out(handle.manifest_path);
    if (!out) throw std::runtime_error("write_manifest: cannot open " + handle.manifest_path);
    out << "# ctmsr-manifest-v1 patch_size=" << handle.patch_size << " scale=" << handle.scale
        << " seed=" << handle.generator_seed << "\n";
    for (const auto& e : handle.entries)
        out << e.id << "," << e.hr_path << "," << e.lr_path << "," << e.split << "," << e.seed << "," << e.sha256
            << "\n";
}

DatasetHandle read_manifest(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("read_manifest: cannot open " + manifest_path);
    DatasetHandle handle;
    handle.manifest_path = manifest_path;

    std::string header;
    if (!std::getline(in, header) || header.rfind("# ctmsr-manifest-v1", 0) != 0)
        throw std::runtime_error("read_manifest: missing ctmsr-manifest-v1 header in " + manifest_path);
    {
        std::istringstream hs(header);
        std::string tok;
        while (hs >> tok) {
            auto eq = tok.find('=');
            if (eq == std::string::npos) continue;
            std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
            if (key == "patch_size") handle.patch_size = std::stoi(val);
            else if (key == "scale") handle.scale = std::stoi(val);
            else if (key == "seed") handle.generator_seed = std::stoull(val);
        }
    }

    std::string line;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        ManifestEntry e;
        std::string field;
        try {
            std::getline(ls, field, ',');
            e.id = std::stoi(field);
            std::getline(ls, e.hr_path, ',');
            std::getline(ls, e.lr_path, ',');
            std::getline(ls, e.split, ',');
            std::getline(ls, field, ',');
            e.seed = std::stoull(field);
            std::getline(ls, e.sha256, ',');
        } catch (const std::exception&) {
            throw std::runtime_error("read_manifest: malformed line " + std::to_string(lineno) + " in " + manifest_path);
        }
        // A failed stream means the row ran out of columns before sha256.
        if (!ls || e.sha256.empty() || e.hr_path.empty() || e.lr_path.empty() ||
            (e.split != "train" && e.split != "val"))
            throw std::runtime_error("read_manifest: malformed line " + std::to_string(lineno) + " in " + manifest_path);
        handle.entries.push_back(std::move(e));
    }
    return handle;
}

std::vector<SRPair> load_split(const DatasetHandle& handle, const std::string& split) {
    fs::path dir = fs::path(handle.manifest_path).parent_path();
    std::vector<SRPair> pairs;
    for (const auto& e : handle.entries) {
        if (e.split != split) continue;
        Tensor hr = read_png((dir / e.hr_path).string());
        Tensor lr = read_png((dir / e.lr_path).string());
        if (hr.height() != handle.patch_size || hr.width() != handle.patch_size)
            throw std::runtime_error("load_split: " + e.hr_path + " has shape " + hr.shape_str() +
                                     ", expected side " + std::to_string(handle.patch_size));
        if (lr.height() * handle.scale != hr.height() || lr.width() * handle.scale != hr.width())
            throw std::runtime_error("load_split: " + e.lr_path + " is not 1/" + std::to_string(handle.scale) +
                                     " of the HR shape");
        pairs.push_back(assemble_pair(hr, lr));
    }
    return pairs;
}

}  // namespace ctmsr
