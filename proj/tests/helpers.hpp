#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "ctmsr/tensor.hpp"

namespace ctmsr::testing {

inline Tensor random_tensor(std::vector<int> shape, uint64_t seed, double scale = 1.0) {
    Tensor t(std::move(shape));
    Rng rng(seed);
    rng.fill_normal(t);
    if (scale != 1.0)
        for (double& v : t.data) v *= scale;
    return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data == b.data;
}

// rel error with an absolute floor, for finite-difference comparisons.
inline double rel_err(double got, double want, double floor = 1e-8) {
    return std::abs(got - want) / std::max({std::abs(got), std::abs(want), floor});
}

// Unique scratch directory removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 gen(std::random_device{}());
        for (int attempt = 0; attempt < 64; ++attempt) {
            auto p = std::filesystem::temp_directory_path() / (tag + "-" + std::to_string(gen()));
            std::error_code ec;
            if (std::filesystem::create_directory(p, ec)) {
                path = p;
                return;
            }
        }
        throw std::runtime_error("TempDir: could not create a scratch directory");
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string str() const { return path.string(); }
    std::string sub(const std::string& name) const { return (path / name).string(); }
};

}  // namespace ctmsr::testing
