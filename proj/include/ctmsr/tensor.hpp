#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace ctmsr {

// Dense row-major tensor of doubles. Images are rank-3 (C, H, W); network
// parameters use whatever rank the layer needs.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, double fill = 0.0);

    static Tensor zeros_like(const Tensor& t);

    int rank() const { return static_cast<int>(shape.size()); }
    long long size() const { return static_cast<long long>(data.size()); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    // Rank-3 accessors.
    int channels() const { return shape[0]; }
    int height() const { return shape[1]; }
    int width() const { return shape[2]; }
    double& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x]; }
    double at(int c, int y, int x) const { return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x]; }

    bool all_finite() const;
    std::string shape_str() const;
};

// Throws std::invalid_argument when the two shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

// In-place elementwise helpers.
void fill(Tensor& t, double v);
void axpy(double a, const Tensor& x, Tensor& y);  // y += a*x
void scale(Tensor& t, double a);
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double a, const Tensor& t);

double mean(const Tensor& t);
double l1_norm(const Tensor& t);
double mse(const Tensor& a, const Tensor& b);
void clamp(Tensor& t, double lo, double hi);

Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor channel_slice(const Tensor& t, int c0, int c1);  // channels [c0, c1)

// Deterministic generator used everywhere randomness is needed. Gaussians come
// from a non-caching Box-Muller transform so the state is exactly the mt19937_64
// engine and serialization round-trips without hidden spare values.
class Rng {
public:
    explicit Rng(uint64_t seed = 0);

    uint64_t next_u64();
    double uniform();                               // [0, 1)
    double normal();                                // N(0, 1)
    long long uniform_int(long long lo, long long hi);  // inclusive bounds
    void fill_normal(Tensor& t);

    std::string serialize() const;
    static Rng deserialize(const std::string& s);

private:
    std::mt19937_64 engine_;
};

// SplitMix64; used to derive per-item seeds from a corpus seed.
uint64_t mix_seed(uint64_t seed, uint64_t stream);

}  // namespace ctmsr
