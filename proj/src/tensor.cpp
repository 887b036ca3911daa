#include "ctmsr/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ctmsr {

Tensor::Tensor(std::vector<int> s, double fill_value) : shape(std::move(s)) {
    size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
        n *= static_cast<size_t>(d);
    }
    data.assign(n, fill_value);
}

Tensor Tensor::zeros_like(const Tensor& t) { return Tensor(t.shape, 0.0); }

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

void fill(Tensor& t, double v) {
    for (double& x : t.data) x = v;
}

void axpy(double a, const Tensor& x, Tensor& y) {
    require_same_shape(x, y, "axpy");
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += a * x.data[i];
}

void scale(Tensor& t, double a) {
    for (double& x : t.data) x *= a;
}

Tensor operator+(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "operator+");
    Tensor r = a;
    for (size_t i = 0; i < r.data.size(); ++i) r.data[i] += b.data[i];
    return r;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "operator-");
    Tensor r = a;
    for (size_t i = 0; i < r.data.size(); ++i) r.data[i] -= b.data[i];
    return r;
}

Tensor operator*(double a, const Tensor& t) {
    Tensor r = t;
    scale(r, a);
    return r;
}

double mean(const Tensor& t) {
    if (t.data.empty()) return 0.0;
    double s = 0.0;
    for (double v : t.data) s += v;
    return s / static_cast<double>(t.data.size());
}

double l1_norm(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data) s += std::fabs(v);
    return s;
}

double mse(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse");
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return s / static_cast<double>(a.data.size());
}

void clamp(Tensor& t, double lo, double hi) {
    for (double& v : t.data) v = v < lo ? lo : (v > hi ? hi : v);
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.height() != b.height() || a.width() != b.width())
        throw std::invalid_argument("concat_channels: incompatible shapes " + a.shape_str() + " vs " + b.shape_str());
    Tensor r({a.channels() + b.channels(), a.height(), a.width()});
    std::copy(a.data.begin(), a.data.end(), r.data.begin());
    std::copy(b.data.begin(), b.data.end(), r.data.begin() + a.data.size());
    return r;
}

Tensor channel_slice(const Tensor& t, int c0, int c1) {
    if (t.rank() != 3 || c0 < 0 || c1 > t.channels() || c0 >= c1)
        throw std::invalid_argument("channel_slice: bad range for " + t.shape_str());
    Tensor r({c1 - c0, t.height(), t.width()});
    size_t plane = static_cast<size_t>(t.height()) * t.width();
    std::copy(t.data.begin() + c0 * plane, t.data.begin() + c1 * plane, r.data.begin());
    return r;
}

Rng::Rng(uint64_t seed) : engine_(seed) {}

uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
    // 53-bit mantissa in [0, 1).
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    // Box-Muller without the cached second value; u1 in (0, 1].
    double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

long long Rng::uniform_int(long long lo, long long hi) {
    if (lo > hi) throw std::invalid_argument("uniform_int: empty range");
    uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<long long>(engine_() % range);
}

void Rng::fill_normal(Tensor& t) {
    for (double& v : t.data) v = normal();
}

std::string Rng::serialize() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

Rng Rng::deserialize(const std::string& s) {
    Rng r;
    std::istringstream is(s);
    is >> r.engine_;
    if (is.fail()) throw std::runtime_error("Rng::deserialize: malformed state");
    return r;
}

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace ctmsr
