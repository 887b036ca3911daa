#include "ctmsr/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace ctmsr {

namespace {

constexpr double kPsnrCap = 99.0;

double mse_to_psnr(double m) {
    if (m <= 0.0) return kPsnrCap;
    double db = 10.0 * std::log10(4.0 / m);
    return db > kPsnrCap ? kPsnrCap : db;
}

Tensor to_luma(const Tensor& img) {
    if (img.rank() != 3 || img.channels() != 3) throw std::invalid_argument("psnr_y: expected a 3-channel image");
    Tensor y({1, img.height(), img.width()});
    for (int r = 0; r < img.height(); ++r)
        for (int c = 0; c < img.width(); ++c)
            y.at(0, r, c) = 0.299 * img.at(0, r, c) + 0.587 * img.at(1, r, c) + 0.114 * img.at(2, r, c);
    return y;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "psnr");
    return mse_to_psnr(mse(a, b));
}

double psnr_y(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "psnr_y");
    return mse_to_psnr(mse(to_luma(a), to_luma(b)));
}

double ssim(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "ssim");
    constexpr int kWin = 11;
    constexpr double kSigma = 1.5;
    constexpr double kC1 = (0.01 * 2.0) * (0.01 * 2.0);
    constexpr double kC2 = (0.03 * 2.0) * (0.03 * 2.0);
    if (a.rank() != 3 || a.height() < kWin || a.width() < kWin)
        throw std::invalid_argument("ssim: image sides must be >= 11, got " + a.shape_str());

    // Normalized 11x11 Gaussian window.
    double w[kWin][kWin], wsum = 0.0;
    for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
            double dy = i - kWin / 2, dx = j - kWin / 2;
            w[i][j] = std::exp(-(dy * dy + dx * dx) / (2.0 * kSigma * kSigma));
            wsum += w[i][j];
        }
    for (auto& row : w)
        for (double& v : row) v /= wsum;

    double total = 0.0;
    long long count = 0;
    int oh = a.height() - kWin + 1, ow = a.width() - kWin + 1;
    for (int c = 0; c < a.channels(); ++c)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
                for (int i = 0; i < kWin; ++i)
                    for (int j = 0; j < kWin; ++j) {
                        double va = a.at(c, y + i, x + j), vb = b.at(c, y + i, x + j);
                        double wt = w[i][j];
                        ma += wt * va;
                        mb += wt * vb;
                        saa += wt * va * va;
                        sbb += wt * vb * vb;
                        sab += wt * va * vb;
                    }
                double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
                double s = ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) /
                           ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
                total += s;
                ++count;
            }
    return total / static_cast<double>(count);
}

}  // namespace ctmsr
