#include "ctmsr/imaging.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace ctmsr {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Symmetric border reflection: -1 -> 0, n -> n-1.
int reflect_index(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

double cubic_kernel(double x) {
    // Catmull-Rom, a = -0.5.
    constexpr double a = -0.5;
    x = std::fabs(x);
    if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
    return 0.0;
}

// Precomputes per-output-sample tap weights and source indices for one axis.
void resample_axis(int in_n, int out_n, std::vector<double>& weights, std::vector<int>& indices, int& taps) {
    double scale = static_cast<double>(in_n) / out_n;
    double support = scale > 1.0 ? 2.0 * scale : 2.0;
    taps = static_cast<int>(std::ceil(support)) * 2 + 1;
    weights.assign(static_cast<size_t>(out_n) * taps, 0.0);
    indices.assign(static_cast<size_t>(out_n) * taps, 0);
    for (int o = 0; o < out_n; ++o) {
        double center = (o + 0.5) * scale - 0.5;
        int start = static_cast<int>(std::floor(center - support + 0.5));
        double wsum = 0.0;
        for (int k = 0; k < taps; ++k) {
            int i = start + k;
            double arg = (center - i) / (scale > 1.0 ? scale : 1.0);
            double w = cubic_kernel(arg);
            weights[static_cast<size_t>(o) * taps + k] = w;
            indices[static_cast<size_t>(o) * taps + k] = reflect_index(i, in_n);
            wsum += w;
        }
        if (wsum != 0.0)
            for (int k = 0; k < taps; ++k) weights[static_cast<size_t>(o) * taps + k] /= wsum;
    }
}

}  // namespace

void write_png(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.channels() != 3)
        throw std::invalid_argument("write_png: expected a (3,H,W) tensor, got " + img.shape_str());
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("write_png: cannot open " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png: libpng error writing " + path);
    }
    png_init_io(png, fp.get());
    int h = img.height(), w = img.width();
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                double v = std::round((img.at(c, y, x) + 1.0) * 127.5);
                if (v < 0.0) v = 0.0;
                if (v > 255.0) v = 255.0;
                row[static_cast<size_t>(x) * 3 + c] = static_cast<png_byte>(v);
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
}

Tensor read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("read_png: cannot open " + path);

    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw std::runtime_error("read_png: not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: libpng error reading " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);

    // Normalize anything reasonable to 8-bit RGB.
    png_byte color = png_get_color_type(png, info);
    png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    std::vector<png_byte> row(static_cast<size_t>(w) * 3);
    Tensor img({3, static_cast<int>(h), static_cast<int>(w)});
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(c, static_cast<int>(y), static_cast<int>(x)) = row[static_cast<size_t>(x) * 3 + c] / 127.5 - 1.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

Tensor gaussian_blur(const Tensor& img, double sigma) {
    if (sigma < 0.0) throw std::invalid_argument("gaussian_blur: negative sigma");
    if (sigma == 0.0) return img;
    int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[i + radius];
    }
    for (double& v : k) v /= sum;

    int c = img.channels(), h = img.height(), w = img.width();
    Tensor tmp({c, h, w}), out({c, h, w});
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * img.at(ch, y, reflect_index(x + i, w));
                tmp.at(ch, y, x) = acc;
            }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp.at(ch, reflect_index(y + i, h), x);
                out.at(ch, y, x) = acc;
            }
    }
    return out;
}

Tensor downsample_box(const Tensor& img, int factor) {
    if (factor < 1) throw std::invalid_argument("downsample_box: factor must be >= 1");
    if (img.height() % factor || img.width() % factor)
        throw std::invalid_argument("downsample_box: " + img.shape_str() + " not divisible by " + std::to_string(factor));
    int c = img.channels(), oh = img.height() / factor, ow = img.width() / factor;
    Tensor out({c, oh, ow});
    double inv = 1.0 / (factor * factor);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx) acc += img.at(ch, y * factor + dy, x * factor + dx);
                out.at(ch, y, x) = acc * inv;
            }
    return out;
}

Tensor resize_bicubic(const Tensor& img, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_bicubic: bad output size");
    int c = img.channels(), in_h = img.height(), in_w = img.width();

    std::vector<double> wx, wy;
    std::vector<int> ix, iy;
    int taps_x = 0, taps_y = 0;
    resample_axis(in_w, out_w, wx, ix, taps_x);
    resample_axis(in_h, out_h, wy, iy, taps_y);

    Tensor tmp({c, in_h, out_w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < in_h; ++y)
            for (int x = 0; x < out_w; ++x) {
                double acc = 0.0;
                for (int k = 0; k < taps_x; ++k)
                    acc += wx[static_cast<size_t>(x) * taps_x + k] * img.at(ch, y, ix[static_cast<size_t>(x) * taps_x + k]);
                tmp.at(ch, y, x) = acc;
            }
    Tensor out({c, out_h, out_w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < out_w; ++x) {
                double acc = 0.0;
                for (int k = 0; k < taps_y; ++k)
                    acc += wy[static_cast<size_t>(y) * taps_y + k] * tmp.at(ch, iy[static_cast<size_t>(y) * taps_y + k], x);
                out.at(ch, y, x) = acc;
            }
    return out;
}

}  // namespace ctmsr
