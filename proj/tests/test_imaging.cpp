#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "ctmsr/imaging.hpp"
#include "helpers.hpp"

using namespace ctmsr;
using namespace ctmsr::testing;

TEST_CASE("png round-trip stays within quantization error") {
    TempDir dir("imgio");
    Tensor img = random_tensor({3, 8, 9}, 1, 0.5);
    clamp(img, -1.0, 1.0);
    write_png(dir.sub("a.png"), img);
    Tensor back = read_png(dir.sub("a.png"));
    CHECK(back.shape == img.shape);
    CHECK(max_abs_diff(back, img) <= 0.5 / 127.5 + 1e-12);
}

TEST_CASE("png round-trip is exact on the 8-bit lattice") {
    TempDir dir("imgio");
    Tensor img({3, 5, 7});
    Rng rng(2);
    for (double& v : img.data) v = static_cast<double>(rng.uniform_int(0, 255)) / 127.5 - 1.0;
    write_png(dir.sub("q.png"), img);
    CHECK(max_abs_diff(read_png(dir.sub("q.png")), img) == 0.0);
}

TEST_CASE("png io errors") {
    TempDir dir("imgio");
    CHECK_THROWS_AS(read_png(dir.sub("missing.png")), std::runtime_error);
    CHECK_THROWS_AS(write_png(dir.sub("a.png"), Tensor({1, 4, 4})), std::invalid_argument);
    std::ofstream(dir.sub("junk.png")) << "definitely not a png";
    CHECK_THROWS_AS(read_png(dir.sub("junk.png")), std::runtime_error);
}

TEST_CASE("gaussian blur basics") {
    Tensor img = random_tensor({3, 12, 12}, 3, 0.4);
    SUBCASE("zero sigma is the identity") { CHECK(bit_equal(gaussian_blur(img, 0.0), img)); }
    SUBCASE("constant images are fixed points") {
        Tensor c({2, 6, 6}, 0.37);
        CHECK(max_abs_diff(gaussian_blur(c, 1.4), c) < 1e-12);
    }
    SUBCASE("an impulse spreads symmetrically and keeps its mass") {
        Tensor d({1, 11, 11});
        d.at(0, 5, 5) = 1.0;
        Tensor b = gaussian_blur(d, 1.0);
        CHECK(b.at(0, 5, 4) == doctest::Approx(b.at(0, 5, 6)).epsilon(1e-12));
        CHECK(b.at(0, 4, 5) == doctest::Approx(b.at(0, 5, 4)).epsilon(1e-12));
        CHECK(b.at(0, 5, 5) > b.at(0, 5, 4));
        double sum = 0.0;
        for (double v : b.data) sum += v;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));  // reflection keeps all mass inside
    }
    SUBCASE("negative sigma throws") { CHECK_THROWS_AS(gaussian_blur(img, -0.1), std::invalid_argument); }
}

TEST_CASE("box downsampling averages blocks") {
    Tensor img({1, 2, 4});
    img.data = {1.0, 3.0, 5.0, 7.0, 2.0, 4.0, 6.0, 8.0};
    Tensor d = downsample_box(img, 2);
    CHECK(d.shape == std::vector<int>{1, 1, 2});
    CHECK(d.data[0] == doctest::Approx(2.5));
    CHECK(d.data[1] == doctest::Approx(6.5));
    CHECK_THROWS_AS(downsample_box(img, 3), std::invalid_argument);
    CHECK(bit_equal(downsample_box(img, 1), img));
}

TEST_CASE("bicubic resize") {
    SUBCASE("same-size resize is the identity") {
        Tensor img = random_tensor({3, 7, 9}, 4, 0.5);
        CHECK(bit_equal(resize_bicubic(img, 7, 9), img));
    }
    SUBCASE("constants are preserved at any scale") {
        Tensor c({2, 6, 6}, -0.23);
        for (auto [h, w] : {std::pair{12, 12}, {3, 3}, {24, 6}, {5, 17}}) {
            Tensor r = resize_bicubic(c, h, w);
            CHECK(r.shape == std::vector<int>{2, h, w});
            CHECK(max_abs_diff(r, Tensor({2, h, w}, -0.23)) < 1e-12);
        }
    }
    SUBCASE("linear ramps survive upsampling away from borders") {
        Tensor img({1, 8, 8});
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) img.at(0, y, x) = 0.1 * x;
        Tensor up = resize_bicubic(img, 8, 16);
        // Interior output columns must lie on the same ramp in output coordinates.
        for (int x = 4; x < 12; ++x) {
            double src = (x + 0.5) * 0.5 - 0.5;
            CHECK(up.at(0, 4, x) == doctest::Approx(0.1 * src).epsilon(1e-12));
        }
    }
    SUBCASE("downsampling antialiases versus naive decimation") {
        // A 1-pixel-period checkerboard averages out instead of aliasing to a constant.
        Tensor img({1, 8, 8});
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) img.at(0, y, x) = ((x + y) % 2) ? 1.0 : -1.0;
        Tensor down = resize_bicubic(img, 4, 4);
        for (double v : down.data) CHECK(std::abs(v) < 0.51);
    }
    SUBCASE("bad output size throws") {
        Tensor img({1, 4, 4});
        CHECK_THROWS_AS(resize_bicubic(img, 0, 4), std::invalid_argument);
    }
}
