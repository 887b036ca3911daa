#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "ctmsr/diffusion.hpp"
#include "ctmsr/losses.hpp"
#include "helpers.hpp"

using namespace ctmsr;
using namespace ctmsr::testing;

namespace {

BackboneSpec small_spec() {
    BackboneSpec s;
    s.base_channels = 8;
    s.depth = 1;
    s.time_embed_dim = 16;
    return s;
}

SRPair random_pair(uint64_t seed, int side = 8) {
    SRPair p;
    p.hr = random_tensor({3, side, side}, seed, 0.4);
    p.cond = random_tensor({3, side, side}, seed + 1000, 0.4);
    clamp(p.hr, -1.0, 1.0);
    clamp(p.cond, -1.0, 1.0);
    return p;
}

// Central-difference check of an analytic gradient d(loss)/d(a).
void check_grad(const std::function<double(const Tensor&)>& f, const Tensor& a, const Tensor& analytic,
                double tol, int probes = 40) {
    Tensor p = a;
    Rng pick(999);
    const double h = 1e-6;
    double worst = 0.0;
    for (int i = 0; i < probes; ++i) {
        size_t j = static_cast<size_t>(pick.uniform_int(0, a.size() - 1));
        p.data[j] = a.data[j] + h;
        double fp = f(p);
        p.data[j] = a.data[j] - h;
        double fm = f(p);
        p.data[j] = a.data[j];
        worst = std::max(worst, rel_err(analytic.data[j], (fp - fm) / (2.0 * h), 1e-7));
    }
    CHECK(worst < tol);
}

ConsistencyModel trained_like_model(uint64_t seed) {
    ConsistencyModel m = init_params(small_spec(), ScheduleConfig{}, seed);
    Rng r(seed + 77);
    for (auto& p : m.net.params())
        if (p.name == "out.conv.w" || p.name == "out.conv.b")
            for (double& v : p.value->data) v = 0.05 * r.normal();
    return m;
}

}  // namespace

TEST_CASE("charbonnier distance") {
    Tensor a = random_tensor({3, 4, 4}, 1);
    SUBCASE("identical inputs sit at the smoothing floor") {
        CHECK(charbonnier(a, a, 1e-3) == doctest::Approx(1e-3).epsilon(1e-13));
    }
    SUBCASE("single known difference") {
        Tensor b({1, 1, 2});
        b.data = {0.0, 0.0};
        Tensor c({1, 1, 2});
        c.data = {0.75, 0.0};
        double eps = 1e-3;
        double want = (std::sqrt(0.75 * 0.75 + eps * eps) + eps) / 2.0;
        CHECK(charbonnier(b, c, eps) == doctest::Approx(want).epsilon(1e-15));
    }
    SUBCASE("symmetry") {
        Tensor b = random_tensor({3, 4, 4}, 2);
        CHECK(charbonnier(a, b, 1e-3) == charbonnier(b, a, 1e-3));
    }
    SUBCASE("gradient") {
        Tensor b = random_tensor({3, 4, 4}, 3);
        check_grad([&](const Tensor& t) { return charbonnier(t, b, 1e-3); }, a, charbonnier_grad(a, b, 1e-3), 1e-5);
    }
}

TEST_CASE("perceptual proxy distance") {
    Tensor a = random_tensor({3, 8, 8}, 4, 0.5);
    Tensor b = random_tensor({3, 8, 8}, 5, 0.5);
    SUBCASE("zero at identity, positive and symmetric otherwise") {
        CHECK(perceptual_proxy(a, a, kPerceptualSeed) == 0.0);
        CHECK(perceptual_proxy(a, b, kPerceptualSeed) > 0.0);
        CHECK(perceptual_proxy(a, b, kPerceptualSeed) == perceptual_proxy(b, a, kPerceptualSeed));
    }
    SUBCASE("deterministic per seed, different across seeds") {
        CHECK(perceptual_proxy(a, b, 1) == perceptual_proxy(a, b, 1));
        CHECK(perceptual_proxy(a, b, 1) != perceptual_proxy(a, b, 2));
    }
    SUBCASE("small images drop the coarse scales gracefully") {
        Tensor s1 = random_tensor({3, 2, 2}, 6);
        Tensor s2 = random_tensor({3, 2, 2}, 7);
        CHECK(std::isfinite(perceptual_proxy(s1, s2, kPerceptualSeed)));  // the 4x scale is skipped
        Tensor t1 = random_tensor({3, 1, 1}, 8);
        Tensor t2 = random_tensor({3, 1, 1}, 9);
        CHECK(std::isfinite(perceptual_proxy(t1, t2, kPerceptualSeed)));  // only the identity scale remains
    }
    SUBCASE("gradient") {
        check_grad([&](const Tensor& t) { return perceptual_proxy(t, b, kPerceptualSeed); }, a,
                   perceptual_proxy_grad(a, b, kPerceptualSeed), 1e-4);
    }
    SUBCASE("invariant to the second argument's gradient") {
        // d/da only; swapping roles flips the sign of the feature difference.
        Tensor ga = perceptual_proxy_grad(a, b, kPerceptualSeed);
        CHECK(l1_norm(ga) > 0.0);
    }
}

TEST_CASE("combined metric is the weighted sum of its two parts") {
    Tensor a = random_tensor({3, 8, 8}, 10, 0.5);
    Tensor b = random_tensor({3, 8, 8}, 11, 0.5);
    LossWeights w;
    w.lambda1 = 0.3;
    w.lambda2 = 0.9;
    double want = 0.3 * perceptual_proxy(a, b, kPerceptualSeed) + 0.9 * charbonnier(a, b, w.charbonnier_eps);
    CHECK(metric_d(a, b, w) == doctest::Approx(want).epsilon(1e-15));
    check_grad([&](const Tensor& t) { return metric_d(t, b, w); }, a, metric_d_grad(a, b, w), 1e-4);
}

TEST_CASE("loss weight validation") {
    CHECK_NOTHROW(LossWeights{}.validate());
    LossWeights w;
    SUBCASE("negative weight") { w.lambda_dtm = -0.1; CHECK_THROWS_AS(w.validate(), std::invalid_argument); }
    SUBCASE("zero eps") { w.charbonnier_eps = 0.0; CHECK_THROWS_AS(w.validate(), std::invalid_argument); }
    SUBCASE("zero floor") { w.omega_floor_scale = 0.0; CHECK_THROWS_AS(w.validate(), std::invalid_argument); }
}

TEST_CASE("consistency loss compares adjacent wrapper outputs") {
    ConsistencyModel m = trained_like_model(12);
    SRPair pair = random_pair(13);
    Tensor noise = random_tensor({3, 8, 8}, 14);
    LossWeights w;
    for (int t = 1; t <= m.cfg.total_steps; ++t) {
        auto [prev, cur] = adjacent_pair(pair, t, noise, m.cfg);
        Tensor target = consistency_output(m, prev.x_t, pair.cond, t - 1);
        Tensor est = consistency_output(m, cur.x_t, pair.cond, t);
        CHECK(ct_loss(m, pair, t, noise, w) == doctest::Approx(metric_d(est, target, w)).epsilon(1e-15));
    }
    // At t = 1 the target branch is the exact identity on x_0.
    LatentState prev = sample_forward(pair, 0, noise, m.cfg);
    CHECK(bit_equal(prev.x_t, pair.hr));
}

TEST_CASE("per-image weighting") {
    Tensor x0 = random_tensor({3, 4, 4}, 15, 0.5);
    SUBCASE("reciprocal mean absolute difference") {
        Tensor xh = x0;
        for (double& v : xh.data) v += 0.25;
        // L1 = 0.25 * 48, so omega = 48 / 12 = 4.
        CHECK(omega(xh, x0, 1e-8 * 48.0) == doctest::Approx(4.0).epsilon(1e-12));
    }
    SUBCASE("identical inputs engage the floor and stay finite") {
        double w = omega(x0, x0, 1e-8 * 48.0);
        CHECK(std::isfinite(w));
        CHECK(w == doctest::Approx(1e8).epsilon(1e-12));
    }
    SUBCASE("brute-force agreement on random pairs") {
        for (uint64_t s = 0; s < 10; ++s) {
            Tensor a = random_tensor({3, 5, 5}, 100 + s);
            Tensor b = random_tensor({3, 5, 5}, 200 + s);
            double l1 = 0.0;
            for (size_t i = 0; i < a.data.size(); ++i) l1 += std::abs(a.data[i] - b.data[i]);
            CHECK(omega(a, b, 1e-6) == doctest::Approx(75.0 / l1).epsilon(1e-12));
        }
    }
}

TEST_CASE("trajectory-matching gradient") {
    ConsistencyModel teacher = trained_like_model(16);
    DtmContext ctx;
    ctx.teacher = &teacher;
    ctx.t_min = 1;
    ctx.t_max = teacher.cfg.total_steps;
    SRPair pair = random_pair(17);
    Tensor noise = random_tensor({3, 8, 8}, 18);
    Tensor x_hat0 = pair.hr;
    for (size_t i = 0; i < x_hat0.data.size(); ++i) x_hat0.data[i] += 0.1 * std::sin(static_cast<double>(i));

    SUBCASE("matches a step-by-step recomputation") {
        for (int t = 1; t <= ctx.t_max; ++t) {
            Tensor g = dtm_grad(ctx, x_hat0, pair, t, noise);
            double a = residual_level(t, teacher.cfg), s = noise_level(t, teacher.cfg);
            Tensor x_t(pair.hr.shape), xh_t(pair.hr.shape);
            for (size_t i = 0; i < x_t.data.size(); ++i) {
                x_t.data[i] = pair.hr.data[i] + a * (pair.cond.data[i] - pair.hr.data[i]) + s * noise.data[i];
                xh_t.data[i] = x_hat0.data[i] + a * (pair.cond.data[i] - x_hat0.data[i]) + s * noise.data[i];
            }
            Tensor f_fake = consistency_output(teacher, xh_t, pair.cond, t);
            Tensor f_real = consistency_output(teacher, x_t, pair.cond, t);
            double wgt = omega(x_hat0, pair.hr, ctx.omega_floor_scale * 192.0);
            for (size_t i = 0; i < g.data.size(); ++i)
                CHECK(g.data[i] == doctest::Approx(wgt * (f_fake.data[i] - f_real.data[i])).epsilon(1e-14));
        }
    }
    SUBCASE("a perfect generation has an exactly zero gradient") {
        Tensor g = dtm_grad(ctx, pair.hr, pair, 1, noise);
        for (double v : g.data) CHECK(v == 0.0);
    }
    SUBCASE("step bounds are enforced") {
        CHECK_THROWS_AS(dtm_grad(ctx, x_hat0, pair, 0, noise), std::out_of_range);
        CHECK_THROWS_AS(dtm_grad(ctx, x_hat0, pair, ctx.t_max + 1, noise), std::out_of_range);
        DtmContext empty;
        CHECK_THROWS_AS(dtm_grad(empty, x_hat0, pair, 1, noise), std::invalid_argument);
    }
    SUBCASE("teacher gradients are untouched") {
        teacher.net.zero_grads();
        dtm_grad(ctx, x_hat0, pair, 2, noise);
        for (auto& p : teacher.net.params())
            for (double v : p.grad->data) CHECK(v == 0.0);
    }
}

TEST_CASE("score-distillation gradient pulls toward the ground truth directly") {
    ConsistencyModel teacher = trained_like_model(19);
    DtmContext ctx;
    ctx.teacher = &teacher;
    ctx.t_max = teacher.cfg.total_steps;
    SRPair pair = random_pair(20);
    Tensor noise = random_tensor({3, 8, 8}, 21);
    Tensor x_hat0 = pair.cond;

    int t = 2;
    Tensor g = sds_grad(ctx, x_hat0, pair, t, noise);
    double a = residual_level(t, teacher.cfg), s = noise_level(t, teacher.cfg);
    Tensor xh_t(pair.hr.shape);
    for (size_t i = 0; i < xh_t.data.size(); ++i)
        xh_t.data[i] = x_hat0.data[i] + a * (pair.cond.data[i] - x_hat0.data[i]) + s * noise.data[i];
    Tensor f_fake = consistency_output(teacher, xh_t, pair.cond, t);
    double wgt = omega(x_hat0, pair.hr, ctx.omega_floor_scale * 192.0);
    for (size_t i = 0; i < g.data.size(); ++i)
        CHECK(g.data[i] == doctest::Approx(wgt * (f_fake.data[i] - pair.hr.data[i])).epsilon(1e-14));
}

TEST_CASE("surrogate objective carries exactly the prescribed gradient") {
    Tensor x_hat0 = random_tensor({3, 8, 8}, 22, 0.5);
    Tensor g = random_tensor({3, 8, 8}, 23, 0.01);
    LossWeights w;

    SUBCASE("l2 mode: analytic gradient is grad / element count") {
        Tensor sg = dtm_surrogate_grad(x_hat0, g, w, "l2");
        for (size_t i = 0; i < sg.data.size(); ++i)
            CHECK(sg.data[i] == doctest::Approx(g.data[i] / 192.0).epsilon(1e-13));
        // And it is the true derivative of the surrogate value with the
        // detached target held fixed.
        Tensor target = x_hat0 - g;
        check_grad([&](const Tensor& t) { return 0.5 * mse(t, target); }, x_hat0, sg, 1e-5);
        CHECK(dtm_surrogate_loss(x_hat0, g, w, "l2") == doctest::Approx(0.5 * mse(x_hat0, target)).epsilon(1e-15));
    }
    SUBCASE("perceptual mode derivative, detached target") {
        Tensor sg = dtm_surrogate_grad(x_hat0, g, w, "perceptual");
        Tensor target = x_hat0 - g;
        check_grad([&](const Tensor& t) { return 0.5 * perceptual_proxy(t, target, kPerceptualSeed); }, x_hat0, sg,
                   1e-4);
    }
    SUBCASE("zero gradient gives the floor value of the surrogate") {
        Tensor zero({3, 8, 8});
        CHECK(dtm_surrogate_loss(x_hat0, zero, w, "l2") == 0.0);
        CHECK(dtm_surrogate_loss(x_hat0, zero, w, "perceptual") == 0.0);
    }
    SUBCASE("unknown modes are rejected") {
        CHECK_THROWS_AS(dtm_surrogate_loss(x_hat0, g, w, "l1"), std::invalid_argument);
        CHECK_THROWS_AS(dtm_surrogate_grad(x_hat0, g, w, "huber"), std::invalid_argument);
    }
}
