#include <doctest.h>

#include <cmath>

#include "msd/core.hpp"

using namespace msd;

TEST_CASE("LatentImage enforces its shape") {
    CHECK_THROWS_AS(LatentImage(1, 2, 2, std::vector<double>(3)), ContractViolation);
    CHECK_THROWS_AS(LatentImage(0, 2, 2), ContractViolation);
    LatentImage z(2, 3, 4, 1.5);
    CHECK(z.size() == 24);
    z.at(1, 2, 3) = 7.0;
    CHECK(z.data().back() == 7.0);
    CHECK(z.all_finite());
    z.at(0, 0, 0) = std::nan("");
    CHECK_FALSE(z.all_finite());
}

TEST_CASE("build_schedule small cases") {
    const auto one = build_schedule(1, 0.5, 0.5);
    REQUIRE(one.total_steps() == 1);
    CHECK(one.alpha_bar(0) == 1.0);
    CHECK(one.alpha_bar(1) == 0.5);

    const auto two = build_schedule(2, 0.1, 0.1);
    CHECK(two.alpha_bar(0) == 1.0);
    CHECK(two.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(two.alpha_bar(2) == doctest::Approx(0.81).epsilon(1e-15));
}

TEST_CASE("build_schedule T=50 matches a direct product and is strictly decreasing") {
    const int T = 50;
    const double lo = 1e-4;
    const double hi = 0.02;
    const auto schedule = build_schedule(T, lo, hi);
    double expected = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double beta = lo + (hi - lo) * static_cast<double>(t - 1) / static_cast<double>(T - 1);
        expected *= 1.0 - beta;
        CHECK(schedule.alpha_bar(t) == doctest::Approx(expected).epsilon(1e-14));
        CHECK(schedule.alpha_bar(t) < schedule.alpha_bar(t - 1));
    }
    CHECK(schedule.alpha_bar(T) > 0.0);
    CHECK(schedule.alpha_bar(T) < 1.0);
}

TEST_CASE("build_schedule rejects invalid bounds") {
    CHECK_THROWS_AS(build_schedule(0, 0.1, 0.2), ConfigError);
    CHECK_THROWS_AS(build_schedule(10, 0.0, 0.2), ConfigError);
    CHECK_THROWS_AS(build_schedule(10, 0.3, 0.2), ConfigError);
    CHECK_THROWS_AS(build_schedule(10, 0.1, 1.0), ConfigError);
    CHECK_THROWS_AS(NoiseSchedule({1.0, 0.5, 0.6}), ConfigError);
    CHECK_THROWS_AS(NoiseSchedule({0.9, 0.5}), ConfigError);
    CHECK_THROWS_AS(build_schedule(3, 0.1, 0.2).alpha_bar(4), ContractViolation);
}

TEST_CASE("decay_factor endpoints and midpoint") {
    CHECK(decay_factor(50, 50, DecayRule::scaled_cosine) == 1.0);
    CHECK(decay_factor(0, 50, DecayRule::scaled_cosine) == 0.0);
    CHECK(decay_factor(25, 50, DecayRule::scaled_cosine) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(decay_factor(17, 50, DecayRule::none) == 1.0);
    CHECK_THROWS_AS(decay_factor(51, 50, DecayRule::scaled_cosine), ContractViolation);
    CHECK_THROWS_AS(decay_factor(-1, 50, DecayRule::none), ContractViolation);
}

TEST_CASE("decay_factor is nonincreasing as t runs from T down to 0") {
    for (int T : {1, 7, 50, 1000}) {
        double prev = decay_factor(T, T, DecayRule::scaled_cosine);
        for (int t = T - 1; t >= 0; --t) {
            const double d = decay_factor(t, T, DecayRule::scaled_cosine);
            CHECK(d <= prev);
            CHECK(d >= 0.0);
            prev = d;
        }
    }
}

TEST_CASE("guidance cutoff counts") {
    GuidanceConfig g;
    auto guided_steps = [&g](int T) {
        int n = 0;
        for (int t = T; t >= 1; --t) n += g.active(t, T) ? 1 : 0;
        return n;
    };
    g.tau_fraction = 0.7;
    CHECK(guided_steps(50) == 15);
    CHECK(g.active(36, 50));
    CHECK_FALSE(g.active(35, 50));
    CHECK(guided_steps(10) == 3);
    g.tau_fraction = 1.0;
    CHECK(guided_steps(50) == 0);
    g.tau_fraction = 0.0;
    CHECK(guided_steps(50) == 50);

    CHECK(g.weight(50, 50) == g.omega);
    CHECK(g.weight(0, 50) == 0.0);
}

TEST_CASE("GuidanceConfig validation") {
    GuidanceConfig g;
    g.omega = -1.0;
    CHECK_THROWS_AS(g.validate(), ConfigError);
    g = {};
    g.tau_fraction = 1.5;
    CHECK_THROWS_AS(g.validate(), ConfigError);
    g = {};
    g.grad_steps = 0;
    CHECK_THROWS_AS(g.validate(), ConfigError);
    g = {};
    CHECK_NOTHROW(g.validate());
}

TEST_CASE("PyramidConfig level canvases and validation") {
    PyramidConfig p;
    p.levels = 3;
    p.finest = {128, 512};
    CHECK(p.canvas(3) == CanvasSize{128, 512});
    CHECK(p.canvas(2) == CanvasSize{64, 256});
    CHECK(p.canvas(1) == CanvasSize{32, 128});
    CHECK_NOTHROW(p.validate(32, 32));
    CHECK_THROWS_AS(p.validate(64, 64), ConfigError);

    p.finest = {66, 512};  // 66 -> 33, not divisible again
    CHECK_THROWS_AS(p.validate(16, 16), ConfigError);
}

TEST_CASE("init_noise is deterministic per seed") {
    PyramidConfig p;
    p.finest = {128, 512};
    const auto a = init_noise(p, 1, 42);
    const auto b = init_noise(p, 1, 42);
    CHECK(a == b);
    const auto c = init_noise(p, 1, 43);
    CHECK_FALSE(a == c);

    double mean = 0.0;
    double sq = 0.0;
    for (double v : a.data()) {
        mean += v;
        sq += v * v;
    }
    const auto n = static_cast<double>(a.size());
    mean /= n;
    CHECK(std::abs(mean) <= 5.0 / std::sqrt(n));
    CHECK(sq / n == doctest::Approx(1.0).epsilon(0.02));
}
