#include <doctest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "msd/denoiser.hpp"
#include "msd/tiling.hpp"
#include "test_support.hpp"

using namespace msd;
using msd::testing::random_image;

namespace {

Eigen::VectorXd flat(const LatentImage& z) {
    return Eigen::Map<const Eigen::VectorXd>(z.data().data(), static_cast<Eigen::Index>(z.size()));
}

// Posterior mean by brute-force Gaussian algebra on dense matrices: the joint of (x0, x_t)
// per component, then Bayes over components with explicit log-densities.
Eigen::VectorXd dense_posterior_mean(const LatentImage& x, double ab, const GmmPrior& prior,
                                     std::vector<double>* resp_out = nullptr) {
    const auto d = static_cast<Eigen::Index>(x.size());
    const Eigen::VectorXd xv = flat(x);
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
    std::vector<double> logp;
    std::vector<Eigen::VectorXd> means;
    for (std::size_t k = 0; k < prior.size(); ++k) {
        const Eigen::VectorXd mu = flat(prior.means[k]);
        const Eigen::MatrixXd prior_cov = prior.variances[k] * I;
        const Eigen::MatrixXd noise_cov = (1.0 - ab) * I;
        // marginal of x_t
        const Eigen::MatrixXd cov = ab * prior_cov + noise_cov;
        const Eigen::VectorXd r = xv - std::sqrt(ab) * mu;
        const Eigen::LLT<Eigen::MatrixXd> llt(cov);
        const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
        logp.push_back(std::log(prior.weights[k]) - 0.5 * logdet - 0.5 * r.dot(llt.solve(r)) -
                       0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi));
        // precision form of the conditional mean
        const Eigen::MatrixXd precision = prior_cov.inverse() + ab * noise_cov.inverse();
        means.push_back(precision.ldlt().solve(prior_cov.inverse() * mu + std::sqrt(ab) * noise_cov.inverse() * xv));
    }
    const double top = *std::max_element(logp.begin(), logp.end());
    double z = 0.0;
    for (double& l : logp) z += (l = std::exp(l - top));
    Eigen::VectorXd m = Eigen::VectorXd::Zero(d);
    for (std::size_t k = 0; k < means.size(); ++k) m += (logp[k] / z) * means[k];
    if (resp_out) {
        resp_out->clear();
        for (double l : logp) resp_out->push_back(l / z);
    }
    return m;
}

GmmPrior two_component_prior() {
    GmmPrior p;
    p.means = {LatentImage(1, 2, 2, std::vector<double>{1.0, -0.5, 0.25, 2.0}),
               LatentImage(1, 2, 2, std::vector<double>{-1.0, 0.5, 0.0, -1.5})};
    p.variances = {0.2, 0.05};
    p.weights = {0.3, 0.7};
    return p;
}

}  // namespace

TEST_CASE("single component with vanishing variance recovers the injected noise") {
    std::mt19937_64 rng(1);
    GmmPrior prior;
    prior.means = {random_image(rng, 1, 3, 3)};
    prior.variances = {1e-12};
    prior.weights = {1.0};
    const auto noise = random_image(rng, 1, 3, 3);
    for (double ab : {0.9, 0.5, 0.01}) {
        LatentImage x = prior.means[0];
        x.scale(std::sqrt(ab));
        x.axpy(std::sqrt(1.0 - ab), noise);
        CHECK(max_abs_diff(gmm_predict_noise(x, ab, prior), noise) <= 1e-9);
    }
}

TEST_CASE("single component matches the conjugate Gaussian posterior") {
    std::mt19937_64 rng(2);
    GmmPrior prior;
    prior.means = {random_image(rng, 2, 2, 3)};
    prior.variances = {0.3};
    prior.weights = {1.0};
    const auto x = random_image(rng, 2, 2, 3);
    for (double ab : {0.95, 0.4, 0.02}) {
        const auto post = gmm_posterior(x, ab, prior);
        CHECK(post.responsibilities.size() == 1);
        CHECK(post.responsibilities[0] == 1.0);
        const double precision = 1.0 / 0.3 + ab / (1.0 - ab);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double expected = (prior.means[0].data()[i] / 0.3 + std::sqrt(ab) * x.data()[i] / (1.0 - ab)) / precision;
            CHECK(post.mean.data()[i] == doctest::Approx(expected).epsilon(1e-13));
        }
    }
}

TEST_CASE("two-component posterior agrees with a dense-matrix oracle") {
    const auto prior = two_component_prior();
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = random_image(rng, 1, 2, 2, 1.5);
        for (double ab : {0.9, 0.5, 0.1}) {
            std::vector<double> resp;
            const auto expected = dense_posterior_mean(x, ab, prior, &resp);
            const auto post = gmm_posterior(x, ab, prior);
            CHECK((flat(post.mean) - expected).cwiseAbs().maxCoeff() <= 1e-10);
            for (std::size_t k = 0; k < 2; ++k) CHECK(std::abs(post.responsibilities[k] - resp[k]) <= 1e-12);

            // eps is the affine image of the posterior mean
            const auto eps = gmm_predict_noise(x, ab, prior);
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double e = (x.data()[i] - std::sqrt(ab) * expected(static_cast<Eigen::Index>(i))) / std::sqrt(1.0 - ab);
                CHECK(eps.data()[i] == doctest::Approx(e).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("one-dimensional posterior mean agrees with numerical quadrature") {
    GmmPrior prior;
    prior.means = {LatentImage(1, 1, 1, 1.2), LatentImage(1, 1, 1, -0.8)};
    prior.variances = {0.09, 0.25};
    prior.weights = {0.4, 0.6};
    auto normal_pdf = [](double v, double m, double var) {
        return std::exp(-0.5 * (v - m) * (v - m) / var) / std::sqrt(2.0 * std::numbers::pi * var);
    };
    for (double ab : {0.8, 0.3}) {
        for (double xt : {-1.5, 0.1, 0.9, 2.0}) {
            // trapezoid on [-8, 8]; the integrand is smooth and vanishes at the ends
            const int n = 40000;
            const double lo = -8.0;
            const double h = 16.0 / n;
            double num = 0.0;
            double den = 0.0;
            for (int i = 0; i <= n; ++i) {
                const double x0 = lo + h * i;
                const double p = (0.4 * normal_pdf(x0, 1.2, 0.09) + 0.6 * normal_pdf(x0, -0.8, 0.25)) *
                                 normal_pdf(xt, std::sqrt(ab) * x0, 1.0 - ab);
                const double w = (i == 0 || i == n) ? 0.5 : 1.0;
                num += w * x0 * p;
                den += w * p;
            }
            const auto post = gmm_posterior(LatentImage(1, 1, 1, xt), ab, prior);
            CHECK(std::abs(post.mean.data()[0] - num / den) <= 1e-10);
        }
    }
}

TEST_CASE("responsibilities form a distribution even far from every component") {
    std::mt19937_64 rng(4);
    const auto prior = random_gmm_prior(5, 1, 4, 4, 0.01, 1.0, 9);
    for (double scale : {1.0, 50.0, 1e4}) {
        const auto x = random_image(rng, 1, 4, 4, scale);
        const auto post = gmm_posterior(x, 0.5, prior);
        double total = 0.0;
        for (double r : post.responsibilities) {
            CHECK(r >= 0.0);
            total += r;
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(post.mean.all_finite());
    }
}

TEST_CASE("vjp: zero cotangent and the scalar closed form") {
    const auto prior3 = random_gmm_prior(3, 1, 2, 2, 0.1, 1.0, 5);
    std::mt19937_64 rng(5);
    const auto x = random_image(rng, 1, 2, 2);
    CHECK(gmm_vjp(x, 0.5, prior3, LatentImage(1, 2, 2)) == LatentImage(1, 2, 2));

    GmmPrior one;
    one.means = {LatentImage(1, 1, 1, 0.7)};
    one.variances = {0.2};
    one.weights = {1.0};
    const double ab = 0.6;
    const double c = std::sqrt(ab) * 0.2 / (ab * 0.2 + 1.0 - ab);
    const double slope = (1.0 - std::sqrt(ab) * c) / std::sqrt(1.0 - ab);
    const auto g = gmm_vjp(LatentImage(1, 1, 1, -0.4), ab, one, LatentImage(1, 1, 1, 2.5));
    CHECK(g.data()[0] == doctest::Approx(2.5 * slope).epsilon(1e-14));
}

TEST_CASE("vjp agrees with finite differences of <eps(x), u>") {
    std::mt19937_64 rng(6);
    int probes = 0;
    for (std::size_t K : {1u, 2u, 3u}) {
        const auto prior = random_gmm_prior(K, 2, 2, 3, 0.05, 0.8, 100 + K);
        for (double ab : {0.95, 0.5, 0.05}) {
            for (int rep = 0; rep < 12; ++rep, ++probes) {
                const auto x = random_image(rng, 2, 2, 3);
                const auto u = random_image(rng, 2, 2, 3);
                const auto fd = msd::testing::finite_difference_gradient(
                    x, [&](const LatentImage& p) { return dot(gmm_predict_noise(p, ab, prior), u); }, 1e-6);
                CHECK(msd::testing::relative_error(gmm_vjp(x, ab, prior, u), fd) <= 1e-6);
            }
        }
    }
    CHECK(probes >= 100);
}

TEST_CASE("GmmDenoiser range checks") {
    const auto schedule = build_schedule(10, 0.01, 0.2);
    GmmDenoiser den(schedule, {two_component_prior()});
    const LatentImage x(1, 2, 2, 0.3);
    CHECK_THROWS_AS(den.predict_noise(x, 0, {}), ContractViolation);
    CHECK_THROWS_AS(den.predict_noise(x, 11, {}), ContractViolation);
    CHECK_THROWS_AS(den.predict_noise(x, 5, ConditionId{1}), ContractViolation);
    CHECK_THROWS_AS(den.predict_noise(LatentImage(1, 3, 3), 5, {}), ContractViolation);
    CHECK(den.predict_noise(x, 5, {}) == gmm_predict_noise(x, schedule.alpha_bar(5), two_component_prior()));

    auto bad = two_component_prior();
    bad.weights = {0.3, 0.6};
    CHECK_THROWS_AS(GmmDenoiser(schedule, {bad}), ConfigError);
    CHECK_THROWS_AS(gmm_posterior(x, 1.0, two_component_prior()), ContractViolation);
}

TEST_CASE("scene denoiser components are the distinct template windows") {
    const HorizonScene scene{1.0, -1.0, 0.5, 4, 0.2};
    const CanvasSize canvas{16, 32};
    const std::vector<std::vector<LatentImage>> templates{{scene.render(1, canvas, 6), scene.render(1, canvas, 10)}};
    const auto den = make_scene_denoiser(templates, 8, 8, 4, 0.01, build_schedule(10, 0.01, 0.2));
    const auto& prior = den->prior({});
    CHECK(den->condition_count() == 1);
    CHECK(prior.size() >= 2);
    double total = 0.0;
    for (double w : prior.weights) total += w;
    CHECK(total == doctest::Approx(1.0));

    // every component is some window of some template, and all are distinct
    for (std::size_t k = 0; k < prior.size(); ++k) {
        bool found = false;
        for (const auto& tmpl : templates[0]) {
            for (const auto& win : build_grid(16, 32, 8, 8, 4).windows) found = found || crop(tmpl, win) == prior.means[k];
        }
        CHECK(found);
        for (std::size_t j = 0; j < k; ++j) CHECK_FALSE(prior.means[j] == prior.means[k]);
    }
}

TEST_CASE("scene denoiser with full-size windows has one component per template") {
    const HorizonScene a{1.0, -1.0, 0.0, 0, 0.0};
    const HorizonScene b{0.5, -0.5, 0.0, 0, 0.0};
    const CanvasSize canvas{8, 8};
    const std::vector<std::vector<LatentImage>> templates{{a.render(1, canvas, 2), a.render(1, canvas, 5)},
                                                          {b.render(1, canvas, 3)}};
    const auto den = make_scene_denoiser(templates, 8, 8, 1, 0.01, build_schedule(10, 0.01, 0.2));
    CHECK(den->condition_count() == 2);
    CHECK(den->prior(ConditionId{0}).size() == 2);
    CHECK(den->prior(ConditionId{1}).size() == 1);

    CHECK_THROWS_AS(make_scene_denoiser({}, 8, 8, 1, 0.01, build_schedule(10, 0.01, 0.2)), ConfigError);
    CHECK_THROWS_AS(make_scene_denoiser({{}}, 8, 8, 1, 0.01, build_schedule(10, 0.01, 0.2)), ConfigError);
}

TEST_CASE("HorizonScene values") {
    const HorizonScene s{1.0, -1.0, 2.0, 4, 0.25};
    CHECK(s.value(0, 0, 8, 16) == doctest::Approx(1.0 + 2.0 * 8 / 16));
    CHECK(s.value(7, 0, 8, 16) == doctest::Approx(1.0 + 2.0 / 16));
    CHECK(s.value(8, 0, 8, 16) == -0.75);
    CHECK(s.value(8, 4, 8, 16) == -1.25);
    CHECK(s.value(15, 5, 8, 16) == -1.25);
}
