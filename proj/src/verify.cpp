#include "msd/verify.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include "msd/core.hpp"
#include "msd/denoiser.hpp"
#include "msd/sampling.hpp"
#include "msd/tiling.hpp"

namespace msd {

namespace {

LatentImage random_image(std::mt19937_64& rng, std::size_t c, std::size_t h, std::size_t w, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    LatentImage out(c, h, w);
    for (double& v : out.values()) v = normal(rng);
    return out;
}

// Least-squares solve of the stacked per-window system sqrt(W_i) F_i z = sqrt(W_i) patch_i.
LatentImage least_squares_merge(const std::vector<WindowPatch>& patches, const MergeWeights& weights, CanvasSize canvas) {
    Eigen::Index rows = 0;
    for (const auto& p : patches) rows += static_cast<Eigen::Index>(p.window.height * p.window.width);
    const auto n = static_cast<Eigen::Index>(canvas.height * canvas.width);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(rows, n);
    Eigen::VectorXd b(rows);
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < patches.size(); ++i) {
        const auto& [win, patch] = patches[i];
        for (std::size_t r = 0; r < win.height; ++r) {
            for (std::size_t c = 0; c < win.width; ++c, ++row) {
                const double s = std::sqrt(weights[i].at(r, c));
                a(row, static_cast<Eigen::Index>((win.top + r) * canvas.width + win.left + c)) = s;
                b(row) = s * patch.at(0, r, c);
            }
        }
    }
    const Eigen::VectorXd z = a.colPivHouseholderQr().solve(b);
    return LatentImage(1, canvas.height, canvas.width, std::vector<double>(z.data(), z.data() + z.size()));
}

VerifyCheck check_merge_argmin(bool corrupt) {
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> weight(0.5, 1.5);
    const CanvasSize canvas{8, 8};
    const auto grid = build_grid(8, 8, 5, 5, 3);
    double worst_solution = 0.0;
    double worst_gradient = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<WindowPatch> patches;
        MergeWeights weights;
        for (const auto& win : grid.windows) {
            patches.push_back({win, random_image(rng, 1, 5, 5)});
            std::vector<double> w(25);
            for (double& v : w) v = weight(rng);
            weights.per_window.emplace_back(5, 5, std::move(w));
        }
        MergeWeights used = weights;
        if (corrupt) {
            for (std::size_t r = 0; r < 5; ++r) used.per_window[0].at(r, 2) *= 3.0;
        }
        const auto merged = md_merge(patches, used, 1, canvas);
        const auto oracle = least_squares_merge(patches, weights, canvas);
        worst_solution = std::max(worst_solution, max_abs_diff(merged, oracle));
        const auto grad = md_objective_gradient(merged, patches, weights);
        for (double g : grad.data()) worst_gradient = std::max(worst_gradient, std::abs(g));
    }
    std::ostringstream detail;
    detail << "max |merge - lstsq| = " << worst_solution << ", max |grad| = " << worst_gradient;
    return {"merge_argmin", worst_solution <= 1e-6 && worst_gradient <= 1e-9, detail.str()};
}

VerifyCheck check_gradient_vs_fd() {
    const auto schedule = build_schedule(50, 0.002, 0.3);
    const int T = schedule.total_steps();
    std::mt19937_64 rng(202);
    double worst = 0.0;
    int probes = 0;
    for (std::size_t K = 1; K <= 3; ++K) {
        GmmDenoiser denoiser(schedule, {random_gmm_prior(K, 1, 8, 8, 0.5, 1.0, 300 + K)});
        for (int t : {T, T / 2, static_cast<int>(std::ceil(0.7 * T)) + 1}) {
            for (int probe = 0; probe < 4; ++probe, ++probes) {
                const auto x = random_image(rng, 1, 8, 8);
                const auto target = random_image(rng, 1, 4, 4);
                const auto exact = ms_loss_gradient(x, target, t, {0}, denoiser, schedule, 2, GradMode::exact_vjp);
                LatentImage fd(1, 8, 8);
                LatentImage p = x;
                const double h = 1e-5;
                for (std::size_t i = 0; i < p.size(); ++i) {
                    const double saved = p.values()[i];
                    p.values()[i] = saved + h;
                    const double up = ms_loss(p, target, t, {0}, denoiser, schedule, 2);
                    p.values()[i] = saved - h;
                    const double down = ms_loss(p, target, t, {0}, denoiser, schedule, 2);
                    p.values()[i] = saved;
                    fd.values()[i] = (up - down) / (2 * h);
                }
                LatentImage diff = exact;
                diff.axpy(-1.0, fd);
                worst = std::max(worst, std::sqrt(squared_norm(diff) / std::max(squared_norm(fd), 1e-300)));
            }
        }
    }
    std::ostringstream detail;
    detail << probes << " probes, max relative error = " << worst;
    return {"gradient_vs_fd", worst <= 1e-4, detail.str()};
}

VerifyCheck check_omega0_equivalence() {
    SamplerOptions options;
    options.pyramid.levels = 2;
    options.pyramid.finest = {32, 64};
    options.window = {16, 16, 8};
    options.guidance.omega = 0.0;
    options.guidance.tau_fraction = 0.0;
    options.channels = 1;
    const auto schedule = build_schedule(10, 0.01, 0.4);
    GmmDenoiser denoiser(schedule, {random_gmm_prior(3, 1, 16, 16, 0.2, 1.0, 7)});
    MultiScaleSampler sampler(options, denoiser, schedule);
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto z = init_noise(options.pyramid, 1, seed);
        for (int t : {10, 5, 1}) {
            const auto a = sampler.msd_one_step(z, t, {0});
            const auto b = sampler.multi_diffusion_step(z, 2, t, {0});
            worst = std::max(worst, max_abs_diff(a, b));
        }
    }
    std::ostringstream detail;
    detail << "max |msd(omega=0) - md| = " << worst;
    return {"omega0_equivalence", worst <= 1e-12, detail.str()};
}

VerifyCheck check_grid_counts() {
    const auto high = build_grid(128, 512, 64, 64, 32).size();
    const auto low = build_grid(64, 256, 64, 64, 32).size();
    std::ostringstream detail;
    detail << high << " + " << low << " = " << high + low << " windows";
    return {"grid_counts", high == 45 && low == 7 && high + low == 52, detail.str()};
}

VerifyCheck check_decay_endpoints() {
    const double at_T = decay_factor(50, 50, DecayRule::scaled_cosine);
    const double at_0 = decay_factor(0, 50, DecayRule::scaled_cosine);
    const double mid = decay_factor(25, 50, DecayRule::scaled_cosine);
    std::ostringstream detail;
    detail << "decay(T) = " << at_T << ", decay(0) = " << at_0 << ", decay(T/2) = " << mid;
    return {"decay_endpoints", at_T == 1.0 && at_0 == 0.0 && std::abs(mid - 0.5) <= 1e-15, detail.str()};
}

VerifyCheck check_tau_rule() {
    GuidanceConfig g;
    g.tau_fraction = 0.7;
    int active = 0;
    int lowest = 0;
    for (int t = 50; t >= 1; --t) {
        if (g.active(t, 50)) {
            ++active;
            lowest = t;
        }
    }
    std::ostringstream detail;
    detail << active << " guided steps, t = 50.." << lowest;
    return {"tau_rule", active == 15 && lowest == 36, detail.str()};
}

}  // namespace

bool VerifyReport::all_passed() const {
    for (const auto& c : checks) {
        if (!c.passed) return false;
    }
    return !checks.empty();
}

std::string VerifyReport::table() const {
    std::ostringstream out;
    for (const auto& c : checks) {
        out << (c.passed ? "PASS  " : "FAIL  ") << c.name;
        for (std::size_t i = c.name.size(); i < 20; ++i) out << ' ';
        out << c.detail << '\n';
    }
    out << "verification " << (all_passed() ? "passed" : "FAILED") << " in " << seconds << " s\n";
    return out.str();
}

VerifyReport run_verification(const VerifyOptions& options) {
    const auto start = std::chrono::steady_clock::now();
    VerifyReport report;
    auto guarded = [&report](const char* name, auto&& fn) {
        try {
            report.checks.push_back(fn());
        } catch (const std::exception& e) {
            report.checks.push_back({name, false, std::string("exception: ") + e.what()});
        }
    };
    guarded("merge_argmin", [&] { return check_merge_argmin(options.corrupt_merge_weights); });
    guarded("gradient_vs_fd", check_gradient_vs_fd);
    guarded("omega0_equivalence", check_omega0_equivalence);
    guarded("grid_counts", check_grid_counts);
    guarded("decay_endpoints", check_decay_endpoints);
    guarded("tau_rule", check_tau_rule);
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace msd
