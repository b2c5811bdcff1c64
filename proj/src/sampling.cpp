#include "msd/sampling.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

namespace msd {

namespace {

struct DdimCoefficients {
    double x_coeff;    // sqrt(ab_{t-1}) / sqrt(ab_t)
    double eps_coeff;  // sqrt(1 - ab_{t-1}) - sqrt(ab_{t-1}) sqrt(1 - ab_t) / sqrt(ab_t)
};

DdimCoefficients ddim_coefficients(int t, const NoiseSchedule& schedule) {
    if (t < 1) throw ContractViolation("ddim step at t=" + std::to_string(t));
    const double ab_t = schedule.alpha_bar(t);
    const double ab_prev = schedule.alpha_bar(t - 1);
    const double ratio = std::sqrt(ab_prev) / std::sqrt(ab_t);
    return {ratio, std::sqrt(1.0 - ab_prev) - ratio * std::sqrt(1.0 - ab_t)};
}

}  // namespace

LatentImage ddim_step(const LatentImage& x_t, const LatentImage& eps, int t, const NoiseSchedule& schedule) {
    if (!x_t.same_shape(eps)) throw ContractViolation("ddim_step: eps shape does not match x_t");
    if (t < 1) throw ContractViolation("ddim step at t=" + std::to_string(t));
    const double ab_t = schedule.alpha_bar(t);
    const double ab_prev = schedule.alpha_bar(t - 1);
    const double sa_t = std::sqrt(ab_t);
    const double sn_t = std::sqrt(1.0 - ab_t);
    const double sa_prev = std::sqrt(ab_prev);
    const double sn_prev = std::sqrt(1.0 - ab_prev);
    LatentImage out = x_t;
    auto o = out.values();
    const auto e = eps.values();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] = sa_prev * (o[i] - sn_t * e[i]) / sa_t + sn_prev * e[i];
    }
    return out;
}

LatentImage phi_step(const LatentImage& x_t, int t, ConditionId condition, const Denoiser& denoiser,
                     const NoiseSchedule& schedule) {
    return ddim_step(x_t, denoiser.predict_noise(x_t, t, condition), t, schedule);
}

LatentImage phi_step_vjp(const LatentImage& x_t, int t, ConditionId condition, const Denoiser& denoiser,
                         const NoiseSchedule& schedule, const LatentImage& cotangent, bool stop_gradient) {
    const auto k = ddim_coefficients(t, schedule);
    LatentImage out = cotangent;
    out.scale(k.x_coeff);
    if (!stop_gradient && k.eps_coeff != 0.0) {
        out.axpy(k.eps_coeff, denoiser.vjp(x_t, t, condition, cotangent));
    }
    return out;
}

void parallel_for(std::size_t count, unsigned workers, const std::function<void(std::size_t)>& fn) {
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, count));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < count; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        std::lock_guard lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                    }
                }
            });
        }
    }
    if (failure) std::rethrow_exception(failure);
}

namespace {

std::vector<WindowPatch> denoise_windows(const LatentImage& z_t, const WindowGrid& grid, int t,
                                         ConditionId condition, const Denoiser& denoiser,
                                         const NoiseSchedule& schedule, unsigned workers) {
    std::vector<WindowPatch> patches(grid.size());
    parallel_for(grid.size(), workers, [&](std::size_t i) {
        const auto& win = grid.windows[i];
        patches[i] = {win, phi_step(crop(z_t, win), t, condition, denoiser, schedule)};
    });
    return patches;
}

}  // namespace

LatentImage multi_diffusion_step(const LatentImage& z_t, const WindowGrid& grid, const MergeWeights& weights,
                                 int t, ConditionId condition, const Denoiser& denoiser,
                                 const NoiseSchedule& schedule, unsigned workers) {
    if (z_t.height() != grid.canvas.height || z_t.width() != grid.canvas.width) {
        throw ContractViolation("multi_diffusion_step: grid does not match canvas");
    }
    const auto patches = denoise_windows(z_t, grid, t, condition, denoiser, schedule, workers);
    return md_merge(patches, weights, z_t.channels(), grid.canvas);
}

double ms_loss(const LatentImage& x_t, const LatentImage& lowres_target, int t, ConditionId condition,
               const Denoiser& denoiser, const NoiseSchedule& schedule, int factor) {
    auto residual = downsample(phi_step(x_t, t, condition, denoiser, schedule), factor);
    if (!residual.same_shape(lowres_target)) throw ContractViolation("ms_loss: low-resolution target shape mismatch");
    residual.axpy(-1.0, lowres_target);
    return squared_norm(residual);
}

LatentImage ms_loss_gradient(const LatentImage& x_t, const LatentImage& lowres_target, int t,
                             ConditionId condition, const Denoiser& denoiser, const NoiseSchedule& schedule,
                             int factor, GradMode mode, bool stop_gradient) {
    if (mode == GradMode::finite_difference) {
        double x_max = 0.0;
        for (double v : x_t.data()) x_max = std::max(x_max, std::abs(v));
        const double h = 1e-4 * (1.0 + x_max);
        LatentImage grad(x_t.channels(), x_t.height(), x_t.width());
        LatentImage probe = x_t;
        for (std::size_t i = 0; i < probe.size(); ++i) {
            const double saved = probe.values()[i];
            probe.values()[i] = saved + h;
            const double up = ms_loss(probe, lowres_target, t, condition, denoiser, schedule, factor);
            probe.values()[i] = saved - h;
            const double down = ms_loss(probe, lowres_target, t, condition, denoiser, schedule, factor);
            probe.values()[i] = saved;
            grad.values()[i] = (up - down) / (2.0 * h);
        }
        return grad;
    }
    auto residual = downsample(phi_step(x_t, t, condition, denoiser, schedule), factor);
    if (!residual.same_shape(lowres_target)) throw ContractViolation("ms_loss: low-resolution target shape mismatch");
    residual.axpy(-1.0, lowres_target);
    residual.scale(2.0);
    return phi_step_vjp(x_t, t, condition, denoiser, schedule, downsample_transpose(residual, factor),
                        stop_gradient);
}

LatentImage ms_guidance(const LatentImage& x_t, const LatentImage& lowres_target, int t, ConditionId condition,
                        const Denoiser& denoiser, const GuidanceConfig& guidance, const NoiseSchedule& schedule,
                        int factor) {
    const double step = guidance.weight(t, schedule.total_steps());
    if (step == 0.0) return x_t;
    LatentImage x = x_t;
    for (int k = 0; k < guidance.grad_steps; ++k) {
        x.axpy(-step, ms_loss_gradient(x, lowres_target, t, condition, denoiser, schedule, factor,
                                       guidance.grad_mode, guidance.stop_gradient));
    }
    return x;
}

void validate_sampler_options(const SamplerOptions& options) {
    const auto& pyr = options.pyramid;
    const auto& win = options.window;
    pyr.validate(win.height, win.width);
    options.guidance.validate();
    if (options.channels == 0) throw ConfigError("channels", "must be >= 1");
    if (win.stride == 0) throw ConfigError("window.stride", "must be >= 1");
    const auto f = static_cast<std::size_t>(pyr.downsample_factor);
    if (pyr.levels > 1 && (win.stride % f != 0 || win.height % f != 0 || win.width % f != 0)) {
        throw ConfigError("window.stride", "stride and window size must be divisible by the downsample factor");
    }
    for (int s = 1; s <= pyr.levels; ++s) {
        const auto canvas = pyr.canvas(s);
        if (!win.boundary_aligned &&
            ((canvas.height - win.height) % win.stride != 0 || (canvas.width - win.width) % win.stride != 0)) {
            throw ConfigError("window.stride", "stride does not tile the level-" + std::to_string(s) + " canvas " +
                                                   std::to_string(canvas.height) + "x" +
                                                   std::to_string(canvas.width) +
                                                   "; enable window.boundary_aligned");
        }
        if (s > 1) {
            for (const auto& w : build_grid(canvas.height, canvas.width, win.height, win.width, win.stride, s).windows) {
                lowres_window(w, pyr.downsample_factor);
            }
        }
    }
}

MultiScaleSampler::MultiScaleSampler(SamplerOptions options, const Denoiser& denoiser, NoiseSchedule schedule)
    : options_(std::move(options)), denoiser_(denoiser), schedule_(std::move(schedule)) {
    validate_sampler_options(options_);
    const auto& pyr = options_.pyramid;
    const auto& win = options_.window;
    for (int s = 1; s <= pyr.levels; ++s) {
        const auto canvas = pyr.canvas(s);
        grids_.push_back(build_grid(canvas.height, canvas.width, win.height, win.width, win.stride, s));
        const auto matrix = win.weights == WeightKind::uniform
                                ? WeightMatrix::uniform(win.height, win.width)
                                : WeightMatrix::gaussian(win.height, win.width, win.gaussian_edge);
        weights_.push_back(MergeWeights::shared(matrix, grids_.back().size()));
    }
}

const WindowGrid& MultiScaleSampler::grid(int level) const {
    if (level < 1 || level > options_.pyramid.levels) throw ContractViolation("level out of range");
    return grids_[static_cast<std::size_t>(level - 1)];
}

const MergeWeights& MultiScaleSampler::weights(int level) const {
    if (level < 1 || level > options_.pyramid.levels) throw ContractViolation("level out of range");
    return weights_[static_cast<std::size_t>(level - 1)];
}

std::size_t MultiScaleSampler::total_windows() const {
    std::size_t n = 0;
    for (const auto& g : grids_) n += g.size();
    return n;
}

LatentImage MultiScaleSampler::coarser(const LatentImage& z) const {
    auto out = downsample(z, options_.pyramid.downsample_factor);
    if (options_.pyramid.renormalize_variance) out.scale(options_.pyramid.downsample_factor);
    return out;
}

LatentImage MultiScaleSampler::multi_diffusion_step(const LatentImage& z_t, int level, int t,
                                                    ConditionId condition) const {
    return msd::multi_diffusion_step(z_t, grid(level), weights(level), t, condition, denoiser_, schedule_,
                                     options_.workers);
}

LatentImage MultiScaleSampler::msd_one_step(const LatentImage& z_t, int t, ConditionId condition, StepTrace* trace,
                                            std::vector<LatentImage>* level_outputs) const {
    const auto start = std::chrono::steady_clock::now();
    const int levels = options_.pyramid.levels;
    const int factor = options_.pyramid.downsample_factor;
    const auto top = options_.pyramid.canvas(levels);
    if (z_t.height() != top.height || z_t.width() != top.width || z_t.channels() != options_.channels) {
        throw ContractViolation("msd_one_step: canvas does not match the finest pyramid level");
    }
    if (t < 1 || t > schedule_.total_steps()) throw ContractViolation("msd_one_step: t out of range");

    StepTrace local;
    local.t = t;
    local.md_loss.assign(static_cast<std::size_t>(levels), 0.0);
    local.ms_loss.assign(static_cast<std::size_t>(levels), 0.0);

    // Downsample chain z_t^S .. z_t^1.
    std::vector<LatentImage> noisy(static_cast<std::size_t>(levels));
    noisy.back() = z_t;
    for (int s = levels; s > 1; --s) noisy[s - 2] = coarser(noisy[s - 1]);

    auto check = [t](const LatentImage& z, int level) {
        if (!z.all_finite()) throw NumericalError(level, t, "canvas contains NaN or Inf");
    };

    std::vector<LatentImage> denoised(static_cast<std::size_t>(levels));
    {
        const auto patches = denoise_windows(noisy[0], grid(1), t, condition, denoiser_, schedule_, options_.workers);
        denoised[0] = md_merge(patches, weights(1), options_.channels, grid(1).canvas);
        check(denoised[0], 1);
        local.md_loss[0] = md_objective(denoised[0], patches, weights(1));
    }

    const bool guided = options_.guidance.active(t, schedule_.total_steps());
    const double target_scale = options_.pyramid.renormalize_variance ? 1.0 / factor : 1.0;
    for (int s = 2; s <= levels; ++s) {
        const auto& g = grid(s);
        const auto& coarse = denoised[s - 2];
        std::vector<WindowPatch> patches(g.size());
        std::vector<LatentImage> targets(g.size());
        parallel_for(g.size(), options_.workers, [&](std::size_t i) {
            const auto& win = g.windows[i];
            auto target = crop(coarse, lowres_window(win, factor));
            if (target_scale != 1.0) target.scale(target_scale);
            auto x = crop(noisy[s - 1], win);
            if (guided) {
                x = ms_guidance(x, target, t, condition, denoiser_, options_.guidance, schedule_, factor);
            }
            patches[i] = {win, phi_step(x, t, condition, denoiser_, schedule_)};
            targets[i] = std::move(target);
        });
        if (guided) local.guidance_invocations += g.size();
        auto merged = md_merge(patches, weights(s), options_.channels, g.canvas);
        check(merged, s);
        local.md_loss[s - 1] = md_objective(merged, patches, weights(s));
        double ms = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            auto r = downsample(crop(merged, g.windows[i]), factor);
            r.axpy(-1.0, targets[i]);
            ms += squared_norm(r);
        }
        local.ms_loss[s - 1] = ms;
        denoised[s - 1] = std::move(merged);
    }

    local.duration_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (trace) *trace = std::move(local);
    LatentImage out = denoised.back();
    if (level_outputs) *level_outputs = std::move(denoised);
    return out;
}

SampleResult MultiScaleSampler::sample(std::uint64_t seed, ConditionId condition, const TraceSink& sink) const {
    return sample_from(init_noise(options_.pyramid, options_.channels, seed), condition, sink);
}

SampleResult MultiScaleSampler::sample_from(LatentImage z_T, ConditionId condition, const TraceSink& sink) const {
    if (condition.value >= denoiser_.condition_count()) {
        throw ConfigError("condition", "condition " + std::to_string(condition.value) + " out of range");
    }
    SampleResult result;
    LatentImage z = std::move(z_T);
    for (int t = schedule_.total_steps(); t >= 1; --t) {
        StepTrace trace;
        std::vector<LatentImage>* outputs = t == 1 ? &result.level_outputs : nullptr;
        z = msd_one_step(z, t, condition, &trace, outputs);
        if (sink) sink(trace);
        result.traces.push_back(std::move(trace));
    }
    result.final_canvas = std::move(z);
    return result;
}

LatentImage sample_independent_windows(const LatentImage& z_T, const WindowGrid& grid, ConditionId condition,
                                       const Denoiser& denoiser, const NoiseSchedule& schedule) {
    LatentImage canvas = z_T;
    for (const auto& win : grid.windows) {
        auto x = crop(z_T, win);
        for (int t = schedule.total_steps(); t >= 1; --t) x = phi_step(x, t, condition, denoiser, schedule);
        for (std::size_t c = 0; c < x.channels(); ++c) {
            for (std::size_t r = 0; r < win.height; ++r) {
                for (std::size_t col = 0; col < win.width; ++col) canvas.at(c, win.top + r, win.left + col) = x.at(c, r, col);
            }
        }
    }
    return canvas;
}

}  // namespace msd
