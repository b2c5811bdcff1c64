#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "msd/core.hpp"
#include "msd/denoiser.hpp"
#include "msd/tiling.hpp"

namespace msd {

// Deterministic DDIM update x_t -> x_{t-1} given predicted noise.
LatentImage ddim_step(const LatentImage& x_t, const LatentImage& eps, int t, const NoiseSchedule& schedule);

// One denoising step Phi(x_t) = ddim_step(x_t, eps(x_t, t), t).
LatentImage phi_step(const LatentImage& x_t, int t, ConditionId condition, const Denoiser& denoiser,
                     const NoiseSchedule& schedule);

// Phi'(x)^T * cotangent. Phi is affine in eps, so this is a*c + b*eps'(x)^T c;
// `stop_gradient` drops the eps term.
LatentImage phi_step_vjp(const LatentImage& x_t, int t, ConditionId condition, const Denoiser& denoiser,
                         const NoiseSchedule& schedule, const LatentImage& cotangent, bool stop_gradient = false);

// Runs fn(i) for i in [0, count) on up to `workers` threads (0 = hardware concurrency).
void parallel_for(std::size_t count, unsigned workers, const std::function<void(std::size_t)>& fn);

// Crops every window, applies phi_step, merges by weighted average.
LatentImage multi_diffusion_step(const LatentImage& z_t, const WindowGrid& grid, const MergeWeights& weights,
                                 int t, ConditionId condition, const Denoiser& denoiser,
                                 const NoiseSchedule& schedule, unsigned workers = 1);

// ||ds(Phi(x)) - target||^2
double ms_loss(const LatentImage& x_t, const LatentImage& lowres_target, int t, ConditionId condition,
               const Denoiser& denoiser, const NoiseSchedule& schedule, int factor);

// Gradient of ms_loss with respect to x_t.
LatentImage ms_loss_gradient(const LatentImage& x_t, const LatentImage& lowres_target, int t,
                             ConditionId condition, const Denoiser& denoiser, const NoiseSchedule& schedule,
                             int factor, GradMode mode, bool stop_gradient = false);

// grad_steps iterations of x <- x - omega_t * grad ms_loss(x).
LatentImage ms_guidance(const LatentImage& x_t, const LatentImage& lowres_target, int t, ConditionId condition,
                        const Denoiser& denoiser, const GuidanceConfig& guidance, const NoiseSchedule& schedule,
                        int factor);

struct StepTrace {
    int t = 0;
    std::vector<double> md_loss;  // per level, index 0 = level 1
    std::vector<double> ms_loss;  // per level; 0 at level 1
    std::size_t guidance_invocations = 0;
    double duration_ms = 0.0;
};

struct WindowLayout {
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t stride = 32;
    bool boundary_aligned = false;
    WeightKind weights = WeightKind::uniform;
    double gaussian_edge = 0.1;
};

struct SamplerOptions {
    PyramidConfig pyramid;
    WindowLayout window;
    GuidanceConfig guidance;
    std::size_t channels = 1;
    unsigned workers = 1;
};

// Pyramid, window and guidance checks performed by the sampler constructor.
void validate_sampler_options(const SamplerOptions& options);

struct SampleResult {
    LatentImage final_canvas;                 // z_0 at level S
    std::vector<LatentImage> level_outputs;   // z_0 at levels 1..S from the last step
    std::vector<StepTrace> traces;
};

// Per-timestep pyramid procedure and the full sampling loop. Single owner; holds a
// reference to the denoiser, which must outlive it.
class MultiScaleSampler {
public:
    MultiScaleSampler(SamplerOptions options, const Denoiser& denoiser, NoiseSchedule schedule);

    const SamplerOptions& options() const noexcept { return options_; }
    const NoiseSchedule& schedule() const noexcept { return schedule_; }
    const WindowGrid& grid(int level) const;
    const MergeWeights& weights(int level) const;
    std::size_t total_windows() const;

    LatentImage multi_diffusion_step(const LatentImage& z_t, int level, int t, ConditionId condition) const;

    // z_t^S -> z_{t-1}^S. When `level_outputs` is non-null it receives z_{t-1}^s for s = 1..S.
    LatentImage msd_one_step(const LatentImage& z_t, int t, ConditionId condition, StepTrace* trace = nullptr,
                             std::vector<LatentImage>* level_outputs = nullptr) const;

    using TraceSink = std::function<void(const StepTrace&)>;
    SampleResult sample(std::uint64_t seed, ConditionId condition, const TraceSink& sink = {}) const;
    SampleResult sample_from(LatentImage z_T, ConditionId condition, const TraceSink& sink = {}) const;

private:
    LatentImage coarser(const LatentImage& z) const;

    SamplerOptions options_;
    const Denoiser& denoiser_;
    NoiseSchedule schedule_;
    std::vector<WindowGrid> grids_;         // index level-1
    std::vector<MergeWeights> weights_;
};

// Baseline without overlap averaging: every window runs its own full chain from its crop of
// z_T and is pasted into the canvas in grid order (later windows overwrite earlier ones).
LatentImage sample_independent_windows(const LatentImage& z_T, const WindowGrid& grid, ConditionId condition,
                                       const Denoiser& denoiser, const NoiseSchedule& schedule);

}  // namespace msd
