#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "msd/core.hpp"

namespace msd {

// Scene class selector; the toy stand-in for a text prompt.
struct ConditionId {
    std::size_t value = 0;
    friend bool operator==(const ConditionId&, const ConditionId&) = default;
};

// Window-level noise predictor eps(x, t | condition).
class Denoiser {
public:
    virtual ~Denoiser() = default;

    virtual LatentImage predict_noise(const LatentImage& x, int t, ConditionId condition) const = 0;

    // J^T * cotangent, J the Jacobian of predict_noise at x.
    virtual LatentImage vjp(const LatentImage& x, int t, ConditionId condition,
                            const LatentImage& cotangent) const;
    virtual bool has_vjp() const { return false; }

    virtual std::size_t condition_count() const = 0;
};

struct GmmPrior {
    std::vector<double> weights;     // pi_k, sum to 1
    std::vector<LatentImage> means;  // mu_k, window-shaped
    std::vector<double> variances;   // sigma_k^2, isotropic

    std::size_t size() const noexcept { return means.size(); }
    void validate() const;
};

// Exact posterior quantities of a Gaussian-mixture prior under x_t = sqrt(ab) x0 + sqrt(1-ab) e.
struct GmmPosterior {
    std::vector<double> responsibilities;
    LatentImage mean;  // E[x0 | x_t]
};

GmmPosterior gmm_posterior(const LatentImage& x, double alpha_bar, const GmmPrior& prior);
LatentImage gmm_predict_noise(const LatentImage& x, double alpha_bar, const GmmPrior& prior);
LatentImage gmm_vjp(const LatentImage& x, double alpha_bar, const GmmPrior& prior, const LatentImage& cotangent);

// Optimal noise predictor for one Gaussian-mixture prior per condition.
class GmmDenoiser final : public Denoiser {
public:
    GmmDenoiser(NoiseSchedule schedule, std::vector<GmmPrior> priors);

    LatentImage predict_noise(const LatentImage& x, int t, ConditionId condition) const override;
    LatentImage vjp(const LatentImage& x, int t, ConditionId condition,
                    const LatentImage& cotangent) const override;
    bool has_vjp() const override { return true; }
    std::size_t condition_count() const override { return priors_.size(); }

    const GmmPrior& prior(ConditionId condition) const;
    const NoiseSchedule& schedule() const noexcept { return schedule_; }

private:
    double alpha_bar_for(int t) const;

    NoiseSchedule schedule_;
    std::vector<GmmPrior> priors_;
};

// Random prior with `components` means drawn N(0, mean_scale^2), shared variance.
GmmPrior random_gmm_prior(std::size_t components, std::size_t channels, std::size_t height, std::size_t width,
                          double variance, double mean_scale, std::uint64_t seed);

// Procedural horizon scene: sky above the horizon row, ground below.
struct HorizonScene {
    double sky = 1.0;
    double ground = -1.0;
    // Sky brightens by this much per canvas-height above the horizon.
    double sky_gradient = 0.0;
    // Vertical stripes on the ground ("city" texture); period 0 disables.
    std::size_t stripe_period = 0;
    double stripe_amplitude = 0.0;

    double value(std::size_t row, std::size_t col, std::size_t horizon_row, std::size_t canvas_height) const;
    LatentImage render(std::size_t channels, CanvasSize canvas, std::size_t horizon_row) const;
};

// Builds a GMM whose components are the distinct window patches of each condition's
// templates, sampled on a `patch_stride` grid (plus the boundary-aligned offsets).
std::unique_ptr<GmmDenoiser> make_scene_denoiser(const std::vector<std::vector<LatentImage>>& templates,
                                                 std::size_t window_height, std::size_t window_width,
                                                 std::size_t patch_stride, double variance,
                                                 NoiseSchedule schedule);

}  // namespace msd
