#include "msd/core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace msd {

LatentImage::LatentImage(std::size_t channels, std::size_t height, std::size_t width, double fill)
    : channels_(channels), height_(height), width_(width), data_(channels * height * width, fill) {
    if (channels == 0 || height == 0 || width == 0) {
        throw ContractViolation("LatentImage dimensions must be positive");
    }
}

LatentImage::LatentImage(std::size_t channels, std::size_t height, std::size_t width,
                         std::vector<double> data)
    : channels_(channels), height_(height), width_(width), data_(std::move(data)) {
    if (channels == 0 || height == 0 || width == 0) {
        throw ContractViolation("LatentImage dimensions must be positive");
    }
    if (data_.size() != channels * height * width) {
        throw ContractViolation("LatentImage data length " + std::to_string(data_.size()) +
                                " does not match " + std::to_string(channels) + "x" +
                                std::to_string(height) + "x" + std::to_string(width));
    }
}

bool LatentImage::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void LatentImage::axpy(double alpha, const LatentImage& other) {
    if (!same_shape(other)) throw ContractViolation("axpy: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += alpha * other.data_[i];
}

void LatentImage::scale(double alpha) noexcept {
    for (double& v : data_) v *= alpha;
}

double max_abs_diff(const LatentImage& a, const LatentImage& b) {
    if (!a.same_shape(b)) throw ContractViolation("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

double squared_norm(const LatentImage& x) noexcept {
    double s = 0.0;
    for (double v : x.data()) s += v * v;
    return s;
}

double dot(const LatentImage& a, const LatentImage& b) {
    if (!a.same_shape(b)) throw ContractViolation("dot: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
    return s;
}

NoiseSchedule::NoiseSchedule(std::vector<double> alpha_bar) : alpha_bar_(std::move(alpha_bar)) {
    if (alpha_bar_.size() < 2) throw ConfigError("schedule", "need at least one timestep");
    if (alpha_bar_[0] != 1.0) throw ConfigError("schedule", "alpha_bar[0] must be 1");
    for (std::size_t t = 1; t < alpha_bar_.size(); ++t) {
        if (!(alpha_bar_[t] > 0.0) || !(alpha_bar_[t] < alpha_bar_[t - 1])) {
            throw ConfigError("schedule", "alpha_bar must be strictly decreasing and positive (t=" +
                                              std::to_string(t) + ")");
        }
    }
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t > total_steps()) {
        throw ContractViolation("timestep " + std::to_string(t) + " outside [0, " +
                                std::to_string(total_steps()) + "]");
    }
    return alpha_bar_[static_cast<std::size_t>(t)];
}

NoiseSchedule build_schedule(int total_steps, double beta_min, double beta_max) {
    if (total_steps < 1) throw ConfigError("schedule.steps", "must be >= 1");
    if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0)) {
        throw ConfigError("schedule.beta_min", "require 0 < beta_min <= beta_max < 1");
    }
    std::vector<double> alpha_bar(static_cast<std::size_t>(total_steps) + 1);
    alpha_bar[0] = 1.0;
    for (int k = 1; k <= total_steps; ++k) {
        const double beta = total_steps == 1
                                ? beta_min
                                : beta_min + (beta_max - beta_min) * (k - 1) / (total_steps - 1);
        alpha_bar[k] = alpha_bar[k - 1] * (1.0 - beta);
    }
    return NoiseSchedule(std::move(alpha_bar));
}

double decay_factor(int t, int total_steps, DecayRule decay) {
    if (total_steps < 1 || t < 0 || t > total_steps) {
        throw ContractViolation("decay_factor: t=" + std::to_string(t) + " outside [0, " +
                                std::to_string(total_steps) + "]");
    }
    if (decay == DecayRule::none) return 1.0;
    // Pin the endpoints; cos(pi) is not exactly -1 in floating point.
    if (t == total_steps) return 1.0;
    if (t == 0) return 0.0;
    const double phase = static_cast<double>(total_steps - t) / total_steps * std::numbers::pi;
    return (1.0 + std::cos(phase)) / 2.0;
}

void GuidanceConfig::validate() const {
    if (!(omega >= 0.0) || !std::isfinite(omega)) throw ConfigError("guidance.omega", "must be finite and >= 0");
    if (!(tau_fraction >= 0.0 && tau_fraction <= 1.0)) {
        throw ConfigError("guidance.tau_fraction", "must lie in [0, 1]");
    }
    if (grad_steps < 1) throw ConfigError("guidance.grad_steps", "must be >= 1");
}

bool GuidanceConfig::active(int t, int total_steps) const {
    const auto cutoff = static_cast<int>(std::floor(tau_fraction * total_steps + 1e-9));
    return t > cutoff;
}

CanvasSize PyramidConfig::canvas(int level) const {
    if (level < 1 || level > levels) {
        throw ContractViolation("pyramid level " + std::to_string(level) + " outside [1, " +
                                std::to_string(levels) + "]");
    }
    CanvasSize size = finest;
    for (int s = levels; s > level; --s) {
        size.height /= static_cast<std::size_t>(downsample_factor);
        size.width /= static_cast<std::size_t>(downsample_factor);
    }
    return size;
}

void PyramidConfig::validate(std::size_t window_height, std::size_t window_width) const {
    if (levels < 1) throw ConfigError("pyramid.levels", "must be >= 1");
    if (downsample_factor < 2) throw ConfigError("pyramid.downsample_factor", "must be >= 2");
    if (finest.height == 0 || finest.width == 0) throw ConfigError("pyramid.height", "canvas must be nonempty");
    const auto f = static_cast<std::size_t>(downsample_factor);
    CanvasSize size = finest;
    for (int s = levels; s > 1; --s) {
        if (size.height % f != 0 || size.width % f != 0) {
            throw ConfigError("pyramid.downsample_factor",
                              "level " + std::to_string(s) + " canvas " + std::to_string(size.height) +
                                  "x" + std::to_string(size.width) + " not divisible by " +
                                  std::to_string(f));
        }
        size.height /= f;
        size.width /= f;
    }
    if (size.height < window_height || size.width < window_width) {
        throw ConfigError("window.height", "level-1 canvas " + std::to_string(size.height) + "x" +
                                               std::to_string(size.width) + " smaller than window");
    }
}

LatentImage init_noise(const PyramidConfig& pyramid, std::size_t channels, std::uint64_t seed) {
    // mt19937_64 is fully specified; the normal transform below avoids the
    // implementation-defined std::normal_distribution so output is portable.
    std::mt19937_64 rng(seed);
    auto uniform_open = [&rng]() {
        return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
    };
    LatentImage z(channels, pyramid.finest.height, pyramid.finest.width);
    auto out = z.values();
    for (std::size_t i = 0; i < out.size(); i += 2) {
        const double radius = std::sqrt(-2.0 * std::log(uniform_open()));
        const double angle = 2.0 * std::numbers::pi * uniform_open();
        out[i] = radius * std::cos(angle);
        if (i + 1 < out.size()) out[i + 1] = radius * std::sin(angle);
    }
    return z;
}

}  // namespace msd
