#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "msd/errors.hpp"

namespace msd {

// C x H x W real grid stored channel-major, then row, then column.
class LatentImage {
public:
    LatentImage() = default;
    LatentImage(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0);
    LatentImage(std::size_t channels, std::size_t height, std::size_t width, std::vector<double> data);

    std::size_t channels() const noexcept { return channels_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& at(std::size_t c, std::size_t row, std::size_t col) noexcept {
        return data_[(c * height_ + row) * width_ + col];
    }
    double at(std::size_t c, std::size_t row, std::size_t col) const noexcept {
        return data_[(c * height_ + row) * width_ + col];
    }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    bool same_shape(const LatentImage& other) const noexcept {
        return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
    }
    bool all_finite() const noexcept;

    // this += alpha * other
    void axpy(double alpha, const LatentImage& other);
    void scale(double alpha) noexcept;

    friend bool operator==(const LatentImage&, const LatentImage&) = default;

private:
    std::size_t channels_ = 0;
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<double> data_;
};

double max_abs_diff(const LatentImage& a, const LatentImage& b);
double squared_norm(const LatentImage& x) noexcept;
double dot(const LatentImage& a, const LatentImage& b);

// Cumulative signal fractions alpha_bar[0..T] of a variance-preserving forward process.
class NoiseSchedule {
public:
    explicit NoiseSchedule(std::vector<double> alpha_bar);

    int total_steps() const noexcept { return static_cast<int>(alpha_bar_.size()) - 1; }
    double alpha_bar(int t) const;
    std::span<const double> alpha_bars() const noexcept { return alpha_bar_; }

private:
    std::vector<double> alpha_bar_;
};

NoiseSchedule build_schedule(int total_steps, double beta_min, double beta_max);

enum class DecayRule { none, scaled_cosine };
enum class GradMode { exact_vjp, finite_difference };

// (1 + cos((T - t) / T * pi)) / 2 under scaled_cosine, 1 otherwise.
double decay_factor(int t, int total_steps, DecayRule decay);

struct GuidanceConfig {
    double omega = 10.0;
    DecayRule decay = DecayRule::scaled_cosine;
    double tau_fraction = 0.7;
    int grad_steps = 1;
    GradMode grad_mode = GradMode::exact_vjp;
    // Treat the predicted noise as constant when differentiating the one-step denoise.
    bool stop_gradient = false;

    void validate() const;
    // Guidance runs iff t > floor(tau_fraction * T).
    bool active(int t, int total_steps) const;
    double weight(int t, int total_steps) const { return omega * decay_factor(t, total_steps, decay); }
};

struct CanvasSize {
    std::size_t height = 0;
    std::size_t width = 0;
    friend bool operator==(const CanvasSize&, const CanvasSize&) = default;
};

// Levels are numbered 1 (coarsest) .. S (finest, the output canvas).
struct PyramidConfig {
    int levels = 2;
    int downsample_factor = 2;
    CanvasSize finest{64, 256};
    // Multiply each downsampled canvas by the factor so white noise keeps unit variance.
    bool renormalize_variance = false;

    CanvasSize canvas(int level) const;
    void validate(std::size_t window_height, std::size_t window_width) const;
};

LatentImage init_noise(const PyramidConfig& pyramid, std::size_t channels, std::uint64_t seed);

}  // namespace msd
