#pragma once

#include <cstddef>
#include <vector>

#include "msd/core.hpp"

namespace msd {

struct WindowSpec {
    std::size_t top = 0;
    std::size_t left = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    int level = 1;

    friend bool operator==(const WindowSpec&, const WindowSpec&) = default;
};

// Row-major list of windows over one canvas, plus per-pixel coverage counts.
struct WindowGrid {
    CanvasSize canvas;
    std::vector<WindowSpec> windows;
    std::vector<int> coverage;  // canvas.height * canvas.width

    std::size_t size() const noexcept { return windows.size(); }
    int coverage_at(std::size_t row, std::size_t col) const { return coverage[row * canvas.width + col]; }
};

// Offsets {0, stride, 2*stride, ...}; a boundary-aligned window at H-h (W-w) is appended
// when the stride does not land on it exactly.
WindowGrid build_grid(std::size_t canvas_height, std::size_t canvas_width, std::size_t window_height,
                      std::size_t window_width, std::size_t stride, int level = 1);

enum class WeightKind { uniform, gaussian };

// Per-window h x w merge weights W_i. All windows of one grid share the same shape,
// so one matrix serves every window unless overridden.
class WeightMatrix {
public:
    WeightMatrix() = default;
    WeightMatrix(std::size_t height, std::size_t width, std::vector<double> values);

    static WeightMatrix uniform(std::size_t height, std::size_t width);
    // Separable Gaussian taper: 1 at the window center, `edge_value` at the outermost pixels.
    static WeightMatrix gaussian(std::size_t height, std::size_t width, double edge_value);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    double at(std::size_t row, std::size_t col) const noexcept { return values_[row * width_ + col]; }
    double& at(std::size_t row, std::size_t col) noexcept { return values_[row * width_ + col]; }

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<double> values_;
};

// One weight matrix per window (shared unless a caller perturbs individual entries).
struct MergeWeights {
    std::vector<WeightMatrix> per_window;

    static MergeWeights shared(const WeightMatrix& w, std::size_t window_count);
    const WeightMatrix& operator[](std::size_t i) const { return per_window.at(i); }
};

LatentImage crop(const LatentImage& z, const WindowSpec& win);

// Weighted-sum accumulator for the overlap merge.
struct MergeAccumulator {
    LatentImage numerator;
    std::vector<double> weight_sum;  // H x W, shared across channels

    MergeAccumulator(std::size_t channels, std::size_t height, std::size_t width);
    LatentImage finish() const;
};

void uncrop_accumulate(MergeAccumulator& acc, const LatentImage& patch, const WeightMatrix& weights,
                       const WindowSpec& win);

struct WindowPatch {
    WindowSpec window;
    LatentImage patch;
};

// (sum_i W_i * F_i^-1(patch_i)) / (sum_i W_i), accumulated in list order.
LatentImage md_merge(const std::vector<WindowPatch>& patches, const MergeWeights& weights,
                     std::size_t channels, CanvasSize canvas);

// sum_i sum_pixels W_i * (F_i(z) - patch_i)^2
double md_objective(const LatentImage& z, const std::vector<WindowPatch>& patches,
                    const MergeWeights& weights);
// Gradient of md_objective with respect to z.
LatentImage md_objective_gradient(const LatentImage& z, const std::vector<WindowPatch>& patches,
                                  const MergeWeights& weights);

WindowSpec lowres_window(const WindowSpec& win, int factor);

// factor x factor mean pooling per channel.
LatentImage downsample(const LatentImage& z, int factor);
// Adjoint of downsample: each coarse value spread as value / factor^2 over its block.
LatentImage downsample_transpose(const LatentImage& coarse, int factor);

}  // namespace msd
