#include "msd/tiling.hpp"

#include <cmath>
#include <string>

namespace msd {

namespace {

std::vector<std::size_t> axis_offsets(std::size_t extent, std::size_t window, std::size_t stride) {
    std::vector<std::size_t> offsets;
    for (std::size_t o = 0; o + window <= extent; o += stride) offsets.push_back(o);
    if (offsets.back() != extent - window) offsets.push_back(extent - window);
    return offsets;
}

std::string shape_string(const LatentImage& z) {
    return std::to_string(z.channels()) + "x" + std::to_string(z.height()) + "x" + std::to_string(z.width());
}

}  // namespace

WindowGrid build_grid(std::size_t canvas_height, std::size_t canvas_width, std::size_t window_height,
                      std::size_t window_width, std::size_t stride, int level) {
    if (window_height == 0 || window_width == 0) throw ConfigError("window.height", "window must be nonempty");
    if (window_height > canvas_height || window_width > canvas_width) {
        throw ConfigError("window.height", "window " + std::to_string(window_height) + "x" +
                                               std::to_string(window_width) + " larger than canvas " +
                                               std::to_string(canvas_height) + "x" +
                                               std::to_string(canvas_width));
    }
    if (stride == 0) throw ConfigError("window.stride", "must be >= 1");

    WindowGrid grid;
    grid.canvas = {canvas_height, canvas_width};
    grid.coverage.assign(canvas_height * canvas_width, 0);
    for (std::size_t top : axis_offsets(canvas_height, window_height, stride)) {
        for (std::size_t left : axis_offsets(canvas_width, window_width, stride)) {
            grid.windows.push_back({top, left, window_height, window_width, level});
            for (std::size_t r = top; r < top + window_height; ++r) {
                for (std::size_t c = left; c < left + window_width; ++c) ++grid.coverage[r * canvas_width + c];
            }
        }
    }
    return grid;
}

WeightMatrix::WeightMatrix(std::size_t height, std::size_t width, std::vector<double> values)
    : height_(height), width_(width), values_(std::move(values)) {
    if (values_.size() != height * width) throw ContractViolation("WeightMatrix: size mismatch");
    bool any_positive = false;
    for (double v : values_) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("window.weights", "weights must be finite and >= 0");
        any_positive = any_positive || v > 0.0;
    }
    if (!any_positive) throw ConfigError("window.weights", "weight matrix has no positive entry");
}

WeightMatrix WeightMatrix::uniform(std::size_t height, std::size_t width) {
    return WeightMatrix(height, width, std::vector<double>(height * width, 1.0));
}

WeightMatrix WeightMatrix::gaussian(std::size_t height, std::size_t width, double edge_value) {
    if (!(edge_value > 0.0 && edge_value <= 1.0)) {
        throw ConfigError("window.weights.edge_value", "must lie in (0, 1]");
    }
    auto profile = [edge_value](std::size_t n) {
        std::vector<double> p(n, 1.0);
        const double center = (static_cast<double>(n) - 1.0) / 2.0;
        if (center <= 0.0) return p;
        // exp(-d^2 / (2 s^2)) == edge_value at d == center
        const double inv_two_s2 = -std::log(edge_value) / (center * center);
        for (std::size_t i = 0; i < n; ++i) {
            const double d = static_cast<double>(i) - center;
            p[i] = std::exp(-d * d * inv_two_s2);
        }
        return p;
    };
    const auto rows = profile(height);
    const auto cols = profile(width);
    std::vector<double> values(height * width);
    for (std::size_t r = 0; r < height; ++r) {
        for (std::size_t c = 0; c < width; ++c) values[r * width + c] = std::sqrt(rows[r] * cols[c]);
    }
    return WeightMatrix(height, width, std::move(values));
}

MergeWeights MergeWeights::shared(const WeightMatrix& w, std::size_t window_count) {
    return MergeWeights{std::vector<WeightMatrix>(window_count, w)};
}

LatentImage crop(const LatentImage& z, const WindowSpec& win) {
    if (win.height == 0 || win.width == 0 || win.top + win.height > z.height() ||
        win.left + win.width > z.width()) {
        throw ContractViolation("crop: window (" + std::to_string(win.top) + "," + std::to_string(win.left) +
                                "," + std::to_string(win.height) + "," + std::to_string(win.width) +
                                ") outside canvas " + shape_string(z));
    }
    LatentImage out(z.channels(), win.height, win.width);
    for (std::size_t c = 0; c < z.channels(); ++c) {
        for (std::size_t r = 0; r < win.height; ++r) {
            for (std::size_t col = 0; col < win.width; ++col) {
                out.at(c, r, col) = z.at(c, win.top + r, win.left + col);
            }
        }
    }
    return out;
}

MergeAccumulator::MergeAccumulator(std::size_t channels, std::size_t height, std::size_t width)
    : numerator(channels, height, width), weight_sum(height * width, 0.0) {}

LatentImage MergeAccumulator::finish() const {
    LatentImage out(numerator.channels(), numerator.height(), numerator.width());
    const std::size_t w = numerator.width();
    for (std::size_t r = 0; r < numerator.height(); ++r) {
        for (std::size_t col = 0; col < w; ++col) {
            const double denom = weight_sum[r * w + col];
            if (!(denom > 0.0)) throw CoverageError(r, col);
            for (std::size_t c = 0; c < numerator.channels(); ++c) {
                out.at(c, r, col) = numerator.at(c, r, col) / denom;
            }
        }
    }
    return out;
}

void uncrop_accumulate(MergeAccumulator& acc, const LatentImage& patch, const WeightMatrix& weights,
                       const WindowSpec& win) {
    if (patch.height() != win.height || patch.width() != win.width ||
        patch.channels() != acc.numerator.channels()) {
        throw ContractViolation("uncrop_accumulate: patch " + shape_string(patch) + " does not match window");
    }
    if (weights.height() != win.height || weights.width() != win.width) {
        throw ContractViolation("uncrop_accumulate: weight matrix does not match window");
    }
    if (win.top + win.height > acc.numerator.height() || win.left + win.width > acc.numerator.width()) {
        throw ContractViolation("uncrop_accumulate: window outside canvas");
    }
    const std::size_t canvas_w = acc.numerator.width();
    for (std::size_t r = 0; r < win.height; ++r) {
        for (std::size_t col = 0; col < win.width; ++col) {
            const double w = weights.at(r, col);
            acc.weight_sum[(win.top + r) * canvas_w + win.left + col] += w;
            for (std::size_t c = 0; c < patch.channels(); ++c) {
                acc.numerator.at(c, win.top + r, win.left + col) += w * patch.at(c, r, col);
            }
        }
    }
}

LatentImage md_merge(const std::vector<WindowPatch>& patches, const MergeWeights& weights,
                     std::size_t channels, CanvasSize canvas) {
    if (weights.per_window.size() != patches.size()) {
        throw ContractViolation("md_merge: " + std::to_string(patches.size()) + " patches but " +
                                std::to_string(weights.per_window.size()) + " weight matrices");
    }
    MergeAccumulator acc(channels, canvas.height, canvas.width);
    for (std::size_t i = 0; i < patches.size(); ++i) {
        uncrop_accumulate(acc, patches[i].patch, weights[i], patches[i].window);
    }
    return acc.finish();
}

double md_objective(const LatentImage& z, const std::vector<WindowPatch>& patches,
                    const MergeWeights& weights) {
    double total = 0.0;
    for (std::size_t i = 0; i < patches.size(); ++i) {
        const auto& [win, patch] = patches[i];
        for (std::size_t c = 0; c < z.channels(); ++c) {
            for (std::size_t r = 0; r < win.height; ++r) {
                for (std::size_t col = 0; col < win.width; ++col) {
                    const double d = z.at(c, win.top + r, win.left + col) - patch.at(c, r, col);
                    total += weights[i].at(r, col) * d * d;
                }
            }
        }
    }
    return total;
}

LatentImage md_objective_gradient(const LatentImage& z, const std::vector<WindowPatch>& patches,
                                  const MergeWeights& weights) {
    LatentImage grad(z.channels(), z.height(), z.width());
    for (std::size_t i = 0; i < patches.size(); ++i) {
        const auto& [win, patch] = patches[i];
        for (std::size_t c = 0; c < z.channels(); ++c) {
            for (std::size_t r = 0; r < win.height; ++r) {
                for (std::size_t col = 0; col < win.width; ++col) {
                    const double d = z.at(c, win.top + r, win.left + col) - patch.at(c, r, col);
                    grad.at(c, win.top + r, win.left + col) += 2.0 * weights[i].at(r, col) * d;
                }
            }
        }
    }
    return grad;
}

WindowSpec lowres_window(const WindowSpec& win, int factor) {
    if (factor < 1) throw ContractViolation("lowres_window: factor must be >= 1");
    const auto f = static_cast<std::size_t>(factor);
    if (win.top % f || win.left % f || win.height % f || win.width % f) {
        throw ConfigError("window.stride", "window geometry not divisible by downsample factor " +
                                               std::to_string(factor));
    }
    return {win.top / f, win.left / f, win.height / f, win.width / f, win.level - 1};
}

LatentImage downsample(const LatentImage& z, int factor) {
    if (factor < 1) throw ContractViolation("downsample: factor must be >= 1");
    const auto f = static_cast<std::size_t>(factor);
    if (z.height() % f || z.width() % f) {
        throw ContractViolation("downsample: " + shape_string(z) + " not divisible by " + std::to_string(f));
    }
    LatentImage out(z.channels(), z.height() / f, z.width() / f);
    const double inv_area = 1.0 / static_cast<double>(f * f);
    for (std::size_t c = 0; c < z.channels(); ++c) {
        for (std::size_t r = 0; r < out.height(); ++r) {
            for (std::size_t col = 0; col < out.width(); ++col) {
                double s = 0.0;
                for (std::size_t dr = 0; dr < f; ++dr) {
                    for (std::size_t dc = 0; dc < f; ++dc) s += z.at(c, r * f + dr, col * f + dc);
                }
                out.at(c, r, col) = s * inv_area;
            }
        }
    }
    return out;
}

LatentImage downsample_transpose(const LatentImage& coarse, int factor) {
    if (factor < 1) throw ContractViolation("downsample_transpose: factor must be >= 1");
    const auto f = static_cast<std::size_t>(factor);
    LatentImage out(coarse.channels(), coarse.height() * f, coarse.width() * f);
    const double inv_area = 1.0 / static_cast<double>(f * f);
    for (std::size_t c = 0; c < out.channels(); ++c) {
        for (std::size_t r = 0; r < out.height(); ++r) {
            for (std::size_t col = 0; col < out.width(); ++col) {
                out.at(c, r, col) = coarse.at(c, r / f, col / f) * inv_area;
            }
        }
    }
    return out;
}

}  // namespace msd
