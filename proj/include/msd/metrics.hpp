#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "msd/core.hpp"
#include "msd/denoiser.hpp"
#include "msd/tiling.hpp"

namespace msd {

// Mean squared neighbor difference across window boundaries minus the same mean over
// all other neighbor pairs. Zero for seamless images.
double seam_energy(const LatentImage& z, const WindowGrid& grid);

// MSE between z_fine pushed down the mean-pool chain and z_ref.
double cross_scale_consistency(const LatentImage& z_fine, const LatentImage& z_ref, int factor);

struct LayoutEstimate {
    double variance = 0.0;           // pixels^2
    std::vector<double> rows;        // per included column
    std::size_t excluded_columns = 0;
};

// Per column, the horizon row r in [0, H] whose rendered scene column best matches z
// (least squares); returns the variance of those rows across columns.
LayoutEstimate layout_coherence(const LatentImage& z, const HorizonScene& scene);

struct FrechetResult {
    double distance = 0.0;
    bool regularized = false;
    std::size_t samples_a = 0;
    std::size_t samples_b = 0;
};

// ||mu_a - mu_b||^2 + tr(cov_a + cov_b - 2 (cov_a cov_b)^(1/2))
FrechetResult frechet_distance(const Eigen::VectorXd& mean_a, const Eigen::MatrixXd& cov_a,
                               const Eigen::VectorXd& mean_b, const Eigen::MatrixXd& cov_b);

// Flattened p x p (x channels) patches; each image contributes the same number of patches
// at positions drawn from a stream seeded by `seed` and the image content, so the result
// does not depend on image order.
Eigen::MatrixXd sample_patches(const std::vector<LatentImage>& images, std::size_t patch, std::size_t total,
                               std::uint64_t seed);

FrechetResult frechet_patch_distance(const std::vector<LatentImage>& set_a, const std::vector<LatentImage>& set_b,
                                     std::size_t patch = 8, std::size_t patches_per_set = 10000,
                                     std::uint64_t seed = 0);

struct MetricEntry {
    std::string name;
    double value = 0.0;
    std::size_t count = 1;
};

struct MetricReport {
    std::vector<MetricEntry> metrics;
    std::string config_digest;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> notes;

    void add(std::string name, double value, std::size_t count = 1);
    const MetricEntry* find(const std::string& name) const;

    nlohmann::json to_json() const;
    // Header "metric,value,count", one row per metric.
    std::string to_csv() const;
};

// RFC 4180 field quoting.
std::string csv_field(const std::string& text);

}  // namespace msd
