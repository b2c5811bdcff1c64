#include "msd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <sstream>

namespace msd {

double seam_energy(const LatentImage& z, const WindowGrid& grid) {
    if (z.height() != grid.canvas.height || z.width() != grid.canvas.width) {
        throw ContractViolation("seam_energy: grid does not match canvas");
    }
    const std::size_t H = z.height();
    const std::size_t W = z.width();
    std::vector<char> boundary_row(H + 1, 0);
    std::vector<char> boundary_col(W + 1, 0);
    for (const auto& w : grid.windows) {
        boundary_row[w.top] = 1;
        boundary_row[w.top + w.height] = 1;
        boundary_col[w.left] = 1;
        boundary_col[w.left + w.width] = 1;
    }

    double seam_sum = 0.0;
    double other_sum = 0.0;
    std::size_t seam_count = 0;
    std::size_t other_count = 0;
    auto add = [&](bool seam, double d) {
        if (seam) {
            seam_sum += d * d;
            ++seam_count;
        } else {
            other_sum += d * d;
            ++other_count;
        }
    };
    for (std::size_t c = 0; c < z.channels(); ++c) {
        for (std::size_t r = 0; r < H; ++r) {
            for (std::size_t col = 1; col < W; ++col) add(boundary_col[col] != 0, z.at(c, r, col) - z.at(c, r, col - 1));
        }
        for (std::size_t r = 1; r < H; ++r) {
            for (std::size_t col = 0; col < W; ++col) add(boundary_row[r] != 0, z.at(c, r, col) - z.at(c, r - 1, col));
        }
    }
    const double seam = seam_count ? seam_sum / static_cast<double>(seam_count) : 0.0;
    const double other = other_count ? other_sum / static_cast<double>(other_count) : 0.0;
    return seam_count ? seam - other : 0.0;
}

double cross_scale_consistency(const LatentImage& z_fine, const LatentImage& z_ref, int factor) {
    LatentImage z = z_fine;
    while (z.height() > z_ref.height() && z.width() > z_ref.width()) z = downsample(z, factor);
    if (!z.same_shape(z_ref)) throw ContractViolation("cross_scale_consistency: shapes not related by the pyramid");
    LatentImage diff = z;
    diff.axpy(-1.0, z_ref);
    return squared_norm(diff) / static_cast<double>(diff.size());
}

LayoutEstimate layout_coherence(const LatentImage& z, const HorizonScene& scene) {
    const std::size_t H = z.height();
    LayoutEstimate est;
    for (std::size_t col = 0; col < z.width(); ++col) {
        bool finite = true;
        for (std::size_t c = 0; c < z.channels() && finite; ++c) {
            for (std::size_t r = 0; r < H; ++r) finite = finite && std::isfinite(z.at(c, r, col));
        }
        if (!finite) {
            ++est.excluded_columns;
            continue;
        }
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_row = 0;
        for (std::size_t horizon = 0; horizon <= H; ++horizon) {
            double cost = 0.0;
            for (std::size_t c = 0; c < z.channels(); ++c) {
                for (std::size_t r = 0; r < H; ++r) {
                    const double d = z.at(c, r, col) - scene.value(r, col, horizon, H);
                    cost += d * d;
                }
            }
            if (cost < best) {
                best = cost;
                best_row = horizon;
            }
        }
        est.rows.push_back(static_cast<double>(best_row));
    }
    if (est.rows.empty()) return est;
    double mean = 0.0;
    for (double r : est.rows) mean += r;
    mean /= static_cast<double>(est.rows.size());
    double var = 0.0;
    for (double r : est.rows) var += (r - mean) * (r - mean);
    est.variance = var / static_cast<double>(est.rows.size());
    return est;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(0.5 * (m + m.transpose()));
    Eigen::VectorXd ev = solver.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) ev[i] = ev[i] < 0.0 ? 0.0 : std::sqrt(ev[i]);
    return solver.eigenvectors() * ev.asDiagonal() * solver.eigenvectors().transpose();
}

double min_eigenvalue(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    return solver.eigenvalues().minCoeff();
}

std::uint64_t content_hash(const LatentImage& img) {
    std::uint64_t h = 1469598103934665603ull;
    for (double v : img.data()) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        h ^= bits;
        h *= 1099511628211ull;
    }
    return h;
}

void moments(const Eigen::MatrixXd& samples, Eigen::VectorXd& mean, Eigen::MatrixXd& cov) {
    mean = samples.colwise().mean().transpose();
    const Eigen::MatrixXd centered = samples.rowwise() - mean.transpose();
    const double denom = samples.rows() > 1 ? static_cast<double>(samples.rows() - 1) : 1.0;
    cov = centered.transpose() * centered / denom;
}

}  // namespace

FrechetResult frechet_distance(const Eigen::VectorXd& mean_a, const Eigen::MatrixXd& cov_a,
                               const Eigen::VectorXd& mean_b, const Eigen::MatrixXd& cov_b) {
    if (mean_a.size() != mean_b.size() || cov_a.rows() != mean_a.size() || cov_b.rows() != mean_b.size()) {
        throw ContractViolation("frechet_distance: dimension mismatch");
    }
    FrechetResult out;
    Eigen::MatrixXd a = cov_a;
    Eigen::MatrixXd b = cov_b;
    if (min_eigenvalue(a) < 1e-8 || min_eigenvalue(b) < 1e-8) {
        const auto eye = Eigen::MatrixXd::Identity(a.rows(), a.cols());
        a += 1e-6 * eye;
        b += 1e-6 * eye;
        out.regularized = true;
    }
    // tr (A B)^(1/2) = tr (A^(1/2) B A^(1/2))^(1/2), the inner product being symmetric PSD.
    const Eigen::MatrixXd root_a = psd_sqrt(a);
    const Eigen::MatrixXd cross = psd_sqrt(root_a * b * root_a);
    out.distance = (mean_a - mean_b).squaredNorm() + a.trace() + b.trace() - 2.0 * cross.trace();
    return out;
}

Eigen::MatrixXd sample_patches(const std::vector<LatentImage>& images, std::size_t patch, std::size_t total,
                               std::uint64_t seed) {
    if (images.empty()) throw ContractViolation("sample_patches: empty image set");
    if (patch == 0 || total == 0) throw ContractViolation("sample_patches: patch size and count must be positive");
    const std::size_t per_image = (total + images.size() - 1) / images.size();
    const std::size_t channels = images.front().channels();
    const auto dim = static_cast<Eigen::Index>(channels * patch * patch);

    // Images are visited in content-hash order so the sample matrix is order independent.
    std::vector<std::pair<std::uint64_t, const LatentImage*>> order;
    for (const auto& img : images) {
        if (img.height() < patch || img.width() < patch || img.channels() != channels) {
            throw ContractViolation("sample_patches: image too small or channel mismatch");
        }
        order.emplace_back(content_hash(img), &img);
    }
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

    Eigen::MatrixXd out(static_cast<Eigen::Index>(per_image * images.size()), dim);
    Eigen::Index row = 0;
    for (const auto& [hash, img] : order) {
        std::mt19937_64 rng(seed ^ hash);
        for (std::size_t k = 0; k < per_image; ++k, ++row) {
            const std::size_t top = rng() % (img->height() - patch + 1);
            const std::size_t left = rng() % (img->width() - patch + 1);
            Eigen::Index j = 0;
            for (std::size_t c = 0; c < channels; ++c) {
                for (std::size_t r = 0; r < patch; ++r) {
                    for (std::size_t col = 0; col < patch; ++col) out(row, j++) = img->at(c, top + r, left + col);
                }
            }
        }
    }
    return out;
}

FrechetResult frechet_patch_distance(const std::vector<LatentImage>& set_a, const std::vector<LatentImage>& set_b,
                                     std::size_t patch, std::size_t patches_per_set, std::uint64_t seed) {
    if (set_a.empty() || set_b.empty()) throw ContractViolation("frechet_patch_distance: empty set");
    const auto a = sample_patches(set_a, patch, patches_per_set, seed);
    const auto b = sample_patches(set_b, patch, patches_per_set, seed);
    Eigen::VectorXd mean_a, mean_b;
    Eigen::MatrixXd cov_a, cov_b;
    moments(a, mean_a, cov_a);
    moments(b, mean_b, cov_b);
    auto out = frechet_distance(mean_a, cov_a, mean_b, cov_b);
    out.samples_a = static_cast<std::size_t>(a.rows());
    out.samples_b = static_cast<std::size_t>(b.rows());
    return out;
}

void MetricReport::add(std::string name, double value, std::size_t count) {
    if (!std::isfinite(value)) throw ContractViolation("metric '" + name + "' is not finite");
    if (count == 0) throw ContractViolation("metric '" + name + "' has zero samples");
    metrics.push_back({std::move(name), value, count});
}

const MetricEntry* MetricReport::find(const std::string& name) const {
    for (const auto& m : metrics) {
        if (m.name == name) return &m;
    }
    return nullptr;
}

nlohmann::json MetricReport::to_json() const {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& m : metrics) items.push_back({{"name", m.name}, {"value", m.value}, {"count", m.count}});
    return {{"metrics", items}, {"config_digest", config_digest}, {"seeds", seeds}, {"notes", notes}};
}

std::string csv_field(const std::string& text) {
    if (text.find_first_of(",\"\r\n") == std::string::npos) return text;
    std::string out = "\"";
    for (char ch : text) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

std::string MetricReport::to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "metric,value,count\r\n";
    for (const auto& m : metrics) out << csv_field(m.name) << ',' << m.value << ',' << m.count << "\r\n";
    return out.str();
}

}  // namespace msd
