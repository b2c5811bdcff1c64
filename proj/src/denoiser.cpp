#include "msd/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace msd {

LatentImage Denoiser::vjp(const LatentImage&, int, ConditionId, const LatentImage&) const {
    throw ContractViolation("denoiser does not provide a vector-Jacobian product; use finite_difference");
}

void GmmPrior::validate() const {
    if (means.empty()) throw ConfigError("denoiser", "mixture needs at least one component");
    if (weights.size() != means.size() || variances.size() != means.size()) {
        throw ConfigError("denoiser", "mixture weights/means/variances length mismatch");
    }
    double total = 0.0;
    for (std::size_t k = 0; k < means.size(); ++k) {
        if (!(weights[k] > 0.0)) throw ConfigError("denoiser", "mixture weights must be positive");
        if (!(variances[k] > 0.0)) throw ConfigError("denoiser", "component variances must be positive");
        if (!means[k].same_shape(means[0])) throw ConfigError("denoiser", "component means differ in shape");
        total += weights[k];
    }
    if (std::abs(total - 1.0) > 1e-12) throw ConfigError("denoiser", "mixture weights must sum to 1");
}

namespace {

void check_alpha_bar(double alpha_bar) {
    if (!(alpha_bar > 0.0 && alpha_bar < 1.0)) {
        throw ContractViolation("GMM denoiser needs 0 < alpha_bar < 1 (timestep t >= 1)");
    }
}

void check_shape(const LatentImage& x, const GmmPrior& prior) {
    if (!x.same_shape(prior.means.front())) throw ContractViolation("GMM denoiser: input shape does not match prior");
}

struct ComponentTerms {
    std::vector<double> resp;
    std::vector<double> var;    // alpha_bar sigma^2 + 1 - alpha_bar
    std::vector<double> gain;   // sqrt(alpha_bar) sigma^2 / var
};

ComponentTerms component_terms(const LatentImage& x, double alpha_bar, const GmmPrior& prior) {
    const double sa = std::sqrt(alpha_bar);
    const std::size_t K = prior.size();
    const auto d = static_cast<double>(x.size());
    ComponentTerms terms{std::vector<double>(K), std::vector<double>(K), std::vector<double>(K)};
    std::vector<double> logit(K);
    for (std::size_t k = 0; k < K; ++k) {
        const double v = alpha_bar * prior.variances[k] + 1.0 - alpha_bar;
        terms.var[k] = v;
        terms.gain[k] = sa * prior.variances[k] / v;
        double dist2 = 0.0;
        const auto mu = prior.means[k].values();
        const auto xs = x.values();
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double r = xs[i] - sa * mu[i];
            dist2 += r * r;
        }
        logit[k] = std::log(prior.weights[k]) - 0.5 * d * std::log(v) - 0.5 * dist2 / v;
    }
    const double top = *std::max_element(logit.begin(), logit.end());
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        terms.resp[k] = std::exp(logit[k] - top);
        total += terms.resp[k];
    }
    for (double& r : terms.resp) r /= total;
    return terms;
}

LatentImage noise_from_mean(const LatentImage& x, const LatentImage& mean, double alpha_bar) {
    const double sa = std::sqrt(alpha_bar);
    const double inv_sn = 1.0 / std::sqrt(1.0 - alpha_bar);
    LatentImage eps = x;
    auto e = eps.values();
    const auto m = mean.values();
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = (e[i] - sa * m[i]) * inv_sn;
    return eps;
}

}  // namespace

GmmPosterior gmm_posterior(const LatentImage& x, double alpha_bar, const GmmPrior& prior) {
    check_alpha_bar(alpha_bar);
    check_shape(x, prior);
    const double sa = std::sqrt(alpha_bar);
    auto terms = component_terms(x, alpha_bar, prior);

    // sum_k r_k (mu_k + c_k (x - sa mu_k)) = (sum_k r_k c_k) x + sum_k r_k (1 - c_k sa) mu_k
    double x_coeff = 0.0;
    LatentImage mean(x.channels(), x.height(), x.width());
    for (std::size_t k = 0; k < prior.size(); ++k) {
        x_coeff += terms.resp[k] * terms.gain[k];
        mean.axpy(terms.resp[k] * (1.0 - terms.gain[k] * sa), prior.means[k]);
    }
    mean.axpy(x_coeff, x);
    return {std::move(terms.resp), std::move(mean)};
}

LatentImage gmm_predict_noise(const LatentImage& x, double alpha_bar, const GmmPrior& prior) {
    const auto post = gmm_posterior(x, alpha_bar, prior);
    return noise_from_mean(x, post.mean, alpha_bar);
}

LatentImage gmm_vjp(const LatentImage& x, double alpha_bar, const GmmPrior& prior, const LatentImage& cotangent) {
    check_alpha_bar(alpha_bar);
    check_shape(x, prior);
    if (!cotangent.same_shape(x)) throw ContractViolation("gmm_vjp: cotangent shape mismatch");
    const double sa = std::sqrt(alpha_bar);
    const auto terms = component_terms(x, alpha_bar, prior);
    const std::size_t K = prior.size();

    // J_m = sum_k r_k c_k I + sum_k r_k m_k (g_k - g_bar)^T,  g_k = -(x - sa mu_k) / v_k
    // J_m^T u = (sum_k r_k c_k) u + sum_k r_k (a_k - a_bar) g_k,  a_k = m_k . u
    const double xu = dot(x, cotangent);
    std::vector<double> a(K);
    double a_bar = 0.0;
    double diag = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        const double mu_u = dot(prior.means[k], cotangent);
        a[k] = mu_u + terms.gain[k] * (xu - sa * mu_u);
        a_bar += terms.resp[k] * a[k];
        diag += terms.resp[k] * terms.gain[k];
    }
    LatentImage jm_t_u = cotangent;
    jm_t_u.scale(diag);
    double x_coeff = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        const double w = terms.resp[k] * (a[k] - a_bar) / terms.var[k];
        if (w == 0.0) continue;
        x_coeff -= w;
        jm_t_u.axpy(w * sa, prior.means[k]);
    }
    jm_t_u.axpy(x_coeff, x);

    // eps = (x - sa m(x)) / sqrt(1 - ab)  =>  J_eps^T u = (u - sa J_m^T u) / sqrt(1 - ab)
    LatentImage out = cotangent;
    out.axpy(-sa, jm_t_u);
    out.scale(1.0 / std::sqrt(1.0 - alpha_bar));
    return out;
}

GmmDenoiser::GmmDenoiser(NoiseSchedule schedule, std::vector<GmmPrior> priors)
    : schedule_(std::move(schedule)), priors_(std::move(priors)) {
    if (priors_.empty()) throw ConfigError("denoiser", "need at least one condition");
    for (const auto& p : priors_) p.validate();
}

const GmmPrior& GmmDenoiser::prior(ConditionId condition) const {
    if (condition.value >= priors_.size()) {
        throw ContractViolation("condition " + std::to_string(condition.value) + " out of range (" +
                                std::to_string(priors_.size()) + " classes)");
    }
    return priors_[condition.value];
}

double GmmDenoiser::alpha_bar_for(int t) const {
    if (t < 1) throw ContractViolation("denoiser called at t=" + std::to_string(t));
    return schedule_.alpha_bar(t);
}

LatentImage GmmDenoiser::predict_noise(const LatentImage& x, int t, ConditionId condition) const {
    return gmm_predict_noise(x, alpha_bar_for(t), prior(condition));
}

LatentImage GmmDenoiser::vjp(const LatentImage& x, int t, ConditionId condition,
                             const LatentImage& cotangent) const {
    return gmm_vjp(x, alpha_bar_for(t), prior(condition), cotangent);
}

GmmPrior random_gmm_prior(std::size_t components, std::size_t channels, std::size_t height, std::size_t width,
                          double variance, double mean_scale, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, mean_scale);
    GmmPrior prior;
    for (std::size_t k = 0; k < components; ++k) {
        LatentImage mu(channels, height, width);
        for (double& v : mu.values()) v = normal(rng);
        prior.means.push_back(std::move(mu));
        prior.variances.push_back(variance);
    }
    prior.weights.assign(components, 1.0 / static_cast<double>(components));
    return prior;
}

double HorizonScene::value(std::size_t row, std::size_t col, std::size_t horizon_row,
                           std::size_t canvas_height) const {
    if (row < horizon_row) {
        return sky + sky_gradient * static_cast<double>(horizon_row - row) / static_cast<double>(canvas_height);
    }
    double v = ground;
    if (stripe_period > 0) {
        v += (col / stripe_period) % 2 == 0 ? stripe_amplitude : -stripe_amplitude;
    }
    return v;
}

LatentImage HorizonScene::render(std::size_t channels, CanvasSize canvas, std::size_t horizon_row) const {
    LatentImage out(channels, canvas.height, canvas.width);
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t r = 0; r < canvas.height; ++r) {
            for (std::size_t col = 0; col < canvas.width; ++col) {
                out.at(c, r, col) = value(r, col, horizon_row, canvas.height);
            }
        }
    }
    return out;
}

std::unique_ptr<GmmDenoiser> make_scene_denoiser(const std::vector<std::vector<LatentImage>>& templates,
                                                 std::size_t window_height, std::size_t window_width,
                                                 std::size_t patch_stride, double variance,
                                                 NoiseSchedule schedule) {
    if (templates.empty()) throw ConfigError("denoiser.classes", "no scene templates");
    if (patch_stride == 0) throw ConfigError("denoiser.patch_stride", "must be >= 1");
    auto offsets = [patch_stride](std::size_t extent, std::size_t window) {
        std::vector<std::size_t> out;
        for (std::size_t o = 0; o + window <= extent; o += patch_stride) out.push_back(o);
        if (out.back() != extent - window) out.push_back(extent - window);
        return out;
    };

    std::vector<GmmPrior> priors;
    for (std::size_t cls = 0; cls < templates.size(); ++cls) {
        const auto& group = templates[cls];
        if (group.empty()) {
            throw ConfigError("denoiser.classes[" + std::to_string(cls) + "]", "class has no templates");
        }
        std::vector<std::vector<double>> patches;
        std::size_t channels = group.front().channels();
        for (const auto& tmpl : group) {
            if (tmpl.height() < window_height || tmpl.width() < window_width) {
                throw ConfigError("denoiser.classes[" + std::to_string(cls) + "]", "template smaller than window");
            }
            for (std::size_t top : offsets(tmpl.height(), window_height)) {
                for (std::size_t left : offsets(tmpl.width(), window_width)) {
                    std::vector<double> p;
                    p.reserve(channels * window_height * window_width);
                    for (std::size_t c = 0; c < channels; ++c) {
                        for (std::size_t r = 0; r < window_height; ++r) {
                            for (std::size_t col = 0; col < window_width; ++col) {
                                p.push_back(tmpl.at(c, top + r, left + col));
                            }
                        }
                    }
                    patches.push_back(std::move(p));
                }
            }
        }
        std::sort(patches.begin(), patches.end());
        patches.erase(std::unique(patches.begin(), patches.end()), patches.end());

        GmmPrior prior;
        for (auto& p : patches) {
            prior.means.emplace_back(channels, window_height, window_width, std::move(p));
            prior.variances.push_back(variance);
        }
        prior.weights.assign(prior.means.size(), 1.0 / static_cast<double>(prior.means.size()));
        priors.push_back(std::move(prior));
    }
    return std::make_unique<GmmDenoiser>(std::move(schedule), std::move(priors));
}

}  // namespace msd
