#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msd/config.hpp"
#include "msd/metrics.hpp"
#include "msd/sampling.hpp"

namespace msd {

// Single-window samples of the base denoiser, used as the reference set for the
// Frechet patch distance.
std::vector<LatentImage> reference_samples(const RunConfig& config, const Denoiser& denoiser, std::size_t count,
                                           std::uint64_t seed);

// layout_coherence (scene denoisers), cross_scale_consistency (S >= 2), seam_energy,
// guidance_invocations and, when `reference` is given, frechet_patch_distance.
MetricReport run_metrics(const RunConfig& config, const SampleResult& result,
                         const std::vector<LatentImage>* reference = nullptr);

struct GenerateSummary {
    std::vector<std::size_t> windows_per_level;
    std::size_t total_windows = 0;
    std::size_t guidance_invocations = 0;
    std::string image_path;
    std::string raw_path;
    std::string trace_path;
    std::string metrics_path;
};

// Runs sample() and writes image, raw dump, trace lines and metric report.
GenerateSummary generate(const RunConfig& config);

enum class SweepParam { omega, tau_fraction };

struct SweepSpec {
    SweepParam param = SweepParam::omega;
    std::vector<double> values;
    std::vector<std::uint64_t> seeds;

    void validate() const;
};

SweepParam parse_sweep_param(const std::string& name);
std::string to_string(SweepParam param);
RunConfig with_param(RunConfig config, SweepParam param, double value);

struct SweepRow {
    double value = 0.0;
    std::uint64_t seed = 0;
    std::string metric;
    double score = 0.0;
};

struct SweepResult {
    SweepParam param = SweepParam::omega;
    std::vector<SweepRow> rows;     // ordered by (value index, seed index, metric)
    std::vector<std::string> errors;  // one message per aborted run
    std::size_t runs = 0;

    // param,value,seed,metric,score
    std::string to_csv() const;
    // Mean of `metric` over seeds for one swept value.
    std::optional<double> mean(double value, const std::string& metric) const;
};

// Every (value, seed) run is independent; `workers` runs execute concurrently.
SweepResult run_sweep(const RunConfig& base, const SweepSpec& spec, unsigned workers = 0,
                      bool with_frechet = true);

}  // namespace msd
