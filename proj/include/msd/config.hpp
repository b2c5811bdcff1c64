#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msd/core.hpp"
#include "msd/denoiser.hpp"
#include "msd/sampling.hpp"

namespace msd {

struct ScheduleParams {
    int steps = 50;
    double beta_min = 0.002;
    double beta_max = 0.3;
};

// One scene class: a horizon family rendered at several horizon rows.
struct SceneClassConfig {
    HorizonScene scene{1.0, -1.0, 1.0, 8, 0.3};
    std::vector<std::size_t> horizon_rows{24, 32, 40};
};

enum class DenoiserKind { scene, gmm_random };

struct DenoiserConfig {
    DenoiserKind kind = DenoiserKind::scene;
    double variance = 0.01;
    // scene
    std::size_t patch_stride = 4;
    std::vector<SceneClassConfig> classes{SceneClassConfig{}};
    // gmm_random
    std::size_t components = 4;
    std::size_t condition_count = 1;
    double mean_scale = 1.0;
    std::uint64_t prior_seed = 0;
};

struct OutputPaths {
    std::string dir = ".";
    std::string image = "panorama.png";
    std::string raw = "panorama.msd";
    std::string trace = "trace.jsonl";
};

struct RunConfig {
    PyramidConfig pyramid;
    ScheduleParams schedule;
    WindowLayout window{32, 32, 16};
    GuidanceConfig guidance;
    DenoiserConfig denoiser;
    std::size_t channels = 1;
    std::uint64_t seed = 0;
    std::size_t condition = 0;
    unsigned workers = 0;
    OutputPaths output;

    // Cross-field checks; throws ConfigError naming the offending key.
    void validate() const;
    SamplerOptions sampler_options() const;
    NoiseSchedule noise_schedule() const;
};

// Strict parse: unknown keys and wrong types raise ConfigError with the dotted key path.
RunConfig run_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const RunConfig& config);

RunConfig load_run_config(const std::string& path);

// Applies "a.b.c=value" (value parsed as JSON, falling back to a string) onto `doc`.
// "omega" and "tau_fraction" are shorthands for their guidance.* keys.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Hex FNV-1a digest of the canonical JSON form.
std::string config_digest(const RunConfig& config);

// Scene templates per condition at the finest canvas size.
std::vector<std::vector<LatentImage>> scene_templates(const RunConfig& config);
std::unique_ptr<GmmDenoiser> make_denoiser(const RunConfig& config);

}  // namespace msd
