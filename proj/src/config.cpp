#include "msd/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace msd {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Reads fields of one JSON object, remembering which keys were consumed.
class ObjectReader {
public:
    ObjectReader(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
        if (!doc_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    template <typename T>
    void read(const std::string& key, T& out) {
        seen_.insert(key);
        auto it = doc_.find(key);
        if (it == doc_.end()) return;
        try {
            out = it->template get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(join(path_, key), std::string("wrong type: ") + e.what());
        }
    }

    const json* child(const std::string& key) {
        seen_.insert(key);
        auto it = doc_.find(key);
        return it == doc_.end() ? nullptr : &*it;
    }

    std::string path_of(const std::string& key) const { return join(path_, key); }

    void finish() const {
        for (const auto& item : doc_.items()) {
            if (!seen_.contains(item.key())) throw ConfigError(join(path_, item.key()), "unknown key");
        }
    }

private:
    const json& doc_;
    std::string path_;
    std::set<std::string> seen_;
};

template <typename Enum>
Enum parse_enum(const std::string& key, const std::string& text,
                std::initializer_list<std::pair<const char*, Enum>> names) {
    for (const auto& [name, value] : names) {
        if (text == name) return value;
    }
    std::string allowed;
    for (const auto& [name, value] : names) allowed += (allowed.empty() ? "" : ", ") + std::string(name);
    throw ConfigError(key, "unknown value '" + text + "' (expected one of: " + allowed + ")");
}

void read_scene_class(const json& doc, const std::string& path, SceneClassConfig& out) {
    ObjectReader r(doc, path);
    std::string family = "horizon";
    r.read("family", family);
    if (family != "horizon") throw ConfigError(r.path_of("family"), "only the 'horizon' family is available");
    r.read("horizon_rows", out.horizon_rows);
    r.read("sky", out.scene.sky);
    r.read("ground", out.scene.ground);
    r.read("sky_gradient", out.scene.sky_gradient);
    r.read("stripe_period", out.scene.stripe_period);
    r.read("stripe_amplitude", out.scene.stripe_amplitude);
    r.finish();
    if (out.horizon_rows.empty()) throw ConfigError(r.path_of("horizon_rows"), "must be nonempty");
}

}  // namespace

RunConfig run_config_from_json(const json& doc) {
    RunConfig cfg;
    ObjectReader root(doc, "");

    if (const json* p = root.child("pyramid")) {
        ObjectReader r(*p, "pyramid");
        r.read("levels", cfg.pyramid.levels);
        r.read("downsample_factor", cfg.pyramid.downsample_factor);
        r.read("height", cfg.pyramid.finest.height);
        r.read("width", cfg.pyramid.finest.width);
        r.read("renormalize_variance", cfg.pyramid.renormalize_variance);
        r.finish();
    }
    if (const json* p = root.child("schedule")) {
        ObjectReader r(*p, "schedule");
        r.read("steps", cfg.schedule.steps);
        r.read("beta_min", cfg.schedule.beta_min);
        r.read("beta_max", cfg.schedule.beta_max);
        r.finish();
    }
    if (const json* p = root.child("window")) {
        ObjectReader r(*p, "window");
        r.read("height", cfg.window.height);
        r.read("width", cfg.window.width);
        r.read("stride", cfg.window.stride);
        r.read("boundary_aligned", cfg.window.boundary_aligned);
        std::string weights = "uniform";
        r.read("weights", weights);
        cfg.window.weights = parse_enum<WeightKind>(r.path_of("weights"), weights,
                                                    {{"uniform", WeightKind::uniform}, {"gaussian", WeightKind::gaussian}});
        r.read("gaussian_edge", cfg.window.gaussian_edge);
        r.finish();
    }
    if (const json* p = root.child("guidance")) {
        ObjectReader r(*p, "guidance");
        r.read("omega", cfg.guidance.omega);
        std::string decay = "scaled_cosine";
        r.read("decay", decay);
        cfg.guidance.decay = parse_enum<DecayRule>(r.path_of("decay"), decay,
                                                   {{"none", DecayRule::none}, {"scaled_cosine", DecayRule::scaled_cosine}});
        r.read("tau_fraction", cfg.guidance.tau_fraction);
        r.read("grad_steps", cfg.guidance.grad_steps);
        std::string mode = "exact_vjp";
        r.read("grad_mode", mode);
        cfg.guidance.grad_mode = parse_enum<GradMode>(
            r.path_of("grad_mode"), mode,
            {{"exact_vjp", GradMode::exact_vjp}, {"finite_difference", GradMode::finite_difference}});
        r.read("stop_gradient", cfg.guidance.stop_gradient);
        r.finish();
    }
    if (const json* p = root.child("denoiser")) {
        ObjectReader r(*p, "denoiser");
        std::string kind = "scene";
        r.read("kind", kind);
        cfg.denoiser.kind = parse_enum<DenoiserKind>(r.path_of("kind"), kind,
                                                     {{"scene", DenoiserKind::scene}, {"gmm_random", DenoiserKind::gmm_random}});
        r.read("variance", cfg.denoiser.variance);
        r.read("patch_stride", cfg.denoiser.patch_stride);
        if (const json* classes = r.child("classes")) {
            if (!classes->is_array()) throw ConfigError("denoiser.classes", "expected an array");
            cfg.denoiser.classes.clear();
            for (std::size_t i = 0; i < classes->size(); ++i) {
                SceneClassConfig cls;
                read_scene_class((*classes)[i], "denoiser.classes[" + std::to_string(i) + "]", cls);
                cfg.denoiser.classes.push_back(std::move(cls));
            }
        }
        r.read("components", cfg.denoiser.components);
        r.read("condition_count", cfg.denoiser.condition_count);
        r.read("mean_scale", cfg.denoiser.mean_scale);
        r.read("prior_seed", cfg.denoiser.prior_seed);
        r.finish();
    }
    root.read("channels", cfg.channels);
    root.read("seed", cfg.seed);
    root.read("condition", cfg.condition);
    root.read("workers", cfg.workers);
    if (const json* p = root.child("output")) {
        ObjectReader r(*p, "output");
        r.read("dir", cfg.output.dir);
        r.read("image", cfg.output.image);
        r.read("raw", cfg.output.raw);
        r.read("trace", cfg.output.trace);
        r.finish();
    }
    root.finish();
    cfg.validate();
    return cfg;
}

json to_json(const RunConfig& cfg) {
    json classes = json::array();
    for (const auto& c : cfg.denoiser.classes) {
        classes.push_back({{"family", "horizon"},
                           {"horizon_rows", c.horizon_rows},
                           {"sky", c.scene.sky},
                           {"ground", c.scene.ground},
                           {"sky_gradient", c.scene.sky_gradient},
                           {"stripe_period", c.scene.stripe_period},
                           {"stripe_amplitude", c.scene.stripe_amplitude}});
    }
    return {
        {"pyramid",
         {{"levels", cfg.pyramid.levels},
          {"downsample_factor", cfg.pyramid.downsample_factor},
          {"height", cfg.pyramid.finest.height},
          {"width", cfg.pyramid.finest.width},
          {"renormalize_variance", cfg.pyramid.renormalize_variance}}},
        {"schedule",
         {{"steps", cfg.schedule.steps}, {"beta_min", cfg.schedule.beta_min}, {"beta_max", cfg.schedule.beta_max}}},
        {"window",
         {{"height", cfg.window.height},
          {"width", cfg.window.width},
          {"stride", cfg.window.stride},
          {"boundary_aligned", cfg.window.boundary_aligned},
          {"weights", cfg.window.weights == WeightKind::uniform ? "uniform" : "gaussian"},
          {"gaussian_edge", cfg.window.gaussian_edge}}},
        {"guidance",
         {{"omega", cfg.guidance.omega},
          {"decay", cfg.guidance.decay == DecayRule::none ? "none" : "scaled_cosine"},
          {"tau_fraction", cfg.guidance.tau_fraction},
          {"grad_steps", cfg.guidance.grad_steps},
          {"grad_mode", cfg.guidance.grad_mode == GradMode::exact_vjp ? "exact_vjp" : "finite_difference"},
          {"stop_gradient", cfg.guidance.stop_gradient}}},
        {"denoiser",
         {{"kind", cfg.denoiser.kind == DenoiserKind::scene ? "scene" : "gmm_random"},
          {"variance", cfg.denoiser.variance},
          {"patch_stride", cfg.denoiser.patch_stride},
          {"classes", classes},
          {"components", cfg.denoiser.components},
          {"condition_count", cfg.denoiser.condition_count},
          {"mean_scale", cfg.denoiser.mean_scale},
          {"prior_seed", cfg.denoiser.prior_seed}}},
        {"channels", cfg.channels},
        {"seed", cfg.seed},
        {"condition", cfg.condition},
        {"workers", cfg.workers},
        {"output",
         {{"dir", cfg.output.dir}, {"image", cfg.output.image}, {"raw", cfg.output.raw}, {"trace", cfg.output.trace}}},
    };
}

void RunConfig::validate() const {
    if (channels == 0) throw ConfigError("channels", "must be >= 1");
    if (window.stride == 0) throw ConfigError("window.stride", "must be >= 1");
    if (!(denoiser.variance > 0.0)) throw ConfigError("denoiser.variance", "must be > 0");
    if (denoiser.kind == DenoiserKind::scene) {
        if (denoiser.classes.empty()) throw ConfigError("denoiser.classes", "must be nonempty");
        if (condition >= denoiser.classes.size()) throw ConfigError("condition", "no such scene class");
        for (std::size_t i = 0; i < denoiser.classes.size(); ++i) {
            for (auto row : denoiser.classes[i].horizon_rows) {
                if (row > pyramid.finest.height) {
                    throw ConfigError("denoiser.classes[" + std::to_string(i) + "].horizon_rows",
                                      "row " + std::to_string(row) + " below the canvas");
                }
            }
        }
    } else {
        if (denoiser.components == 0) throw ConfigError("denoiser.components", "must be >= 1");
        if (condition >= denoiser.condition_count) throw ConfigError("condition", "no such condition");
    }
    guidance.validate();
    validate_sampler_options(sampler_options());
    noise_schedule();
}

SamplerOptions RunConfig::sampler_options() const {
    return SamplerOptions{pyramid, window, guidance, channels, workers};
}

NoiseSchedule RunConfig::noise_schedule() const {
    return build_schedule(schedule.steps, schedule.beta_min, schedule.beta_max);
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config", std::string("parse error: ") + e.what());
    }
    return run_config_from_json(doc);
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError(assignment, "override must have the form key=value");
    }
    std::string key = assignment.substr(0, eq);
    if (key == "omega" || key == "tau_fraction") key = "guidance." + key;
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &doc;
    std::stringstream parts(key);
    std::string part;
    std::vector<std::string> path;
    while (std::getline(parts, part, '.')) {
        if (part.empty()) throw ConfigError(key, "empty path component");
        path.push_back(part);
    }
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        if (!node->is_object()) throw ConfigError(key, "'" + path[i] + "' is not an object");
        node = &(*node)[path[i]];
        if (node->is_null()) *node = json::object();
    }
    if (!node->is_object()) throw ConfigError(key, "parent is not an object");
    (*node)[path.back()] = std::move(value);
}

std::string config_digest(const RunConfig& config) {
    const std::string text = to_json(config).dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::vector<std::vector<LatentImage>> scene_templates(const RunConfig& config) {
    std::vector<std::vector<LatentImage>> out;
    for (const auto& cls : config.denoiser.classes) {
        std::vector<LatentImage> group;
        for (auto row : cls.horizon_rows) group.push_back(cls.scene.render(config.channels, config.pyramid.finest, row));
        out.push_back(std::move(group));
    }
    return out;
}

std::unique_ptr<GmmDenoiser> make_denoiser(const RunConfig& config) {
    if (config.denoiser.kind == DenoiserKind::scene) {
        return make_scene_denoiser(scene_templates(config), config.window.height, config.window.width,
                                   config.denoiser.patch_stride, config.denoiser.variance, config.noise_schedule());
    }
    std::vector<GmmPrior> priors;
    for (std::size_t c = 0; c < config.denoiser.condition_count; ++c) {
        priors.push_back(random_gmm_prior(config.denoiser.components, config.channels, config.window.height,
                                          config.window.width, config.denoiser.variance, config.denoiser.mean_scale,
                                          config.denoiser.prior_seed + c));
    }
    return std::make_unique<GmmDenoiser>(config.noise_schedule(), std::move(priors));
}

}  // namespace msd
