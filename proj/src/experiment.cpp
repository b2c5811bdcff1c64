#include "msd/experiment.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <mutex>
#include <sstream>

#include "msd/io.hpp"

namespace msd {

namespace {

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

}  // namespace

std::vector<LatentImage> reference_samples(const RunConfig& config, const Denoiser& denoiser, std::size_t count,
                                           std::uint64_t seed) {
    PyramidConfig single;
    single.levels = 1;
    single.finest = {config.window.height, config.window.width};
    const auto schedule = config.noise_schedule();
    std::vector<LatentImage> out;
    for (std::size_t i = 0; i < count; ++i) {
        auto x = init_noise(single, config.channels, seed + i);
        for (int t = schedule.total_steps(); t >= 1; --t) {
            x = phi_step(x, t, ConditionId{config.condition}, denoiser, schedule);
        }
        out.push_back(std::move(x));
    }
    return out;
}

MetricReport run_metrics(const RunConfig& config, const SampleResult& result,
                         const std::vector<LatentImage>* reference) {
    MetricReport report;
    report.config_digest = config_digest(config);
    report.seeds = {config.seed};
    const auto& z = result.final_canvas;
    if (config.denoiser.kind == DenoiserKind::scene) {
        const auto est = layout_coherence(z, config.denoiser.classes.at(config.condition).scene);
        if (!est.rows.empty()) report.add("layout_coherence", est.variance, est.rows.size());
        if (est.excluded_columns) {
            report.notes.push_back(std::to_string(est.excluded_columns) + " columns excluded from layout_coherence");
        }
    }
    if (config.pyramid.levels >= 2 && !result.level_outputs.empty()) {
        report.add("cross_scale_consistency",
                   cross_scale_consistency(z, result.level_outputs.front(), config.pyramid.downsample_factor),
                   result.level_outputs.front().size());
    }
    const auto finest = config.pyramid.finest;
    const auto grid = build_grid(finest.height, finest.width, config.window.height, config.window.width,
                                 config.window.stride, config.pyramid.levels);
    report.add("seam_energy", seam_energy(z, grid), z.size());
    std::size_t invocations = 0;
    for (const auto& tr : result.traces) invocations += tr.guidance_invocations;
    report.add("guidance_invocations", static_cast<double>(invocations), result.traces.size());
    if (reference) {
        const auto fpd = frechet_patch_distance({z}, *reference, 8, 10000, config.seed);
        report.add("frechet_patch_distance", fpd.distance, fpd.samples_a);
        if (fpd.regularized) report.notes.push_back("frechet_patch_distance: covariance regularized by 1e-6 I");
    }
    return report;
}

GenerateSummary generate(const RunConfig& config) {
    const auto denoiser = make_denoiser(config);
    MultiScaleSampler sampler(config.sampler_options(), *denoiser, config.noise_schedule());

    GenerateSummary summary;
    for (int s = 1; s <= config.pyramid.levels; ++s) summary.windows_per_level.push_back(sampler.grid(s).size());
    summary.total_windows = sampler.total_windows();

    std::string trace_text;
    const auto result = sampler.sample(config.seed, ConditionId{config.condition},
                                       [&trace_text](const StepTrace& tr) { trace_text += trace_line(tr); });
    for (const auto& tr : result.traces) summary.guidance_invocations += tr.guidance_invocations;

    const auto& dir = config.output.dir;
    summary.image_path = join_path(dir, config.output.image);
    summary.raw_path = join_path(dir, config.output.raw);
    summary.trace_path = join_path(dir, config.output.trace);
    summary.metrics_path = join_path(dir, "metrics.json");
    write_png(summary.image_path, result.final_canvas);
    write_raw(summary.raw_path, result.final_canvas);
    write_file_atomic(summary.trace_path, trace_text);

    const auto report = run_metrics(config, result);
    write_file_atomic(summary.metrics_path, report.to_json().dump(2) + "\n");
    write_file_atomic(join_path(dir, "metrics.csv"), report.to_csv());
    return summary;
}

void SweepSpec::validate() const {
    if (values.empty()) throw ConfigError("sweep.values", "must be nonempty");
    if (seeds.empty()) throw ConfigError("sweep.seeds", "must be >= 1");
}

SweepParam parse_sweep_param(const std::string& name) {
    if (name == "omega") return SweepParam::omega;
    if (name == "tau_fraction") return SweepParam::tau_fraction;
    throw ConfigError("sweep.param", "unknown sweep parameter '" + name + "' (expected omega or tau_fraction)");
}

std::string to_string(SweepParam param) { return param == SweepParam::omega ? "omega" : "tau_fraction"; }

RunConfig with_param(RunConfig config, SweepParam param, double value) {
    if (param == SweepParam::omega) {
        config.guidance.omega = value;
    } else {
        config.guidance.tau_fraction = value;
    }
    config.guidance.validate();
    return config;
}

std::string SweepResult::to_csv() const {
    std::ostringstream out;
    out << "param,value,seed,metric,score\r\n";
    const auto name = to_string(param);
    for (const auto& row : rows) {
        out << name << ',' << format_double(row.value) << ',' << row.seed << ',' << csv_field(row.metric) << ','
            << format_double(row.score) << "\r\n";
    }
    return out.str();
}

std::optional<double> SweepResult::mean(double value, const std::string& metric) const {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& row : rows) {
        if (row.value == value && row.metric == metric) {
            total += row.score;
            ++n;
        }
    }
    if (n == 0) return std::nullopt;
    return total / static_cast<double>(n);
}

SweepResult run_sweep(const RunConfig& base, const SweepSpec& spec, unsigned workers, bool with_frechet) {
    spec.validate();
    const auto denoiser = make_denoiser(base);
    std::vector<LatentImage> reference;
    if (with_frechet) reference = reference_samples(base, *denoiser, 64, 0x5eed);

    const std::size_t runs = spec.values.size() * spec.seeds.size();
    std::vector<std::vector<SweepRow>> per_run(runs);
    std::vector<std::string> errors(runs);
    parallel_for(runs, workers, [&](std::size_t k) {
        const double value = spec.values[k / spec.seeds.size()];
        const std::uint64_t seed = spec.seeds[k % spec.seeds.size()];
        try {
            auto cfg = with_param(base, spec.param, value);
            cfg.seed = seed;
            cfg.workers = 1;
            MultiScaleSampler sampler(cfg.sampler_options(), *denoiser, cfg.noise_schedule());
            const auto result = sampler.sample(seed, ConditionId{cfg.condition});
            const auto report = run_metrics(cfg, result, with_frechet ? &reference : nullptr);
            for (const auto& m : report.metrics) per_run[k].push_back({value, seed, m.name, m.value});
        } catch (const std::exception& e) {
            per_run[k] = {{value, seed, "aborted", 1.0}};
            errors[k] = to_string(spec.param) + "=" + format_double(value) + " seed=" + std::to_string(seed) + ": " +
                        e.what();
        }
    });

    SweepResult out;
    out.param = spec.param;
    out.runs = runs;
    for (std::size_t k = 0; k < runs; ++k) {
        out.rows.insert(out.rows.end(), per_run[k].begin(), per_run[k].end());
        if (!errors[k].empty()) out.errors.push_back(errors[k]);
    }
    return out;
}

}  // namespace msd
