// msd: multi-scale joint-diffusion panorama sampler.
//
//   msd generate --config run.json [--override guidance.omega=0 ...]
//   msd sweep --config run.json --param omega --values 0,5,10 --seeds 0,1,2 --out sweep.csv
//   msd verify

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "msd/config.hpp"
#include "msd/errors.hpp"
#include "msd/experiment.hpp"
#include "msd/io.hpp"
#include "msd/verify.hpp"

namespace {

constexpr int kExitVerifyFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

msd::RunConfig load_with_overrides(const std::string& path, const std::vector<std::string>& overrides) {
    nlohmann::json doc = nlohmann::json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw msd::ConfigError("--config", "cannot open '" + path + "'");
        try {
            doc = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw msd::ConfigError("--config", std::string("parse error: ") + e.what());
        }
    }
    for (const auto& o : overrides) msd::apply_override(doc, o);
    return msd::run_config_from_json(doc);
}

int cmd_generate(const std::string& config_path, const std::vector<std::string>& overrides) {
    const auto config = load_with_overrides(config_path, overrides);
    const auto summary = msd::generate(config);
    std::cout << "windows:";
    for (std::size_t s = 0; s < summary.windows_per_level.size(); ++s) {
        std::cout << " level " << s + 1 << " = " << summary.windows_per_level[s] << ";";
    }
    std::cout << " total = " << summary.total_windows << "\n"
              << "guidance invocations: " << summary.guidance_invocations << "\n"
              << "image: " << summary.image_path << "\n"
              << "raw: " << summary.raw_path << "\n"
              << "trace: " << summary.trace_path << "\n"
              << "metrics: " << summary.metrics_path << "\n";
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::vector<std::string>& overrides, const std::string& param,
              const std::vector<double>& values, std::vector<std::uint64_t> seeds, std::size_t seed_count,
              const std::string& out_path, unsigned workers, bool frechet) {
    const auto base = load_with_overrides(config_path, overrides);
    msd::SweepSpec spec;
    spec.param = msd::parse_sweep_param(param);
    spec.values = values;
    if (seeds.empty()) {
        for (std::size_t i = 0; i < seed_count; ++i) seeds.push_back(base.seed + i);
    }
    spec.seeds = std::move(seeds);
    const auto result = msd::run_sweep(base, spec, workers, frechet);
    msd::write_file_atomic(out_path, result.to_csv());

    std::set<std::string> metrics;
    for (const auto& row : result.rows) metrics.insert(row.metric);
    for (double v : spec.values) {
        std::cout << param << "=" << v;
        for (const auto& m : metrics) {
            if (const auto mean = result.mean(v, m)) std::cout << "  " << m << "=" << *mean;
        }
        std::cout << "\n";
    }
    std::cout << result.runs << " runs, " << result.rows.size() << " rows -> " << out_path << "\n";
    for (const auto& e : result.errors) std::cerr << "aborted: " << e << "\n";
    return result.errors.empty() ? 0 : kExitNumerical;
}

int cmd_verify(bool corrupt) {
    msd::VerifyOptions options;
    options.corrupt_merge_weights = corrupt;
    const auto report = msd::run_verification(options);
    std::cout << report.table();
    if (!report.all_passed()) {
        std::cerr << "failed checks:";
        for (const auto& c : report.checks) {
            if (!c.passed) std::cerr << " " << c.name;
        }
        std::cerr << "\n";
        return kExitVerifyFailed;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-scale joint-diffusion panorama sampler"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;

    auto* gen = app.add_subcommand("generate", "Sample one panorama and write image, raw dump, trace and metrics");
    gen->add_option("-c,--config", config_path, "JSON run configuration");
    gen->add_option("-o,--override", overrides, "Dotted key=value override, e.g. guidance.omega=0");

    std::string param = "omega";
    std::vector<double> values;
    std::vector<std::uint64_t> seeds;
    std::size_t seed_count = 3;
    std::string out_path = "sweep.csv";
    unsigned workers = 0;
    bool no_frechet = false;
    auto* sweep = app.add_subcommand("sweep", "Run generate over a grid of omega or tau_fraction values and seeds");
    sweep->add_option("-c,--config", config_path, "JSON run configuration");
    sweep->add_option("-o,--override", overrides, "Dotted key=value override");
    sweep->add_option("--param", param, "omega or tau_fraction");
    sweep->add_option("--values", values, "Comma-separated values")->delimiter(',')->required();
    sweep->add_option("--seeds", seeds, "Comma-separated seeds")->delimiter(',');
    sweep->add_option("--seed-count", seed_count, "Seeds base.seed .. base.seed+n-1 when --seeds is absent");
    sweep->add_option("--out", out_path, "Long-format CSV output");
    sweep->add_option("--workers", workers, "Concurrent runs (0 = core count)");
    sweep->add_flag("--no-frechet", no_frechet, "Skip the Frechet patch distance");

    bool corrupt = false;
    auto* verify = app.add_subcommand("verify", "Run the built-in oracle checks");
    verify->add_flag("--corrupt-merge-weights", corrupt, "Test hook: perturb merge weights (must fail)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (gen->parsed()) return cmd_generate(config_path, overrides);
        if (sweep->parsed()) {
            return cmd_sweep(config_path, overrides, param, values, seeds, seed_count, out_path, workers, !no_frechet);
        }
        if (verify->parsed()) return cmd_verify(corrupt);
    } catch (const msd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const msd::NumericalError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return 0;
}
