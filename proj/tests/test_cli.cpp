#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "msd/io.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "msd_cli_test";

struct Run {
    int code = -1;
    std::string out;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Run run_cli(const std::string& args, const std::string& tag) {
    fs::create_directories(kRoot);
    const auto log = kRoot / (tag + ".log");
    const std::string cmd = std::string("\"") + MSD_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

std::string config(const std::string& name) { return std::string("--config \"") + MSD_CONFIG_DIR + "/" + name + "\""; }

std::string out_dir(const std::string& tag) {
    const auto dir = kRoot / tag;
    fs::remove_all(dir);
    return "--override \"output.dir=" + dir.string() + "\"";
}

std::size_t count_lines(const std::string& text) {
    std::size_t n = 0;
    for (char c : text) n += c == '\n' ? 1 : 0;
    return n;
}

// metric -> value -> summed score over seeds
std::map<std::string, std::map<double, double>> sweep_table(const std::string& csv, std::size_t& rows) {
    std::map<std::string, std::map<double, double>> out;
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    rows = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
        REQUIRE(f.size() == 5);
        out[f[3]][std::stod(f[1])] += std::stod(f[4]);
        ++rows;
    }
    return out;
}

}  // namespace

TEST_CASE("generate writes image, raw dump and one trace line per step") {
    const auto r = run_cli(std::string("generate ") + config("minimal.json") + " " + out_dir("minimal"), "minimal");
    CAPTURE(r.out);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("total = 1") != std::string::npos);
    const auto dir = kRoot / "minimal";
    CHECK(slurp(dir / "panorama.png").substr(1, 3) == "PNG");
    CHECK(count_lines(slurp(dir / "trace.jsonl")) == 10);
    CHECK(msd::read_raw((dir / "panorama.msd").string()).height() == 32);
    CHECK(fs::exists(dir / "metrics.json"));
    CHECK(slurp(dir / "metrics.csv").rfind("metric,value,count\r\n", 0) == 0);
}

TEST_CASE("omega=0 reproduces the unguided run byte for byte") {
    const std::string base = std::string("generate ") + config("desk.json") + " --override schedule.steps=12 ";
    REQUIRE(run_cli(base + "--override omega=0 " + out_dir("omega0"), "omega0").code == 0);
    REQUIRE(run_cli(base + "--override tau_fraction=1 " + out_dir("tau1"), "tau1").code == 0);
    REQUIRE(run_cli(base + out_dir("guided"), "guided").code == 0);
    const auto a = slurp(kRoot / "omega0" / "panorama.msd");
    CHECK(a.size() == 16 + 8 * 64 * 256);
    CHECK(a == slurp(kRoot / "tau1" / "panorama.msd"));
    CHECK(a != slurp(kRoot / "guided" / "panorama.msd"));
}

TEST_CASE("repeated runs are byte-identical") {
    const std::string base = std::string("generate ") + config("desk.json") + " --override schedule.steps=12 ";
    REQUIRE(run_cli(base + out_dir("rep_a"), "rep_a").code == 0);
    REQUIRE(run_cli(base + "--override workers=3 " + out_dir("rep_b"), "rep_b").code == 0);
    CHECK(slurp(kRoot / "rep_a" / "panorama.msd") == slurp(kRoot / "rep_b" / "panorama.msd"));
    CHECK(slurp(kRoot / "rep_a" / "panorama.png") == slurp(kRoot / "rep_b" / "panorama.png"));
}

TEST_CASE("paper geometry reports 45 + 7 windows") {
    const auto r = run_cli(std::string("generate ") + config("wide.json") +
                           " --override schedule.steps=3 " + out_dir("paper"),
                       "paper");
    CAPTURE(r.out);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("level 1 = 7; level 2 = 45; total = 52") != std::string::npos);
}

TEST_CASE("configuration errors exit with code 2 and name the key") {
    const auto bad = run_cli(std::string("generate ") + config("minimal.json") + " --override guidance.omgea=3", "badkey");
    CHECK(bad.code == 2);
    CHECK(bad.out.find("guidance.omgea") != std::string::npos);
    CHECK(run_cli("generate --config /nonexistent/cfg.json", "missing").code == 2);
    CHECK(run_cli("frobnicate", "badcmd").code == 2);
    CHECK(run_cli(std::string("sweep ") + config("minimal.json") + " --param gamma --values 1", "badparam").code == 2);
}

TEST_CASE("verify passes and its corruption hook fails") {
    const auto ok = run_cli("verify", "verify");
    CAPTURE(ok.out);
    CHECK(ok.code == 0);
    CHECK(ok.out.find("merge_argmin") != std::string::npos);
    const auto broken = run_cli("verify --corrupt-merge-weights", "verify_bad");
    CHECK(broken.code == 1);
    CHECK(broken.out.find("merge_argmin") != std::string::npos);
}

TEST_CASE("omega sweep writes one row per run and metric") {
    const auto csv = kRoot / "sweep_omega.csv";
    const auto r = run_cli(std::string("sweep ") + config("desk.json") +
                           " --override schedule.steps=10 --param omega --values 0,10 --seeds 0,1,2 --no-frechet --out \"" +
                           csv.string() + "\"",
                       "sweep_omega");
    CAPTURE(r.out);
    REQUIRE(r.code == 0);
    std::size_t rows = 0;
    const auto table = sweep_table(slurp(csv), rows);
    CHECK(rows == 6 * table.size());
    CHECK(table.count("layout_coherence") == 1);
    CHECK(table.count("cross_scale_consistency") == 1);
    CHECK(table.count("seam_energy") == 1);
    CHECK(slurp(csv).rfind("param,value,seed,metric,score\r\n", 0) == 0);
}

TEST_CASE("tau sweep: guidance invocations scale with the guided fraction") {
    const auto csv = kRoot / "sweep_tau.csv";
    const auto r = run_cli(std::string("sweep ") + config("desk.json") +
                           " --param tau_fraction --values 0,0.7,1 --seeds 4 --no-frechet --out \"" + csv.string() + "\"",
                       "sweep_tau");
    CAPTURE(r.out);
    REQUIRE(r.code == 0);
    std::size_t rows = 0;
    const auto table = sweep_table(slurp(csv), rows);
    const auto& inv = table.at("guidance_invocations");
    CHECK(inv.at(0.0) == 50 * 45);
    CHECK(inv.at(0.7) == 15 * 45);
    CHECK(inv.at(1.0) == 0);
}
