#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "doctest.h"
#include "rkld/config.hpp"
#include "rkld/manifest.hpp"

#ifndef RKLD_CLI_PATH
#error "RKLD_CLI_PATH must point at the rkld binary"
#endif

namespace fs = std::filesystem;

namespace {

const char* kConfig =
    "[objective]\n"
    "loss = logistic\n"
    "dataset = classification\n"
    "n_train = 10\n"
    "[chain]\n"
    "eta = 0.01\n"
    "beta = 4\n"
    "lambda = 0.5\n"
    "n_modes = 8\n"
    "seed = 3\n"
    "horizon = 100\n"
    "[experiment]\n"
    "m_list = 2, 5, 10\n"
    "replicas = 8\n";

struct Sandbox {
    fs::path dir;
    explicit Sandbox(const std::string& name) : dir(fs::temp_directory_path() / ("rkld_cli_" + name)) {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Sandbox() { fs::remove_all(dir); }
    fs::path write(const std::string& file, const std::string& text) const {
        std::ofstream(dir / file) << text;
        return dir / file;
    }
};

int cli(const std::string& args, const fs::path& log = "/dev/null") {
    const std::string cmd = std::string(RKLD_CLI_PATH) + " " + args + " >" + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string h12(const std::string& text) { return rkld::short_hash(rkld::config_hash(text)); }

}  // namespace

TEST_CASE("run writes hashed outputs deterministically") {
    Sandbox sb("run");
    const fs::path cfg = sb.write("c.ini", kConfig);
    const std::string h = h12(kConfig);
    REQUIRE(cli("run --config " + cfg.string() + " --out " + (sb.dir / "a").string()) == 0);
    REQUIRE(cli("run --config " + cfg.string() + " --out " + (sb.dir / "b").string()) == 0);
    for (const std::string f : {"trajectory_", "summary_"}) {
        const std::string name = f + h + ".csv";
        CHECK(fs::exists(sb.dir / "a" / name));
        CHECK(slurp(sb.dir / "a" / name) == slurp(sb.dir / "b" / name));
    }
    CHECK(fs::exists(sb.dir / "a" / ("checkpoint_" + h + ".bin")));
    CHECK(fs::exists(sb.dir / "a" / ("manifest_" + h + ".json")));
    // One header plus one row per step: cadence is 1 below 1000 steps.
    const std::string traj = slurp(sb.dir / "a" / ("trajectory_" + h + ".csv"));
    CHECK(std::count(traj.begin(), traj.end(), '\n') == 101);
    CHECK(traj.rfind("step,norm,risk,reg_objective,phi,cesaro_phi\n", 0) == 0);
}

TEST_CASE("RKLD_OUT and --seed") {
    Sandbox sb("seed");
    const fs::path cfg = sb.write("c.ini", kConfig);
    const std::string env = "RKLD_OUT=" + (sb.dir / "env").string() + " ";
    const std::string cmd = std::string("env ") + env + RKLD_CLI_PATH + " run --config " + cfg.string() + " >/dev/null 2>&1";
    REQUIRE(std::system(cmd.c_str()) == 0);
    CHECK(fs::exists(sb.dir / "env" / ("trajectory_" + h12(kConfig) + ".csv")));
    REQUIRE(cli("run --seed 11 --config " + cfg.string() + " --out " + sb.dir.string()) == 0);
    const std::string seeded = rkld::short_hash(rkld::config_hash(std::string(kConfig) + "\n--seed=11\n"));
    CHECK(seeded != h12(kConfig));
    CHECK(fs::exists(sb.dir / ("trajectory_" + seeded + ".csv")));
}

TEST_CASE("config errors exit 1 before simulating") {
    Sandbox sb("errors");
    std::string zero = kConfig;
    zero.replace(zero.find("horizon = 100"), 13, "horizon = 0");
    const fs::path p = sb.write("zero.ini", zero);
    CHECK(cli("run --config " + p.string() + " --out " + sb.dir.string(), sb.dir / "log.txt") == 1);
    CHECK(slurp(sb.dir / "log.txt").find("zero.ini:11:") != std::string::npos);
    CHECK(std::distance(fs::directory_iterator(sb.dir), fs::directory_iterator{}) == 2);

    std::string beta = kConfig;
    beta.replace(beta.find("beta = 4"), 8, "beta = 0.001");
    CHECK(cli("verify --config " + sb.write("beta.ini", beta).string() + " --out " + sb.dir.string()) == 1);
    CHECK(cli("run --config " + (sb.dir / "missing.ini").string()) == 1);
    CHECK(cli("run") == 1);
    CHECK(cli("frobnicate") == 1);
    CHECK(cli("sweep --axis sideways --config " + p.string()) == 1);
}

TEST_CASE("numerical abort exits 2") {
    Sandbox sb("abort");
    std::string text = kConfig;
    text.replace(text.find("loss = logistic"), 15, "loss = squared");
    text.replace(text.find("dataset = classification"), 24, "dataset = regression");
    text += "[chain]\n";  // duplicate section headers merge
    text.replace(text.find("horizon = 100"), 13, "horizon = 100\nx0 = 1e300");
    text.replace(text.find("eta = 0.01"), 10, "eta = 0.9");
    text.replace(text.find("lambda = 0.5"), 12, "lambda = 1e-6");
    const fs::path p = sb.write("abort.ini", text);
    CHECK(cli("run --config " + p.string() + " --out " + sb.dir.string()) == 2);
}

TEST_CASE("verify passes on a healthy config and fails on a slow eigenvalue decay") {
    Sandbox sb("verify");
    const fs::path good = sb.write("good.ini", kConfig);
    CHECK(cli("verify --threads 1 --config " + good.string() + " --out " + sb.dir.string(), sb.dir / "v.txt") == 0);
    const std::string out = slurp(sb.dir / "v.txt");
    CHECK(out.find("PASS ") != std::string::npos);
    CHECK(out.find("FAIL ") == std::string::npos);
    CHECK(fs::exists(sb.dir / ("verify_" + h12(kConfig) + ".txt")));

    const std::string lin = std::string("[kernel]\ndecay = inverse_linear\n") + kConfig;
    const fs::path bad = sb.write("bad.ini", lin);
    CHECK(cli("verify --threads 1 --config " + bad.string() + " --out " + sb.dir.string(), sb.dir / "b.txt") == 4);
    CHECK(slurp(sb.dir / "b.txt").find("FAIL assumptions.eigenvalue_decay") != std::string::npos);
}

TEST_CASE("minibatch sweep ends at an exact zero") {
    Sandbox sb("sweep");
    const fs::path cfg = sb.write("c.ini", kConfig);
    const int code = cli("sweep --axis minibatch --threads 1 --config " + cfg.string() + " --out " + sb.dir.string());
    CHECK((code == 0 || code == 4));
    const std::string table = slurp(sb.dir / ("sweep_minibatch_" + h12(kConfig) + ".csv"));
    REQUIRE_FALSE(table.empty());
    std::istringstream rows(table);
    std::string line, last;
    while (std::getline(rows, line))
        if (!line.empty()) last = line;
    CHECK(last.rfind("10,0,0,", 0) == 0);
    CHECK(fs::exists(sb.dir / ("sweep_minibatch_verdict_" + h12(kConfig) + ".txt")));
}

TEST_CASE("report consolidates a manifest and is reproducible") {
    Sandbox sb("report");
    const fs::path cfg = sb.write("c.ini", kConfig);
    const std::string h = h12(kConfig);
    REQUIRE(cli("run --config " + cfg.string() + " --out " + sb.dir.string()) == 0);
    const fs::path manifest = sb.dir / ("manifest_" + h + ".json");
    REQUIRE(cli("report --manifest " + manifest.string() + " --out " + sb.dir.string()) == 0);
    const std::string first = slurp(sb.dir / ("report_" + h + ".txt"));
    CHECK(first.find("[regime]") != std::string::npos);
    CHECK(first.find("[tail bound decomposition") != std::string::npos);
    CHECK(first.find("c_beta") != std::string::npos);
    REQUIRE(cli("report --manifest " + manifest.string() + " --out " + sb.dir.string()) == 0);
    CHECK(slurp(sb.dir / ("report_" + h + ".txt")) == first);

    fs::remove(sb.dir / ("trajectory_" + h + ".csv"));
    CHECK(cli("report --manifest " + manifest.string() + " --out " + sb.dir.string(), sb.dir / "r.txt") == 1);
    CHECK(slurp(sb.dir / "r.txt").find("trajectory_" + h + ".csv") != std::string::npos);
    CHECK(cli("report --manifest " + (sb.dir / "nope.json").string()) == 1);
}
