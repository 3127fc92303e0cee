#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli_io.hpp"

using namespace mbp::cli;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run_args(std::vector<std::string> args) {
    args.insert(args.begin(), "mbplab");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = main_entry(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("mbplab-test-" + name);
    fs::remove_all(dir);
    return dir;
}

}  // namespace

TEST_CASE("combinatorics check passes") {
    const auto r = run_args({"combinatorics-check", "--k-max", "12", "--assert"});
    CHECK(r.code == kOk);
    CHECK(r.out.find("stirling;k=12") != std::string::npos);
    CHECK(run_args({"combinatorics-check", "--k-max", "99"}).code == kConfigError);
}

TEST_CASE("configuration errors exit with code 2") {
    CHECK(run_args({"survival", "--model", "model-bin", "--t", "10", "--n", "100"}).code == kConfigError);
    CHECK(run_args({"survival", "--model", "no-such-model", "--t", "1", "--seed", "1"}).code == kConfigError);
    CHECK(run_args({"survival", "--t", "5,1", "--seed", "1"}).code == kConfigError);
    CHECK(run_args({"survival", "--t", "1", "--seed", "1", "--n", "1"}).code == kConfigError);
    CHECK(run_args({"survival", "--t", "1", "--seed", "1", "--x0", "4"}).code == kConfigError);
    CHECK(run_args({"yaglom", "--t", "1,2", "--seed", "1"}).code == kConfigError);
    CHECK(run_args({"frobnicate"}).code == kConfigError);
    CHECK(run_args({"ode", "--model", "nbp-ball"}).code == kConfigError);
    CHECK(run_args({"eigen", "--workers", "0"}).code == kConfigError);

    const fs::path dir = scratch_dir("bad-model");
    fs::create_directories(dir);
    const fs::path bad = dir / "bad.model";
    std::ofstream(bad) << "model = finite\ntypes = 1\nrate.1 = 1\noffspring.1 = 1/2 : 2\n";
    const auto r = run_args({"eigen", "--model", bad.string()});
    CHECK(r.code == kConfigError);
    CHECK(r.err.find("sum to") != std::string::npos);

    std::ofstream(bad) << "model = finite\ntypes = 1\nrate.1 = x\n";
    const auto r2 = run_args({"eigen", "--model", bad.string()});
    CHECK(r2.code == kConfigError);
    CHECK(r2.err.find("line 3") != std::string::npos);
}

TEST_CASE("survival of binary splitting against the exact value") {
    const auto r = run_args({"survival", "--model", "model-bin", "--t", "10", "--n", "200000", "--seed", "7",
                             "--assert"});
    CHECK(r.code == kOk);
    CHECK(r.out.find("t=10 ") != std::string::npos);
}

TEST_CASE("failed targets exit with code 1 under --assert") {
    // A tiny tolerance on the Yaglom check cannot be met by Monte Carlo.
    const auto r = run_args({"yaglom", "--model", "model-bin", "--t", "20", "--n", "20000", "--seed", "3",
                             "--theta", "1", "--tol", "1e-9", "--assert"});
    CHECK(r.code == kAssertionFailed);
    const auto ok = run_args({"yaglom", "--model", "model-bin", "--t", "20", "--n", "20000", "--seed", "3",
                              "--theta", "1", "--tol", "1e-9"});
    CHECK(ok.code == kOk);
}

TEST_CASE("outputs are reproducible and independent of the worker count") {
    const fs::path a = scratch_dir("w1"), b = scratch_dir("w8"), c = scratch_dir("w1-again");
    const std::vector<std::string> base = {"simulate", "--model", "model-2t", "--t", "1,5", "--n", "5000",
                                           "--seed", "11"};
    auto with = [&](const fs::path& dir, const char* workers) {
        auto args = base;
        args.insert(args.end(), {"--workers", workers, "--out", dir.string()});
        return run_args(args);
    };
    REQUIRE(with(a, "1").code == kOk);
    REQUIRE(with(b, "8").code == kOk);
    REQUIRE(with(c, "1").code == kOk);
    const std::string csv = slurp(a / "simulate.csv");
    CHECK(csv.starts_with("param,estimate,stderr,target,rel_err,n_effective\n"));
    CHECK(csv == slurp(b / "simulate.csv"));
    CHECK(csv == slurp(c / "simulate.csv"));
    const std::string json = slurp(a / "simulate.json");
    CHECK(json.find("\"model_hash\"") != std::string::npos);
    CHECK(json.find("\"timestamp\"") != std::string::npos);
    CHECK(json.find("\"seed\": 11") != std::string::npos);
}

TEST_CASE("ode subcommand") {
    const fs::path dir = scratch_dir("ode");
    const auto r = run_args({"ode", "--model", "model-2t", "--assert", "--out", dir.string()});
    CHECK(r.code == kOk);
    CHECK(slurp(dir / "ode.csv").starts_with("t,a,a_scaled,sup_dev_t2\n"));
}

TEST_CASE("fnv1a") {
    CHECK(fnv1a("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
}
