#pragma once

// Experiment runner behind the mbplab executable. Kept as a library so that
// tests can drive subcommands without spawning processes.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mbp::cli {

enum ExitCode : int {
    kOk = 0,
    kAssertionFailed = 1,
    kConfigError = 2,
    kRuntimeError = 3,
};

struct RunConfig {
    std::string command;
    std::string model = "model-bin";  ///< bundled name or path
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> n;  ///< trajectories / walks; each subcommand has its own default
    unsigned workers = 1;
    std::string out_dir;  ///< empty: print only
    bool assert_targets = false;

    std::vector<double> times;   ///< --t
    std::vector<double> thetas;  ///< --theta
    std::vector<int> js;         ///< --j
    int k_max = -1;  ///< < 0 selects the subcommand default
    std::string method = "direct";  ///< survival: direct | spine
    std::string f = "1";            ///< "1", "phi", "speed" or per-type list "1,0"
    std::string x0;                 ///< finite: 1-based type; NBP: "rx,ry,rz,vx,vy,vz"
    double tol = -1.0;              ///< subcommand-specific tolerance; < 0 selects the default
    int factors = 1;                ///< ergodic-check: number of indicator factors
    int type = 1;                   ///< ergodic-check: indicator type (1-based)
    double t_max = 500.0;           ///< ode
    double allowance = 2.0;         ///< c in the c / t finite-time allowance
};

/// Executes one subcommand. Rows go to `out`, diagnostics to `err`.
int run(const RunConfig& config, std::ostream& out, std::ostream& err);

/// Parses argv into a RunConfig and runs it.
int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// 64-bit FNV-1a, used to tag outputs with the model text they came from.
std::uint64_t fnv1a(const std::string& text);

}  // namespace mbp::cli
