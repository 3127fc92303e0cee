// Throughput of the hot paths: exact combinatorics, direct tree simulation,
// spine trees, the survival ODE and weighted neutron walks.

#include <benchmark/benchmark.h>

#include <vector>

#include "mbp/branching.hpp"
#include "mbp/combinatorics.hpp"
#include "mbp/eigen.hpp"
#include "mbp/finite_model.hpp"
#include "mbp/nbp.hpp"
#include "mbp/spine.hpp"

namespace {

using namespace mbp;

void BM_StirlingIdentity(benchmark::State& state) {
    const int k = static_cast<int>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(stirling_identity_rhs(k));
}
BENCHMARK(BM_StirlingIdentity)->Arg(6)->Arg(12);

void BM_IidMomentFormula(benchmark::State& state) {
    const int k = static_cast<int>(state.range(0));
    std::vector<BigRational> moments;
    for (int i = 1; i <= k; ++i) moments.emplace_back(i, i + 1);
    for (auto _ : state) benchmark::DoNotOptimize(iid_moment_formula(k, 4, moments));
}
BENCHMARK(BM_IidMomentFormula)->Arg(3)->Arg(5)->Arg(8);

// One tree per iteration, fresh stream each time, survival-only mode.
void BM_ExtinctionTree(benchmark::State& state) {
    const auto model = state.range(0) == 0 ? model_bin() : model_2t();
    const double t = static_cast<double>(state.range(1));
    const WorkerPool pool(1);
    std::uint64_t seed = 1;
    for (auto _ : state) benchmark::DoNotOptimize(sample_extinction(model, 0, t, 64, seed++, pool));
    state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_ExtinctionTree)->Args({0, 20})->Args({0, 200})->Args({1, 200});

void BM_FunctionalTree(benchmark::State& state) {
    const auto model = model_2t();
    const WorkerPool pool(1);
    std::uint64_t seed = 1;
    const auto f = [](int i) { return i == 0 ? 1.0 : 0.0; };
    for (auto _ : state) benchmark::DoNotOptimize(sample_functional(model, 0, 50.0, f, 64, seed++, pool));
    state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_FunctionalTree);

void BM_SpineMoments(benchmark::State& state) {
    const auto model = model_2t();
    const auto eigen = exact_eigen(model);
    const FiniteSpineKernel kernel(model, eigen);
    const WorkerPool pool(1);
    const int js[] = {1, 2, 3};
    const double t = static_cast<double>(state.range(0));
    std::uint64_t seed = 1;
    for (auto _ : state) benchmark::DoNotOptimize(spine_moment_estimate(kernel, 0, t, js, 64, seed++, pool));
    state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_SpineMoments)->Arg(20)->Arg(200);

void BM_SurvivalOde(benchmark::State& state) {
    const auto model = state.range(0) == 0 ? model_bin() : model_3t();
    for (auto _ : state) benchmark::DoNotOptimize(nonlinear_ode(model, 500.0, default_ode_step(model)));
}
BENCHMARK(BM_SurvivalOde)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_ExactEigen(benchmark::State& state) {
    const auto model = model_3t();
    for (auto _ : state) benchmark::DoNotOptimize(exact_eigen(model));
}
BENCHMARK(BM_ExactEigen);

void BM_NeutronWalks(benchmark::State& state) {
    const auto model = state.range(0) == 0 ? nbp_ball() : nbp_box();
    const WorkerPool pool(1);
    const PhasePoint x0{Vec3::Zero(), Vec3(1.0, 0.0, 0.0)};
    const auto one = [](const PhasePoint&) { return 1.0; };
    std::uint64_t seed = 1;
    for (auto _ : state) benchmark::DoNotOptimize(nrw_many_to_one(model, one, x0, 2.0, 256, seed++, pool));
    state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_NeutronWalks)->Arg(0)->Arg(1);

void BM_NeutronTree(benchmark::State& state) {
    const auto model = nbp_ball();
    const WorkerPool pool(1);
    const PhasePoint x0{Vec3::Zero(), Vec3(1.0, 0.0, 0.0)};
    std::uint64_t seed = 1;
    for (auto _ : state) benchmark::DoNotOptimize(sample_extinction(model, x0, 5.0, 64, seed++, pool));
    state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_NeutronTree);

}  // namespace

BENCHMARK_MAIN();
