#include <benchmark/benchmark.h>

#include "crossinstruct/lifting.hpp"
#include "fixture_a.hpp"

namespace ci = crossinstruct;
using ci::geometry::Vec3;

namespace {

std::vector<Vec3> cloud(ci::Rng& rng, std::size_t n) {
  std::vector<Vec3> out(n);
  for (auto& p : out) p = Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.02;
  return out;
}

void BM_CastDensityRegion(benchmark::State& state) {
  const auto [v1, v2] = ci::testing::fixture_a();
  const auto xi = ci::testing::project_to_fixture({Vec3(0, 0, 1), Vec3(0.1, 0, 1)});
  ci::lifting::LiftingConfig cfg;
  cfg.samples_per_view = static_cast<int>(state.range(0));
  cfg.depth_samples = static_cast<int>(state.range(0));
  const auto density = ci::lifting::pixel_density_at(xi.first, 1);
  ci::Rng rng(1);
  for (auto _ : state) benchmark::DoNotOptimize(ci::lifting::cast_density_region(v1, density, cfg, rng));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0));
}
BENCHMARK(BM_CastDensityRegion)->Arg(32)->Arg(64)->Arg(128);

void BM_IntersectRegions(benchmark::State& state) {
  ci::Rng rng(2);
  const auto a = cloud(rng, static_cast<std::size_t>(state.range(0)));
  const auto b = cloud(rng, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ci::lifting::intersect_regions(a, b, 0.01));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_IntersectRegions)->RangeMultiplier(4)->Range(256, 4096)->Complexity();

void BM_LiftTrajectoryPair(benchmark::State& state) {
  const auto [v1, v2] = ci::testing::fixture_a();
  const auto line = ci::testing::straight_line(Vec3(-0.3, 0, 1), Vec3(0.2, 0.1, 0.9), 20);
  const auto xi = ci::testing::project_to_fixture(line);
  ci::lifting::LiftingConfig cfg;
  cfg.threads = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(ci::lifting::lift_trajectory_pair(xi.first, xi.second, {v1, v2}, cfg));
}
BENCHMARK(BM_LiftTrajectoryPair)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
