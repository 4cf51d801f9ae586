#include <benchmark/benchmark.h>

#include "crossinstruct/rl/dataset.hpp"
#include "crossinstruct/rl/td3bc.hpp"
#include "crossinstruct/rl/toy_env.hpp"
#include "fixture_a.hpp"

namespace ci = crossinstruct;
using namespace ci::rl;

namespace {

Batch random_batch(ci::Rng& rng, int n, double a_max) {
  std::vector<Transition> trs;
  for (int i = 0; i < n; ++i) {
    VectorXd s(2), a(2);
    s << rng.uniform(-1, 1), rng.uniform(-1, 1);
    a << rng.uniform(-a_max, a_max), rng.uniform(-a_max, a_max);
    trs.push_back({s, a, 0.0, s + a, 0});
  }
  return make_batch(trs);
}

// One critic update plus one actor gradient: the inner loop of training.
void BM_Td3bcUpdate(benchmark::State& state) {
  const ToyEnv env;
  TD3BCConfig cfg;
  cfg.hidden = static_cast<int>(state.range(1));
  ci::Rng rng(3);
  Mlp policy = make_policy(2, 2, env.a_max, cfg.hidden);
  TwinCritic critic = make_critic(2, 2, env.a_max, cfg.hidden);
  policy.init(rng);
  critic.q1.init(rng);
  critic.q2.init(rng);
  const Mlp target_policy = policy;
  const TwinCritic target_critic = critic;
  CriticOptimizer opt{Adam(critic.q1.num_params()), Adam(critic.q2.num_params())};
  const Batch b = random_batch(rng, static_cast<int>(state.range(0)), env.a_max);
  for (auto _ : state) {
    benchmark::DoNotOptimize(critic_update(critic, opt, target_critic, target_policy, b, cfg, env.a_max, rng));
    benchmark::DoNotOptimize(actor_loss(policy, critic, b, cfg.lambda));
  }
}
BENCHMARK(BM_Td3bcUpdate)->Args({32, 64})->Args({64, 64})->Args({256, 256});

void BM_BuildDemoDataset(benchmark::State& state) {
  const auto dist = ci::testing::reach_distribution(0);
  const ToyEnv env;
  for (auto _ : state) benchmark::DoNotOptimize(build_demo_dataset(dist, env, 50, 0));
}
BENCHMARK(BM_BuildDemoDataset)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
