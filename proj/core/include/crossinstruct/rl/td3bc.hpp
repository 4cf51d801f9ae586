#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "crossinstruct/digest.hpp"
#include "crossinstruct/rl/dataset.hpp"
#include "crossinstruct/rl/mlp.hpp"
#include "crossinstruct/rl/toy_env.hpp"

namespace crossinstruct::rl {

// Column-major batch: one transition per column.
struct Batch {
  MatrixXd s, a, s2;
  VectorXd r, done;

  std::size_t size() const { return static_cast<std::size_t>(s.cols()); }
};

Batch make_batch(const std::vector<Transition>& transitions);
Batch make_batch(const std::vector<const Transition*>& transitions);

// Both critics take [s; a / action_scale] so actions enter at unit scale.
struct TwinCritic {
  Mlp q1, q2;
  double action_scale = 1.0;

  MatrixXd input(const MatrixXd& s, const MatrixXd& a) const;
  bool operator==(const TwinCritic&) const = default;
};

Mlp make_policy(int state_dim, int action_dim, double a_max, int hidden = 64);
TwinCritic make_critic(int state_dim, int action_dim, double action_scale = 1.0, int hidden = 64);

struct BCConfig {
  int epochs = 200;
  std::size_t batch_size = 32;
  double lr = 1e-3;

  bool operator==(const BCConfig&) const = default;
};

struct BCReport {
  // Dataset MSE after each epoch. An epoch that would raise it is rolled back
  // and the learning rate halved, so the sequence is non-increasing.
  std::vector<double> epoch_loss;
};

// Mean over the dataset of ||pi(s) - a||^2.
double bc_loss(const Mlp& policy, const DemoDataset& data);
BCReport bc_pretrain(Mlp& policy, const DemoDataset& data, const BCConfig& config, Rng& rng);

struct ActorLoss {
  double loss = 0;
  double bc = 0;  // mean ||pi(s) - a||^2
  double q = 0;   // mean Q1(s, pi(s))
  VectorXd grad;  // d loss / d policy params
};

// lambda * E||pi(s) - a||^2 - (1 - lambda) * E[Q1(s, pi(s))] over one batch.
ActorLoss actor_loss(const Mlp& policy, const TwinCritic& critic, const Batch& batch, double lambda);
// Same loss with the BC expectation over `bc_batch` and the Q expectation
// over `q_states`.
ActorLoss actor_loss(const Mlp& policy, const TwinCritic& critic, const Batch& bc_batch, const MatrixXd& q_states,
                     double lambda);

struct TD3BCConfig {
  double lambda = 0.4;
  double gamma = 0.99;
  int policy_delay = 2;
  // Noise scales are fractions of a_max.
  double target_noise = 0.2;
  double noise_clip = 0.5;
  double exploration_noise = 0.1;
  double tau = 0.005;
  std::size_t batch_size = 32;
  // Fraction of each batch drawn from the demo dataset.
  double demo_ratio = 0.5;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  std::int64_t total_steps = 40000;
  // Critic-only updates before this step so the actor does not chase an
  // untrained critic away from the pretrained policy.
  std::int64_t actor_start = 5000;
  std::uint64_t seed = 0;
  int hidden = 64;
  BCConfig bc;
  std::int64_t eval_every = 2000;
  int eval_episodes = 20;
  // Stop once an evaluation reaches this success rate (0 disables).
  double stop_at_success = 0;

  bool operator==(const TD3BCConfig&) const = default;
};

void validate(const TD3BCConfig& config);
Json td3bc_config_to_json(const TD3BCConfig& config);
TD3BCConfig td3bc_config_from_json(const Json& j, TD3BCConfig base = {});

// Bootstrapped targets r + gamma (1 - done) min(Q1', Q2')(s', pi'(s') + eps)
// with eps ~ clip(N(0, target_noise a_max), +-noise_clip a_max).
VectorXd critic_targets(const Mlp& target_policy, const TwinCritic& target_critic, const Batch& batch,
                        const TD3BCConfig& config, double a_max, Rng& rng);
// Mean (Q(s, a) - y)^2; gradient added into *grad when given.
double critic_loss(const Mlp& q, const Batch& batch, const VectorXd& targets, VectorXd* grad,
                   double action_scale = 1.0);

struct CriticOptimizer {
  Adam q1, q2;
};

// One TD step on both critics toward the shared targets. Returns the summed loss.
double critic_update(TwinCritic& critic, CriticOptimizer& opt, const TwinCritic& target_critic,
                     const Mlp& target_policy, const Batch& batch, const TD3BCConfig& config, double a_max, Rng& rng);

struct CurvePoint {
  std::int64_t step = 0;
  double success_rate = 0;
  double actor_loss = 0;
  double critic_loss = 0;

  bool operator==(const CurvePoint&) const = default;
};

struct TrainResult {
  Mlp policy;
  TwinCritic critic;
  std::vector<CurvePoint> curve;
  BCReport bc;
  std::string demo_digest_before;
  std::string demo_digest_after;

  double max_success() const;
};

// BC pretraining on the demo set, then TD3+BC with the demo retained in the
// replay buffer. Throws kTrainingDiverged if parameters become non-finite.
TrainResult td3bc_train(const ToyEnv& env, const DemoDataset& demo, const TD3BCConfig& config);

// Greedy rollouts; fraction of episodes that reach the goal.
double evaluate_policy(const Mlp& policy, const ToyEnv& env, int n_episodes, Rng& rng);

std::string curve_to_csv(const std::vector<CurvePoint>& curve);
std::vector<CurvePoint> curve_from_csv(std::string_view text);

}  // namespace crossinstruct::rl
