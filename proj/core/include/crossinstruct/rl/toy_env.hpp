#pragma once

#include <Eigen/Core>

#include "crossinstruct/digest.hpp"
#include "crossinstruct/rng.hpp"

namespace crossinstruct::rl {

using State2 = Eigen::Vector2d;

// Point mass in [-bound, bound]^2 moving by clamped position deltas toward a
// goal disc. Reward is 1 on entering the disc and 0 otherwise.
struct ToyEnv {
  State2 goal = State2::Zero();
  double goal_radius = 0.05;
  int horizon = 50;
  double a_max = 0.1;
  double bound = 1.0;
  // Episodes start uniformly within start_center +- start_spread per axis.
  State2 start_center{-0.5, 0.0};
  double start_spread = 0.05;

  bool operator==(const ToyEnv&) const = default;
};

struct StepResult {
  State2 next_state;
  double reward = 0;
  // Goal reached (terminal for bootstrapping).
  bool success = false;
  // success or the horizon was hit.
  bool done = false;
};

void validate(const ToyEnv& env);
Eigen::Vector2d clamp_action(const ToyEnv& env, const Eigen::Vector2d& action);
State2 toy_env_reset(const ToyEnv& env, Rng& rng);
// `t` is the 1-based index of this step within the episode.
StepResult toy_env_step(const ToyEnv& env, const State2& state, const Eigen::Vector2d& action, int t = 1);

Json toy_env_to_json(const ToyEnv& env);
ToyEnv toy_env_from_json(const Json& j, ToyEnv base = {});

}  // namespace crossinstruct::rl
