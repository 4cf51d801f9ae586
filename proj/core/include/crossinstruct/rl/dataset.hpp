#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "crossinstruct/digest.hpp"
#include "crossinstruct/lifting.hpp"
#include "crossinstruct/rl/toy_env.hpp"

namespace crossinstruct::rl {

struct Transition {
  Eigen::VectorXd state;
  Eigen::VectorXd action;
  double reward = 0;
  Eigen::VectorXd next_state;
  // 1 when the transition ends in the goal (no bootstrapping past it).
  int done = 0;

  bool operator==(const Transition& o) const {
    return state == o.state && action == o.action && reward == o.reward && next_state == o.next_state &&
           done == o.done;
  }
};

struct DemoDataset {
  std::vector<Transition> transitions;
  // Provenance: rng seed, distribution digest, rollout count, clamp count.
  Json source = Json::object();

  bool empty() const { return transitions.empty(); }
  std::size_t size() const { return transitions.size(); }
  bool operator==(const DemoDataset&) const = default;
};

void validate(const Transition& tr, double a_max);

// Samples n_rollouts trajectories, drops z, and turns consecutive waypoints
// into transitions with actions clamped to a_max.
DemoDataset build_demo_dataset(const lifting::TrajectoryDistribution& dist, const ToyEnv& env, std::size_t n_rollouts,
                               std::uint64_t seed);

// JSON lines: a {"source": ...} header, then one transition per line as
// {"s","a","r","s2","done"}.
std::string serialize_dataset(const DemoDataset& data);
DemoDataset parse_dataset(std::string_view text);
std::string dataset_digest(const DemoDataset& data);

}  // namespace crossinstruct::rl
