#include "crossinstruct/rl/toy_env.hpp"

#include <cmath>

#include "crossinstruct/error.hpp"

namespace crossinstruct::rl {

void validate(const ToyEnv& env) {
  if (!env.goal.allFinite()) fail(ErrorKind::kValidation, "goal must be finite", "goal");
  if (!(env.goal_radius > 0)) fail(ErrorKind::kValidation, "goal_radius must be positive", "goal_radius");
  if (env.horizon < 1) fail(ErrorKind::kValidation, "horizon must be >= 1", "horizon");
  if (!(env.a_max > 0)) fail(ErrorKind::kValidation, "a_max must be positive", "a_max");
  if (!(env.bound > 0)) fail(ErrorKind::kValidation, "bound must be positive", "bound");
  if (!env.start_center.allFinite() || !(env.start_spread >= 0)) {
    fail(ErrorKind::kValidation, "start region must be finite", "start_spread");
  }
}

Eigen::Vector2d clamp_action(const ToyEnv& env, const Eigen::Vector2d& action) {
  return action.cwiseMax(-env.a_max).cwiseMin(env.a_max);
}

State2 toy_env_reset(const ToyEnv& env, Rng& rng) {
  State2 s;
  for (int i = 0; i < 2; ++i) s[i] = env.start_center[i] + rng.uniform(-env.start_spread, env.start_spread);
  return s.cwiseMax(-env.bound).cwiseMin(env.bound);
}

StepResult toy_env_step(const ToyEnv& env, const State2& state, const Eigen::Vector2d& action, int t) {
  if (!action.allFinite()) fail(ErrorKind::kInvalidInput, "action must be finite", "action");
  StepResult r;
  r.next_state = (state + clamp_action(env, action)).cwiseMax(-env.bound).cwiseMin(env.bound);
  r.success = (r.next_state - env.goal).norm() <= env.goal_radius;
  r.reward = r.success ? 1.0 : 0.0;
  r.done = r.success || t >= env.horizon;
  return r;
}

Json toy_env_to_json(const ToyEnv& env) {
  return Json{{"goal", {env.goal.x(), env.goal.y()}},
              {"goal_radius", env.goal_radius},
              {"horizon", env.horizon},
              {"a_max", env.a_max},
              {"bound", env.bound},
              {"start_center", {env.start_center.x(), env.start_center.y()}},
              {"start_spread", env.start_spread}};
}

ToyEnv toy_env_from_json(const Json& j, ToyEnv env) {
  if (!j.is_object()) fail(ErrorKind::kValidation, "env config must be an object", "env");
  try {
    auto vec2 = [&](const char* key, State2& out) {
      if (!j.contains(key)) return;
      const auto& a = j[key];
      if (!a.is_array() || a.size() != 2) fail(ErrorKind::kValidation, std::string(key) + " must have 2 numbers", key);
      out = {a[0].get<double>(), a[1].get<double>()};
    };
    vec2("goal", env.goal);
    vec2("start_center", env.start_center);
    if (j.contains("goal_radius")) env.goal_radius = j["goal_radius"].get<double>();
    if (j.contains("horizon")) env.horizon = j["horizon"].get<int>();
    if (j.contains("a_max")) env.a_max = j["a_max"].get<double>();
    if (j.contains("bound")) env.bound = j["bound"].get<double>();
    if (j.contains("start_spread")) env.start_spread = j["start_spread"].get<double>();
  } catch (const Json::exception& e) {
    fail(ErrorKind::kValidation, std::string("bad env config value: ") + e.what(), "env");
  }
  validate(env);
  return env;
}

}  // namespace crossinstruct::rl
