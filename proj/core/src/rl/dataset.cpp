#include "crossinstruct/rl/dataset.hpp"

#include <cmath>
#include <sstream>

#include "crossinstruct/error.hpp"

namespace crossinstruct::rl {

namespace {

Json vec_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Eigen::VectorXd vec_from(const Json& j, const char* field, std::size_t line) {
  if (!j.is_array() || j.empty()) {
    fail(ErrorKind::kParse, "line " + std::to_string(line) + ": " + field + " must be a nonempty array", field);
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) fail(ErrorKind::kParse, "line " + std::to_string(line) + ": non-numeric entry", field);
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

}  // namespace

void validate(const Transition& tr, double a_max) {
  if (tr.state.size() == 0 || tr.state.size() != tr.next_state.size()) {
    fail(ErrorKind::kValidation, "state and next_state must have the same nonzero size", "state");
  }
  if (!tr.state.allFinite() || !tr.next_state.allFinite() || !tr.action.allFinite() || !std::isfinite(tr.reward)) {
    fail(ErrorKind::kValidation, "transition entries must be finite", "state");
  }
  if (tr.action.size() == 0 || tr.action.cwiseAbs().maxCoeff() > a_max) {
    fail(ErrorKind::kValidation, "action outside the a_max bound", "action");
  }
  if (tr.done != 0 && tr.done != 1) fail(ErrorKind::kValidation, "done must be 0 or 1", "done");
}

DemoDataset build_demo_dataset(const lifting::TrajectoryDistribution& dist, const ToyEnv& env, std::size_t n_rollouts,
                               std::uint64_t seed) {
  if (dist.waypoints.empty()) fail(ErrorKind::kValidation, "distribution is empty", "distribution");
  if (dist.horizon() > static_cast<std::size_t>(env.horizon)) {
    fail(ErrorKind::kValidation, "distribution horizon exceeds env horizon", "horizon");
  }
  validate(env);
  DemoDataset data;
  std::size_t clamped = 0;
  for (std::size_t k = 0; k < n_rollouts; ++k) {
    Rng rng = Rng::derive(seed, {k});
    const auto traj = lifting::sample_trajectory(dist, rng);
    for (std::size_t t = 0; t + 1 < traj.size(); ++t) {
      const State2 s = traj[t].head<2>().cwiseMax(-env.bound).cwiseMin(env.bound);
      const State2 target = traj[t + 1].head<2>().cwiseMax(-env.bound).cwiseMin(env.bound);
      const Eigen::Vector2d raw = target - s;
      const Eigen::Vector2d a = clamp_action(env, raw);
      if (a != raw) ++clamped;
      const StepResult step = toy_env_step(env, s, a, static_cast<int>(t + 1));
      data.transitions.push_back({s, a, step.reward, step.next_state, step.success ? 1 : 0});
    }
  }
  data.source = Json{{"rng_seed", seed},
                     {"distribution_digest", sha256_hex(canonical_json(lifting::distribution_to_json(dist)))},
                     {"n_rollouts", n_rollouts},
                     {"horizon", dist.horizon()},
                     {"clamped_actions", clamped}};
  return data;
}

std::string serialize_dataset(const DemoDataset& data) {
  std::string out = Json{{"source", data.source}}.dump() + "\n";
  for (const auto& tr : data.transitions) {
    if (!tr.state.allFinite() || !tr.next_state.allFinite() || !tr.action.allFinite() || !std::isfinite(tr.reward)) {
      fail(ErrorKind::kValidation, "cannot serialize non-finite transition", "transitions");
    }
    out += Json{{"s", vec_json(tr.state)},
                {"a", vec_json(tr.action)},
                {"r", tr.reward},
                {"s2", vec_json(tr.next_state)},
                {"done", tr.done}}
               .dump();
    out += "\n";
  }
  return out;
}

DemoDataset parse_dataset(std::string_view text) {
  DemoDataset data;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      fail(ErrorKind::kParse, "line " + std::to_string(lineno) + ": malformed JSON at byte " + std::to_string(e.byte));
    }
    if (!j.is_object()) fail(ErrorKind::kParse, "line " + std::to_string(lineno) + ": expected an object");
    if (!header) {
      if (!j.contains("source")) fail(ErrorKind::kParse, "first line must be the {\"source\": ...} header", "source");
      data.source = j["source"];
      header = true;
      continue;
    }
    for (const char* key : {"s", "a", "r", "s2", "done"}) {
      if (!j.contains(key)) fail(ErrorKind::kParse, "line " + std::to_string(lineno) + ": missing " + key, key);
    }
    if (!j["r"].is_number()) fail(ErrorKind::kParse, "line " + std::to_string(lineno) + ": r must be a number", "r");
    if (!j["done"].is_number_integer() || (j["done"] != 0 && j["done"] != 1)) {
      fail(ErrorKind::kParse, "line " + std::to_string(lineno) + ": done must be 0 or 1", "done");
    }
    Transition tr{vec_from(j["s"], "s", lineno), vec_from(j["a"], "a", lineno), j["r"].get<double>(),
                  vec_from(j["s2"], "s2", lineno), j["done"].get<int>()};
    if (tr.state.size() != tr.next_state.size()) {
      fail(ErrorKind::kParse, "line " + std::to_string(lineno) + ": s and s2 sizes differ", "s2");
    }
    data.transitions.push_back(std::move(tr));
  }
  if (!header) fail(ErrorKind::kParse, "dataset is empty (no header line)", "source");
  return data;
}

std::string dataset_digest(const DemoDataset& data) { return sha256_hex(serialize_dataset(data)); }

}  // namespace crossinstruct::rl
