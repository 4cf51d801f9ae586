#include "crossinstruct/rl/td3bc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "crossinstruct/error.hpp"

namespace crossinstruct::rl {

Batch make_batch(const std::vector<const Transition*>& transitions) {
  Batch b;
  if (transitions.empty()) return b;
  const auto n = static_cast<Eigen::Index>(transitions.size());
  const auto sd = transitions.front()->state.size();
  const auto ad = transitions.front()->action.size();
  b.s.resize(sd, n);
  b.a.resize(ad, n);
  b.s2.resize(sd, n);
  b.r.resize(n);
  b.done.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Transition& tr = *transitions[static_cast<std::size_t>(i)];
    if (tr.state.size() != sd || tr.action.size() != ad || tr.next_state.size() != sd) {
      fail(ErrorKind::kValidation, "transitions in a batch must share dimensions", "transitions");
    }
    b.s.col(i) = tr.state;
    b.a.col(i) = tr.action;
    b.s2.col(i) = tr.next_state;
    b.r[i] = tr.reward;
    b.done[i] = tr.done;
  }
  return b;
}

Batch make_batch(const std::vector<Transition>& transitions) {
  std::vector<const Transition*> ptrs;
  ptrs.reserve(transitions.size());
  for (const auto& tr : transitions) ptrs.push_back(&tr);
  return make_batch(ptrs);
}

Mlp make_policy(int state_dim, int action_dim, double a_max, int hidden) {
  return Mlp({state_dim, hidden, hidden, action_dim}, Mlp::Output::kScaledTanh, a_max);
}

TwinCritic make_critic(int state_dim, int action_dim, double action_scale, int hidden) {
  if (!(action_scale > 0)) fail(ErrorKind::kValidation, "action_scale must be positive", "action_scale");
  Mlp q({state_dim + action_dim, hidden, hidden, 1});
  return {q, q, action_scale};
}

MatrixXd TwinCritic::input(const MatrixXd& s, const MatrixXd& a) const {
  MatrixXd x(s.rows() + a.rows(), s.cols());
  x << s, a / action_scale;
  return x;
}

double bc_loss(const Mlp& policy, const DemoDataset& data) {
  if (data.empty()) fail(ErrorKind::kValidation, "dataset is empty", "transitions");
  const Batch b = make_batch(data.transitions);
  return (policy.forward(b.s) - b.a).colwise().squaredNorm().mean();
}

BCReport bc_pretrain(Mlp& policy, const DemoDataset& data, const BCConfig& config, Rng& rng) {
  if (data.empty()) fail(ErrorKind::kValidation, "dataset is empty", "transitions");
  if (config.epochs < 0 || config.batch_size == 0 || !(config.lr > 0)) {
    fail(ErrorKind::kValidation, "BC config needs epochs >= 0, batch_size >= 1, lr > 0", "bc");
  }
  BCReport report;
  double lr = config.lr;
  Adam opt(policy.num_params(), lr);
  double best = config.epochs > 0 ? bc_loss(policy, data) : 0.0;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // An epoch that raises the dataset loss is undone and the step size halved.
    const VectorXd saved_params = policy.params();
    const Adam saved_opt = opt;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      std::vector<const Transition*> ptrs;
      for (std::size_t k = start; k < std::min(order.size(), start + config.batch_size); ++k) {
        ptrs.push_back(&data.transitions[order[k]]);
      }
      const Batch b = make_batch(ptrs);
      Mlp::Cache cache;
      const MatrixXd p = policy.forward(b.s, &cache);
      VectorXd grad = VectorXd::Zero(static_cast<Eigen::Index>(policy.num_params()));
      policy.backward(cache, 2.0 * (p - b.a) / static_cast<double>(b.size()), &grad);
      opt.step(policy.params(), grad);
    }
    const double loss = bc_loss(policy, data);
    if (loss > best) {
      policy.params() = saved_params;
      lr *= 0.5;
      opt = saved_opt;
      opt.set_lr(lr);
    } else {
      best = loss;
    }
    report.epoch_loss.push_back(best);
  }
  return report;
}

ActorLoss actor_loss(const Mlp& policy, const TwinCritic& critic, const Batch& batch, double lambda) {
  return actor_loss(policy, critic, batch, batch.s, lambda);
}

ActorLoss actor_loss(const Mlp& policy, const TwinCritic& critic, const Batch& bc_batch, const MatrixXd& q_states,
                     double lambda) {
  if (!(lambda >= 0 && lambda <= 1)) fail(ErrorKind::kValidation, "lambda must be in [0, 1]", "lambda");
  if (q_states.cols() == 0) fail(ErrorKind::kValidation, "batch is empty", "batch");
  ActorLoss out;
  out.grad = VectorXd::Zero(static_cast<Eigen::Index>(policy.num_params()));
  if (bc_batch.size() > 0) {
    Mlp::Cache cache;
    const MatrixXd diff = policy.forward(bc_batch.s, &cache) - bc_batch.a;
    out.bc = diff.colwise().squaredNorm().mean();
    policy.backward(cache, lambda * 2.0 * diff / static_cast<double>(bc_batch.size()), &out.grad);
  }
  Mlp::Cache pcache, qcache;
  const MatrixXd p = policy.forward(q_states, &pcache);
  const MatrixXd q = critic.q1.forward(critic.input(q_states, p), &qcache);
  out.q = q.mean();
  const auto n = static_cast<double>(q_states.cols());
  const MatrixXd dq = MatrixXd::Constant(1, q_states.cols(), -(1.0 - lambda) / n);
  const MatrixXd dx = critic.q1.backward(qcache, dq, nullptr);
  policy.backward(pcache, dx.bottomRows(p.rows()) / critic.action_scale, &out.grad);
  out.loss = lambda * out.bc - (1.0 - lambda) * out.q;
  return out;
}

void validate(const TD3BCConfig& c) {
  auto check = [](bool ok, const char* msg, const char* field) {
    if (!ok) fail(ErrorKind::kValidation, msg, field);
  };
  check(c.lambda >= 0 && c.lambda <= 1, "lambda must be in [0, 1]", "lambda");
  check(c.gamma > 0 && c.gamma <= 1, "gamma must be in (0, 1]", "gamma");
  check(c.policy_delay >= 1, "policy_delay must be >= 1", "policy_delay");
  check(c.target_noise >= 0 && c.noise_clip >= 0 && c.exploration_noise >= 0, "noise scales must be >= 0",
        "target_noise");
  check(c.tau > 0 && c.tau <= 1, "tau must be in (0, 1]", "tau");
  check(c.batch_size >= 1, "batch_size must be >= 1", "batch_size");
  check(c.demo_ratio >= 0 && c.demo_ratio <= 1, "demo_ratio must be in [0, 1]", "demo_ratio");
  check(c.actor_lr > 0 && c.critic_lr > 0, "learning rates must be positive", "actor_lr");
  check(c.total_steps >= 0, "total_steps must be >= 0", "total_steps");
  check(c.actor_start >= 0, "actor_start must be >= 0", "actor_start");
  check(c.hidden >= 1, "hidden must be >= 1", "hidden");
  check(c.eval_every >= 1 && c.eval_episodes >= 1, "eval_every and eval_episodes must be >= 1", "eval_every");
  check(c.bc.epochs >= 0 && c.bc.batch_size >= 1 && c.bc.lr > 0, "bad BC settings", "bc");
}

Json td3bc_config_to_json(const TD3BCConfig& c) {
  return Json{{"lambda", c.lambda},
              {"gamma", c.gamma},
              {"policy_delay", c.policy_delay},
              {"target_noise", c.target_noise},
              {"noise_clip", c.noise_clip},
              {"exploration_noise", c.exploration_noise},
              {"tau", c.tau},
              {"batch_size", c.batch_size},
              {"demo_ratio", c.demo_ratio},
              {"actor_lr", c.actor_lr},
              {"critic_lr", c.critic_lr},
              {"total_steps", c.total_steps},
              {"actor_start", c.actor_start},
              {"seed", c.seed},
              {"hidden", c.hidden},
              {"bc", {{"epochs", c.bc.epochs}, {"batch_size", c.bc.batch_size}, {"lr", c.bc.lr}}},
              {"eval_every", c.eval_every},
              {"eval_episodes", c.eval_episodes},
              {"stop_at_success", c.stop_at_success}};
}

TD3BCConfig td3bc_config_from_json(const Json& j, TD3BCConfig c) {
  if (!j.is_object()) fail(ErrorKind::kValidation, "training config must be an object", "config");
  try {
    auto get = [&](const char* key, auto& out) {
      if (j.contains(key)) out = j[key].get<std::decay_t<decltype(out)>>();
    };
    get("lambda", c.lambda);
    get("gamma", c.gamma);
    get("policy_delay", c.policy_delay);
    get("target_noise", c.target_noise);
    get("noise_clip", c.noise_clip);
    get("exploration_noise", c.exploration_noise);
    get("tau", c.tau);
    get("batch_size", c.batch_size);
    get("demo_ratio", c.demo_ratio);
    get("actor_lr", c.actor_lr);
    get("critic_lr", c.critic_lr);
    get("total_steps", c.total_steps);
    get("actor_start", c.actor_start);
    get("seed", c.seed);
    get("hidden", c.hidden);
    get("eval_every", c.eval_every);
    get("eval_episodes", c.eval_episodes);
    get("stop_at_success", c.stop_at_success);
    if (j.contains("bc")) {
      const Json& b = j["bc"];
      if (b.contains("epochs")) c.bc.epochs = b["epochs"].get<int>();
      if (b.contains("batch_size")) c.bc.batch_size = b["batch_size"].get<std::size_t>();
      if (b.contains("lr")) c.bc.lr = b["lr"].get<double>();
    }
  } catch (const Json::exception& e) {
    fail(ErrorKind::kValidation, std::string("bad training config value: ") + e.what(), "config");
  }
  validate(c);
  return c;
}

VectorXd critic_targets(const Mlp& target_policy, const TwinCritic& target_critic, const Batch& batch,
                        const TD3BCConfig& config, double a_max, Rng& rng) {
  MatrixXd a2 = target_policy.forward(batch.s2);
  const double sigma = config.target_noise * a_max;
  const double clip = config.noise_clip * a_max;
  for (Eigen::Index j = 0; j < a2.cols(); ++j) {
    for (Eigen::Index i = 0; i < a2.rows(); ++i) {
      const double eps = std::clamp(sigma * rng.normal(), -clip, clip);
      a2(i, j) = std::clamp(a2(i, j) + eps, -a_max, a_max);
    }
  }
  const MatrixXd x = target_critic.input(batch.s2, a2);
  const VectorXd q1 = target_critic.q1.forward(x).row(0).transpose();
  const VectorXd q2 = target_critic.q2.forward(x).row(0).transpose();
  const VectorXd not_done = VectorXd::Ones(batch.done.size()) - batch.done;
  return batch.r + config.gamma * not_done.cwiseProduct(q1.cwiseMin(q2));
}

double critic_loss(const Mlp& q, const Batch& batch, const VectorXd& targets, VectorXd* grad, double action_scale) {
  if (batch.size() == 0 || targets.size() != static_cast<Eigen::Index>(batch.size())) {
    fail(ErrorKind::kValidation, "targets must match a nonempty batch", "targets");
  }
  MatrixXd x(batch.s.rows() + batch.a.rows(), batch.s.cols());
  x << batch.s, batch.a / action_scale;
  Mlp::Cache cache;
  const MatrixXd diff = q.forward(x, &cache) - targets.transpose();
  const double n = static_cast<double>(batch.size());
  if (grad) q.backward(cache, 2.0 * diff / n, grad);
  return diff.squaredNorm() / n;
}

double critic_update(TwinCritic& critic, CriticOptimizer& opt, const TwinCritic& target_critic,
                     const Mlp& target_policy, const Batch& batch, const TD3BCConfig& config, double a_max, Rng& rng) {
  const VectorXd y = critic_targets(target_policy, target_critic, batch, config, a_max, rng);
  VectorXd g1 = VectorXd::Zero(static_cast<Eigen::Index>(critic.q1.num_params()));
  VectorXd g2 = VectorXd::Zero(static_cast<Eigen::Index>(critic.q2.num_params()));
  const double l1 = critic_loss(critic.q1, batch, y, &g1, critic.action_scale);
  const double l2 = critic_loss(critic.q2, batch, y, &g2, critic.action_scale);
  opt.q1.step(critic.q1.params(), g1);
  opt.q2.step(critic.q2.params(), g2);
  return l1 + l2;
}

double TrainResult::max_success() const {
  double best = 0;
  for (const auto& p : curve) best = std::max(best, p.success_rate);
  return best;
}

double evaluate_policy(const Mlp& policy, const ToyEnv& env, int n_episodes, Rng& rng) {
  if (n_episodes < 1) fail(ErrorKind::kValidation, "n_episodes must be >= 1", "n_episodes");
  if (policy.input_dim() != 2 || policy.output_dim() != 2) {
    fail(ErrorKind::kValidation, "policy must map 2D states to 2D actions", "policy");
  }
  int successes = 0;
  for (int e = 0; e < n_episodes; ++e) {
    State2 s = toy_env_reset(env, rng);
    for (int t = 1; t <= env.horizon; ++t) {
      const StepResult r = toy_env_step(env, s, policy.forward_one(s), t);
      s = r.next_state;
      if (r.success) {
        ++successes;
        break;
      }
      if (r.done) break;
    }
  }
  return static_cast<double>(successes) / n_episodes;
}

TrainResult td3bc_train(const ToyEnv& env, const DemoDataset& demo, const TD3BCConfig& config) {
  validate(config);
  validate(env);
  for (const auto& tr : demo.transitions) {
    if (tr.state.size() != 2 || tr.action.size() != 2) {
      fail(ErrorKind::kValidation, "toy env demos need 2D states and actions", "transitions");
    }
  }
  TrainResult result;
  result.demo_digest_before = dataset_digest(demo);

  Rng init_rng = Rng::derive(config.seed, {1});
  Mlp policy = make_policy(2, 2, env.a_max, config.hidden);
  TwinCritic critic = make_critic(2, 2, env.a_max, config.hidden);
  policy.init(init_rng);
  critic.q1.init(init_rng);
  critic.q2.init(init_rng);
  if (!demo.empty() && config.bc.epochs > 0) {
    Rng bc_rng = Rng::derive(config.seed, {2});
    result.bc = bc_pretrain(policy, demo, config.bc, bc_rng);
  }
  Mlp target_policy = policy;
  TwinCritic target_critic = critic;
  Adam actor_opt(policy.num_params(), config.actor_lr);
  CriticOptimizer critic_opt{Adam(critic.q1.num_params(), config.critic_lr),
                             Adam(critic.q2.num_params(), config.critic_lr)};

  Rng env_rng = Rng::derive(config.seed, {3});
  Rng noise_rng = Rng::derive(config.seed, {4});
  Rng sample_rng = Rng::derive(config.seed, {5});
  auto evaluate_now = [&] {
    Rng eval_rng = Rng::derive(config.seed, {6});
    return evaluate_policy(policy, env, config.eval_episodes, eval_rng);
  };
  result.curve.push_back({0, evaluate_now(), 0, 0});

  std::vector<Transition> replay;
  replay.reserve(static_cast<std::size_t>(config.total_steps));
  State2 state = toy_env_reset(env, env_rng);
  int t_episode = 0;
  double actor_sum = 0, critic_sum = 0;
  int actor_n = 0, critic_n = 0;
  const std::size_t n_demo =
      demo.empty() ? 0 : static_cast<std::size_t>(std::llround(config.demo_ratio * config.batch_size));
  const std::size_t n_replay = config.batch_size - n_demo;
  const double noise_sigma = config.exploration_noise * env.a_max;

  for (std::int64_t step = 1; step <= config.total_steps; ++step) {
    Eigen::Vector2d action = policy.forward_one(state);
    for (int i = 0; i < 2; ++i) action[i] += noise_sigma * noise_rng.normal();
    action = clamp_action(env, action);
    const StepResult r = toy_env_step(env, state, action, ++t_episode);
    replay.push_back({state, action, r.reward, r.next_state, r.success ? 1 : 0});
    state = r.next_state;
    if (r.done) {
      state = toy_env_reset(env, env_rng);
      t_episode = 0;
    }

    const std::size_t pool = demo.size() + replay.size();
    if (pool >= config.batch_size) {
      std::vector<const Transition*> ptrs;
      ptrs.reserve(config.batch_size);
      for (std::size_t i = 0; i < n_replay; ++i) {
        const std::size_t k = sample_rng.index(pool);
        ptrs.push_back(k < demo.size() ? &demo.transitions[k] : &replay[k - demo.size()]);
      }
      std::vector<const Transition*> demo_ptrs;
      for (std::size_t i = 0; i < n_demo; ++i) demo_ptrs.push_back(&demo.transitions[sample_rng.index(demo.size())]);
      ptrs.insert(ptrs.end(), demo_ptrs.begin(), demo_ptrs.end());
      const Batch batch = make_batch(ptrs);

      critic_sum += critic_update(critic, critic_opt, target_critic, target_policy, batch, config, env.a_max, noise_rng);
      ++critic_n;
      if (step >= config.actor_start && step % config.policy_delay == 0) {
        const ActorLoss al = actor_loss(policy, critic, make_batch(demo_ptrs), batch.s, config.lambda);
        actor_opt.step(policy.params(), al.grad);
        actor_sum += al.loss;
        ++actor_n;
      }
      polyak_update(target_policy, policy, config.tau);
      polyak_update(target_critic.q1, critic.q1, config.tau);
      polyak_update(target_critic.q2, critic.q2, config.tau);
      if (!policy.all_finite() || !critic.q1.all_finite() || !critic.q2.all_finite()) {
        fail(ErrorKind::kTrainingDiverged, "non-finite parameters at step " + std::to_string(step), "step");
      }
    }

    if (step % config.eval_every == 0 || step == config.total_steps) {
      const double rate = evaluate_now();
      result.curve.push_back({step, rate, actor_n ? actor_sum / actor_n : 0.0, critic_n ? critic_sum / critic_n : 0.0});
      actor_sum = critic_sum = 0;
      actor_n = critic_n = 0;
      if (config.stop_at_success > 0 && rate >= config.stop_at_success) break;
    }
  }
  result.policy = std::move(policy);
  result.critic = std::move(critic);
  result.demo_digest_after = dataset_digest(demo);
  return result;
}

std::string curve_to_csv(const std::vector<CurvePoint>& curve) {
  std::string out = "step,success_rate,actor_loss,critic_loss\n";
  char buf[160];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g\n", static_cast<long long>(p.step), p.success_rate,
                  p.actor_loss, p.critic_loss);
    out += buf;
  }
  return out;
}

std::vector<CurvePoint> curve_from_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != "step,success_rate,actor_loss,critic_loss") {
    fail(ErrorKind::kParse, "curve CSV must start with the step,success_rate,actor_loss,critic_loss header");
  }
  std::vector<CurvePoint> curve;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    CurvePoint p;
    long long step = 0;
    int consumed = 0;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf%n", &step, &p.success_rate, &p.actor_loss, &p.critic_loss,
                    &consumed) != 4 ||
        static_cast<std::size_t>(consumed) != line.size()) {
      fail(ErrorKind::kParse, "bad curve CSV row at line " + std::to_string(lineno));
    }
    p.step = step;
    curve.push_back(p);
  }
  return curve;
}

}  // namespace crossinstruct::rl
