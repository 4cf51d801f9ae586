// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failures. Criteria can be selected by name on the command line.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <mutex>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Eigenvalues>

#include "crossinstruct/digest.hpp"
#include "crossinstruct/error.hpp"
#include "crossinstruct/geometry.hpp"
#include "crossinstruct/instruction.hpp"
#include "crossinstruct/lifting.hpp"
#include "crossinstruct/models.hpp"
#include "crossinstruct/pipeline.hpp"
#include "crossinstruct/rl/dataset.hpp"
#include "crossinstruct/rl/td3bc.hpp"
#include "crossinstruct/rl/toy_env.hpp"
#include "crossinstruct/service.hpp"
#include "fixture_a.hpp"

// After Eigen: <resolv.h> defines a _res macro.
#include <httplib.h>

namespace ci = crossinstruct;
namespace fs = std::filesystem;
using ci::geometry::CameraView;
using ci::geometry::Vec2;
using ci::geometry::Vec3;
using ci::lifting::Mat3;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

const fs::path kFixtures = CI_FIXTURE_DIR;
const fs::path kSlide = kFixtures / "slide";

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("ci_acceptance_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------- geometry

Outcome geometry_oracle() {
  const auto t0 = Clock::now();
  ci::Rng rng(1);
  double worst = 0;
  int failures = 0;
  std::string first_error;
  for (int k = 0; k < 1000; ++k) {
    const Vec3 p(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3));
    const double baseline = rng.uniform(20, 120) * std::numbers::pi / 180;
    const double d1 = rng.uniform(0.3, 2.5), d2 = rng.uniform(0.3, 2.5);
    const Vec3 a = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    Vec3 perp(rng.normal(), rng.normal(), rng.normal());
    perp = (perp - perp.dot(a) * a).normalized();
    const Vec3 b = std::cos(baseline) * a + std::sin(baseline) * perp;
    auto camera = [&](const Vec3& dir, double depth, const char* id) {
      CameraView v;
      v.id = id;
      v.intrinsics = {500, 500, 320, 240, 640, 480};
      v.pose.rotation = ci::geometry::look_rotation(-dir, Vec3(rng.normal(), rng.normal(), rng.normal()));
      v.pose.translation = p + depth * dir;
      return v;
    };
    const CameraView v1 = camera(a, d1, "a"), v2 = camera(b, d2, "b");
    // Trajectories need at least two waypoints; both sit on the point.
    const Vec2 u1 = ci::geometry::project_point(v1, p), u2 = ci::geometry::project_point(v2, p);
    ci::lifting::PixelTrajectory x1{"a", {u1, u1}}, x2{"b", {u2, u2}};
    ci::lifting::LiftingConfig cfg;
    cfg.epsilon_sigma = 1e-9;
    cfg.rng_seed = static_cast<std::uint64_t>(k);
    try {
      const auto dist = ci::lifting::lift_trajectory_pair(x1, x2, {v1, v2}, cfg);
      for (const auto& w : dist.waypoints) worst = std::max(worst, (w.mu - p).norm());
    } catch (const ci::Error& e) {
      if (failures++ == 0) first_error = e.what();
    }
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && worst <= 1e-4 && secs < 10,
          fmt("1000 fixtures, max |mu - truth| = %.3g m (tol 1e-4), failures %d%s%s, %.2f s (limit 10 s)", worst,
              failures, failures ? " first: " : "", first_error.c_str(), secs)};
}

// ---------------------------------------------------------------- lifting

double mean_trace(const ci::lifting::TrajectoryDistribution& d) {
  double s = 0;
  for (const auto& w : d.waypoints) s += w.sigma.trace();
  return s / static_cast<double>(d.horizon());
}

Outcome lifting_statistics() {
  const auto t0 = Clock::now();
  const auto [v1, v2] = ci::testing::fixture_a();
  const double bound = 3.0 * std::sqrt(2.0);
  double worst_reproj = 0, worst_eig = 0;
  int not_increased = 0;
  double worst_ratio = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ci::Rng rng = ci::Rng::derive(seed, {99});
    const Vec3 a(rng.uniform(-0.3, 0.0), rng.uniform(-0.2, 0.2), rng.uniform(0.8, 1.2));
    const Vec3 b(rng.uniform(0.0, 0.3), rng.uniform(-0.2, 0.2), rng.uniform(0.8, 1.2));
    const auto line = ci::testing::straight_line(a, b, 10);
    auto [xi1, xi2] = ci::testing::project_to_fixture(line, 2.0);
    ci::lifting::LiftingConfig cfg;
    cfg.rng_seed = seed;
    const auto full = ci::lifting::lift_trajectory_pair(xi1, xi2, {v1, v2}, cfg);
    for (std::size_t t = 0; t < full.horizon(); ++t) {
      const auto& w = full.waypoints[t];
      worst_reproj = std::max({worst_reproj, (ci::geometry::project_point(v1, w.mu) - xi1.points[t]).norm(),
                               (ci::geometry::project_point(v2, w.mu) - xi2.points[t]).norm()});
      worst_eig = std::min(worst_eig, Eigen::SelfAdjointEigenSolver<Mat3>(w.sigma).eigenvalues().minCoeff());
    }
    xi1.sigma /= 2;
    xi2.sigma /= 2;
    const auto half = ci::lifting::lift_trajectory_pair(xi1, xi2, {v1, v2}, cfg);
    const double ratio = mean_trace(half) / mean_trace(full);
    worst_ratio = std::max(worst_ratio, ratio);
    if (ratio <= 1.0) ++not_increased;
  }
  const double secs = seconds_since(t0);
  return {worst_reproj <= bound && worst_eig >= -1e-12 && not_increased == 20 && secs < 60,
          fmt("max reprojection %.3f px (tol %.3f), min eigenvalue %.2e, halved-sigma trace not increased on %d/20 "
              "seeds (worst ratio %.3f), %.2f s (limit 60 s)",
              worst_reproj, bound, worst_eig, not_increased, worst_ratio, secs)};
}

Outcome distribution_laws() {
  const auto d = ci::testing::reach_distribution(0);
  ci::Rng rng(17);

  // Factorization against an independent per-waypoint Gaussian.
  double worst_fact = 0;
  for (int k = 0; k < 100; ++k) {
    const auto x = ci::lifting::sample_trajectory(d, rng);
    double ref = 0;
    for (std::size_t t = 0; t < d.horizon(); ++t) {
      const auto& w = d.waypoints[t];
      const Eigen::LLT<Mat3> llt(w.sigma);
      const Vec3 z = llt.matrixL().solve(x[t] - w.mu);
      const double logdet = 2 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
      ref += -0.5 * (3 * std::log(2 * std::numbers::pi) + logdet + z.squaredNorm());
    }
    worst_fact = std::max(worst_fact, std::abs(ci::lifting::log_density(d, x) - ref) / std::max(1.0, std::abs(ref)));
  }

  auto zero = d;
  for (auto& w : zero.waypoints) w.sigma.setZero();
  bool exact = true;
  for (std::uint64_t s = 0; s < 20; ++s) {
    ci::Rng r(s);
    exact = exact && ci::lifting::sample_trajectory(zero, r) == ci::lifting::mean_trajectory(zero);
  }

  const int n = 10000;
  std::vector<Vec3> sum(d.horizon(), Vec3::Zero());
  std::vector<Mat3> sum2(d.horizon(), Mat3::Zero());
  for (int i = 0; i < n; ++i) {
    const auto x = ci::lifting::sample_trajectory(d, rng);
    for (std::size_t t = 0; t < d.horizon(); ++t) {
      sum[t] += x[t];
      sum2[t] += x[t] * x[t].transpose();
    }
  }
  double worst_mu = 0, worst_sigma = 0;
  for (std::size_t t = 0; t < d.horizon(); ++t) {
    const auto& w = d.waypoints[t];
    const Vec3 m = sum[t] / n;
    const Mat3 c = sum2[t] / n - m * m.transpose();
    // Mean error relative to the waypoint spread, covariance error relative to its norm.
    worst_mu = std::max(worst_mu, (m - w.mu).norm() / std::sqrt(w.sigma.trace()));
    worst_sigma = std::max(worst_sigma, (c - w.sigma).norm() / w.sigma.norm());
  }
  return {worst_fact <= 1e-12 && exact && worst_mu <= 0.1 && worst_sigma <= 0.1,
          fmt("factorization rel err %.2e (tol 1e-12), zero-cov sample == mean %s, 1e4-sample mean err %.3f sd, "
              "cov rel err %.3f (tol 0.10)",
              worst_fact, exact ? "bit-exact" : "MISMATCH", worst_mu, worst_sigma)};
}

// ---------------------------------------------------------------- determinism

std::string slurp(const fs::path& p) { return ci::read_file_text(p); }

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

int run_cli(const std::string& args) {
  const std::string cmd = "'" + std::string(CI_CLI_PATH) + "' " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Uploads the slide fixtures to a fresh service over HTTP and returns the
// exported plan bytes.
std::string api_plan(const std::string& name) {
  ci::service::ServiceConfig config;
  config.data_dir = fresh_dir(name);
  config.scenario_dir = kFixtures / "scenarios";
  ci::service::Service svc(config);
  int port = 0;
  std::mutex m;
  std::condition_variable cv;
  std::thread server([&] {
    svc.listen("127.0.0.1", 0, [&](int p) {
      std::lock_guard lock(m);
      port = p;
      cv.notify_all();
    });
  });
  {
    std::unique_lock lock(m);
    cv.wait(lock, [&] { return port != 0; });
  }
  std::string out;
  {
    httplib::Client cli("127.0.0.1", port);
    cli.set_read_timeout(30, 0);
    httplib::MultipartFormDataItems items = {
        {"calibration", slurp(kFixtures / "fixture_a" / "calibration.json"), "calibration.json", "application/json"},
        {"image_view1", slurp(kSlide / "view1.png"), "view1.png", "image/png"},
        {"image_view2", slurp(kSlide / "view2.png"), "view2.png", "image/png"}};
    const auto scene = cli.Post("/api/v1/scenes", items);
    if (scene && scene->status == 201) {
      const std::string scene_id = ci::Json::parse(scene->body)["id"];
      const ci::Json ib{{"instruction", ci::Json::parse(slurp(kSlide / "instruction.json"))}, {"scene_id", scene_id}};
      const auto instr = cli.Post("/api/v1/instructions", ib.dump(), "application/json");
      if (instr && instr->status == 201) {
        const ci::Json pb{{"scene_id", scene_id},
                          {"instruction_id", ci::Json::parse(instr->body)["id"]},
                          {"backend", "scripted:SCEN-SLIDE"},
                          {"config", ci::Json::parse(slurp(kSlide / "slide_config.json"))}};
        const auto created = cli.Post("/api/v1/plans", pb.dump(), "application/json");
        if (created && created->status == 202) {
          const std::string url = ci::Json::parse(created->body)["status_url"];
          std::string status;
          for (int i = 0; i < 1500 && status != "done" && status != "failed"; ++i) {
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
            status = ci::Json::parse(cli.Get(url)->body)["status"];
          }
          if (status == "done") out = cli.Get(url + "/plan")->body;
        }
      }
    }
  }
  svc.stop();
  server.join();
  return out;
}

Outcome end_to_end_determinism() {
  const std::string golden = slurp(kSlide / "golden_plan.json");
  const auto dir = fresh_dir("cli");
  int cli_equal = 0, api_equal = 0;
  for (int i = 0; i < 3; ++i) {
    const fs::path out = dir / ("plan" + std::to_string(i) + ".json");
    const int code = run_cli("plan --instruction " + q(kSlide / "instruction.json") + " --scene " +
                             q(kSlide / "scene.json") + " --config " + q(kSlide / "slide_config.json") +
                             " --scenario SCEN-SLIDE --scenario-dir " + q(kFixtures / "scenarios") + " --out " +
                             q(out));
    if (code == 0 && slurp(out) == golden) ++cli_equal;
    if (api_plan("api" + std::to_string(i)) == golden) ++api_equal;
  }
  return {cli_equal == 3 && api_equal == 3,
          fmt("SCEN-SLIDE: CLI %d/3 and HTTP API %d/3 runs byte-identical to the golden plan", cli_equal, api_equal)};
}

// ---------------------------------------------------------------- td3+bc

template <class F>
VectorXd central_differences(const ci::rl::Mlp& net, F loss, double h = 1e-5) {
  VectorXd g(net.params().size());
  ci::rl::Mlp p = net;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double x = p.params()[i];
    p.params()[i] = x + h;
    const double lp = loss(p);
    p.params()[i] = x - h;
    const double lm = loss(p);
    p.params()[i] = x;
    g[i] = (lp - lm) / (2 * h);
  }
  return g;
}

ci::rl::Batch random_batch(ci::Rng& rng, int n, double a_max) {
  std::vector<ci::rl::Transition> trs;
  for (int i = 0; i < n; ++i) {
    VectorXd s(2), a(2);
    s << rng.uniform(-1, 1), rng.uniform(-1, 1);
    a << rng.uniform(-a_max, a_max), rng.uniform(-a_max, a_max);
    trs.push_back({s, a, static_cast<double>(rng.index(2)), s + a, static_cast<int>(rng.index(2))});
  }
  return ci::rl::make_batch(trs);
}

Outcome td3bc_correctness() {
  using namespace ci::rl;
  ci::Rng rng(2024);
  double worst_actor = 0, worst_critic = 0;
  bool exact = true;
  for (int k = 0; k < 20; ++k) {
    const int hidden = 3 + static_cast<int>(rng.index(8));
    const double a_max = rng.uniform(0.05, 0.5);
    Mlp policy = make_policy(2, 2, a_max, hidden);
    TwinCritic critic = make_critic(2, 2, a_max, hidden);
    policy.init(rng);
    critic.q1.init(rng);
    critic.q2.init(rng);
    const Batch b = random_batch(rng, 8, a_max);
    const double lambda = rng.uniform();

    const auto al = actor_loss(policy, critic, b, lambda);
    const VectorXd an = central_differences(policy, [&](const Mlp& p) { return actor_loss(p, critic, b, lambda).loss; });
    worst_actor = std::max(worst_actor, (al.grad - an).norm() / std::max(an.norm(), 1e-12));

    const VectorXd y = VectorXd::Random(b.size());
    VectorXd cg = VectorXd::Zero(critic.q1.params().size());
    critic_loss(critic.q1, b, y, &cg, a_max);
    const VectorXd cn = central_differences(critic.q1, [&](const Mlp& n) { return critic_loss(n, b, y, nullptr, a_max); });
    worst_critic = std::max(worst_critic, (cg - cn).norm() / std::max(cn.norm(), 1e-12));

    // lambda = 1 is pure BC, lambda = 0 is pure -Q1.
    const MatrixXd pi = policy.forward(b.s);
    const double bc = (pi - b.a).colwise().squaredNorm().mean();
    const double q1 = critic.q1.forward(critic.input(b.s, pi)).mean();
    exact = exact && actor_loss(policy, critic, b, 1.0).loss == bc && actor_loss(policy, critic, b, 0.0).loss == -q1;
  }
  return {worst_actor <= 1e-4 && worst_critic <= 1e-4 && exact,
          fmt("20 nets: actor grad rel err %.2e, critic grad rel err %.2e (tol 1e-4), lambda endpoint reductions %s",
              worst_actor, worst_critic, exact ? "exact" : "INEXACT")};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// Best evaluation after at least one training step.
double best_after_start(const ci::rl::TrainResult& r) {
  double best = 0;
  for (const auto& p : r.curve)
    if (p.step > 0) best = std::max(best, p.success_rate);
  return best;
}

std::string list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt("%.2f", x);
  return s;
}

Outcome rl_initialization() {
  const auto t0 = Clock::now();
  const auto dist = ci::testing::reach_distribution(0);
  const ci::rl::ToyEnv env;
  std::vector<double> demo_best, demo_final, scratch_best, scratch_final;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ci::rl::TD3BCConfig config;
    config.seed = seed;
    const auto demo = ci::rl::build_demo_dataset(dist, env, 50, seed);
    const auto r = ci::rl::td3bc_train(env, demo, config);
    demo_best.push_back(best_after_start(r));
    demo_final.push_back(r.curve.back().success_rate);

    // Plain TD3: no demos, lambda 0, and actor updates from the first step
    // since there is no pretrained policy for a critic-only phase to protect.
    config.lambda = 0;
    config.actor_start = 0;
    const auto s = ci::rl::td3bc_train(env, {}, config);
    scratch_best.push_back(best_after_start(s));
    scratch_final.push_back(s.curve.back().success_rate);
  }
  const double secs = seconds_since(t0);
  const double dm = median(demo_best), sm = median(scratch_best);
  return {dm >= 0.9 && sm <= 0.1 && secs < 900,
          fmt("40000 steps, 5 seeds: demo-initialized median best %.2f (>= 0.90) [%s] final [%s]; from scratch median "
              "best %.2f (<= 0.10) [%s] final [%s]; %.0f s (limit 900 s)",
              dm, list(demo_best).c_str(), list(demo_final).c_str(), sm, list(scratch_best).c_str(),
              list(scratch_final).c_str(), secs)};
}

// ---------------------------------------------------------------- formats

ci::instruction::CrossModalInstruction random_instruction(ci::Rng& rng) {
  using namespace ci::instruction;
  CrossModalInstruction instr;
  instr.image_ref = "img" + std::to_string(rng.index(1000));
  const int w = 16 + static_cast<int>(rng.index(300)), h = 16 + static_cast<int>(rng.index(300));
  if (rng.uniform() < 0.7) instr.image_size = std::array<int, 2>{w, h};
  const int n_strokes = static_cast<int>(rng.index(4));
  for (int s = 0; s < n_strokes; ++s) {
    Stroke st;
    st.kind = static_cast<StrokeKind>(rng.index(3));
    const int n = 2 + static_cast<int>(rng.index(8));
    for (int i = 0; i < n; ++i) st.points.emplace_back(rng.uniform(0, w - 1), rng.uniform(0, h - 1));
    for (auto& c : st.style.rgba) c = static_cast<std::uint8_t>(rng.index(256));
    st.style.width = rng.uniform(0.5, 8);
    instr.strokes.push_back(st);
  }
  const int n_labels = (n_strokes == 0 ? 1 : 0) + static_cast<int>(rng.index(3));
  static const char* kTexts[] = {"push", "twice \xE2\x86\x90", "grip \"here\"", "\xE6\x8A\xBC\xE3\x81\x99", "a\\b\n"};
  for (int l = 0; l < n_labels; ++l) {
    instr.labels.push_back({kTexts[rng.index(5)], Vec2(rng.uniform(0, w - 1), rng.uniform(0, h - 1))});
  }
  return instr;
}

ci::models::ScriptedScenario random_scenario(ci::Rng& rng) {
  ci::models::ScriptedScenario s;
  s.name = "S" + std::to_string(rng.index(100000));
  const int n = static_cast<int>(rng.index(12));
  for (int i = 0; i < n; ++i) {
    ci::Json resp;
    resp["pixel"] = {rng.uniform(-10, 110), rng.uniform(-10, 110)};
    resp["note"] = std::string(1 + rng.index(5), static_cast<char>('a' + rng.index(26)));
    s.entries.push_back({std::string(ci::models::kRequestKinds[rng.index(4)]),
                         ci::sha256_hex(std::to_string(rng.next())), resp});
  }
  return s;
}

ci::pipeline::MotionPlan random_plan(ci::Rng& rng) {
  ci::pipeline::MotionPlan plan;
  const int h = 2 + static_cast<int>(rng.index(30));
  const int switch_at = static_cast<int>(rng.index(h + 1));
  for (int t = 1; t <= h; ++t) {
    Mat3 a;
    for (int i = 0; i < 9; ++i) a(i / 3, i % 3) = rng.normal();
    const Vec3 mu(rng.normal(), rng.normal(), rng.normal());
    plan.distribution.waypoints.push_back({t, mu, 1e-3 * a * a.transpose(), static_cast<std::size_t>(rng.index(1000))});
    Eigen::Vector4d quat(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    quat.normalize();
    plan.steps.push_back({t, mu, {quat[0], quat[1], quat[2], quat[3]}, switch_at > 0 && t >= switch_at ? 1 : 0});
  }
  plan.provenance = {rng.uniform() < 0.5 ? "live" : "scenario:S" + std::to_string(rng.index(99)), rng.next(),
                     ci::sha256_hex(std::to_string(rng.next()))};
  return plan;
}

ci::rl::DemoDataset random_dataset(ci::Rng& rng) {
  ci::rl::DemoDataset d;
  const int n = static_cast<int>(rng.index(40));
  for (int i = 0; i < n; ++i) {
    VectorXd s(2), a(2), s2(2);
    s << rng.normal(), rng.normal();
    a << rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05);
    s2 = s + a;
    d.transitions.push_back({s, a, static_cast<double>(rng.index(2)), s2, static_cast<int>(rng.index(2))});
  }
  d.source = {{"rng_seed", rng.next()}, {"rollouts", rng.index(100)}};
  return d;
}

std::vector<CameraView> random_calibration(ci::Rng& rng) {
  std::vector<CameraView> views;
  const int n = 1 + static_cast<int>(rng.index(4));
  for (int i = 0; i < n; ++i) {
    CameraView v;
    v.id = "v" + std::to_string(i);
    v.intrinsics.width = 64 + static_cast<int>(rng.index(1200));
    v.intrinsics.height = 64 + static_cast<int>(rng.index(900));
    v.intrinsics.fx = rng.uniform(50, 1500);
    v.intrinsics.fy = v.intrinsics.fx * rng.uniform(0.9, 1.1);
    v.intrinsics.cx = rng.uniform(0.3, 0.7) * v.intrinsics.width;
    v.intrinsics.cy = rng.uniform(0.3, 0.7) * v.intrinsics.height;
    v.pose.rotation = ci::geometry::look_rotation(Vec3(rng.normal(), rng.normal(), rng.normal()).normalized(),
                                                  Vec3(rng.normal(), rng.normal(), rng.normal()));
    v.pose.translation = Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    views.push_back(v);
  }
  return views;
}

Outcome format_round_trips() {
  ci::Rng rng(77);
  const int n = 200;
  int instr = 0, scen = 0, plan = 0, data = 0, calib = 0;
  for (int k = 0; k < n; ++k) {
    const auto i = random_instruction(rng);
    const auto ib = ci::instruction::serialize_instruction(i);
    const auto ip = ci::instruction::parse_instruction(ib);
    instr += ip == i && ci::instruction::serialize_instruction(ip) == ib;

    const auto s = random_scenario(rng);
    const auto sb = ci::models::serialize_scenario(s);
    const auto sp = ci::models::parse_scenario(sb);
    scen += sp == s && ci::models::serialize_scenario(sp) == sb;

    const auto p = random_plan(rng);
    const auto pb = ci::pipeline::export_plan(p);
    const auto pp = ci::pipeline::import_plan(pb);
    plan += pp == p && ci::pipeline::export_plan(pp) == pb;

    const auto d = random_dataset(rng);
    const auto db = ci::rl::serialize_dataset(d);
    const auto dp = ci::rl::parse_dataset(db);
    data += dp == d && ci::rl::serialize_dataset(dp) == db;

    const auto c = random_calibration(rng);
    const auto cb = ci::geometry::calibration_to_json(c).dump();
    const auto cp = ci::geometry::calibration_from_json(ci::Json::parse(cb));
    calib += cp == c && ci::geometry::calibration_to_json(cp).dump() == cb;
  }
  const bool pass = instr == n && scen == n && plan == n && data == n && calib == n;
  return {pass, fmt("parse(serialize(x)) == x on %d random inputs each: instruction %d, scenario %d, plan %d, "
                    "dataset %d, calibration %d",
                    n, instr, scen, plan, data, calib)};
}

struct Criterion {
  const char* name;
  Outcome (*run)();
};

const Criterion kCriteria[] = {
    {"geometry-oracle", geometry_oracle},
    {"lifting-statistics", lifting_statistics},
    {"distribution-laws", distribution_laws},
    {"end-to-end-determinism", end_to_end_determinism},
    {"td3bc-correctness", td3bc_correctness},
    {"rl-initialization", rl_initialization},
    {"format-round-trips", format_round_trips},
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& c : kCriteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  fs::remove_all(fs::temp_directory_path() / ("ci_acceptance_" + std::to_string(::getpid())));
  return failures;
}
