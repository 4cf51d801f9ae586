#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <regex>
#include <set>

#include "crossinstruct/error.hpp"
#include "crossinstruct/pipeline.hpp"
#include "fixture_a.hpp"
#include "slide_backend.hpp"

namespace ci = crossinstruct;
using namespace ci::pipeline;
namespace fs = std::filesystem;
using ci::geometry::Vec3;

namespace {

const fs::path kFixtures = CI_FIXTURE_DIR;
const fs::path kSlide = kFixtures / "slide";

struct SlideRun {
  ci::instruction::CrossModalInstruction instr;
  SceneInput scene;
  PipelineConfig config;

  SlideRun() {
    instr = ci::instruction::parse_instruction(ci::read_file_text(kSlide / "instruction.json"));
    const auto bundle = ci::instruction::parse_scene_bundle(ci::read_file_text(kSlide / "scene.json"));
    scene = load_scene_input(bundle, kSlide, instr, kSlide);
    config = pipeline_config_from_json(ci::Json::parse(ci::read_file_text(kSlide / "slide_config.json")));
  }

  PipelineResult run(ci::models::ModelBackend& backend) const { return run_pipeline(instr, scene, config, backend); }
  PipelineResult run_scripted() const {
    ci::models::ScriptedBackend backend(
        ci::models::parse_scenario(ci::read_file_text(kFixtures / "scenarios" / "SCEN-SLIDE.json")));
    return run(backend);
  }
};

// SlideBackend with one descriptor's pointing answers failing.
class FailingPointBackend : public ci::models::ModelBackend {
 public:
  FailingPointBackend(std::size_t bad_index, ci::ErrorKind kind) : bad_(bad_index), kind_(kind) {}
  ci::Json complete(const ci::models::ModelRequest& request) override {
    if (request.kind == ci::models::kind::kPoint && request.payload.at("descriptor_index") == bad_ &&
        request.payload.at("view_id") == "view2") {
      if (kind_ == ci::ErrorKind::kInvalidResponse) return ci::Json{{"pixel", "nowhere"}};
      ci::fail(kind_, "simulated failure");
    }
    return inner_.complete(request);
  }
  std::string name() const override { return "failing"; }

 private:
  ci::testing::SlideBackend inner_;
  std::size_t bad_;
  ci::ErrorKind kind_;
};

ci::Error error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ci::Error& e) {
    return e;
  }
  ADD_FAILURE() << "no error raised";
  return ci::Error(ci::ErrorKind::kIo, "none");
}

MotionPlan plan_from_distribution(const ci::lifting::TrajectoryDistribution& dist, int gripper_switch_at = 0) {
  MotionPlan plan;
  plan.distribution = dist;
  for (const auto& w : dist.waypoints) {
    plan.steps.push_back({w.t, w.mu, {}, gripper_switch_at > 0 && w.t >= gripper_switch_at ? 1 : 0});
  }
  plan.provenance = {"test", 0, "none"};
  return plan;
}

double distance_to_polyline(const std::vector<Vec3>& line, const Vec3& p) {
  double best = INFINITY;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const Vec3 d = line[i + 1] - line[i];
    const double s = std::clamp((p - line[i]).dot(d) / d.squaredNorm(), 0.0, 1.0);
    best = std::min(best, (line[i] + s * d - p).norm());
  }
  return best;
}

}  // namespace

TEST(Pipeline, ScriptedSlideMatchesGolden) {
  const SlideRun s;
  EXPECT_EQ(s.config.lifting.rng_seed, 7u);
  const auto result = s.run_scripted();
  EXPECT_EQ(export_plan(result.plan), ci::read_file_text(kSlide / "golden_plan.json"));
  EXPECT_EQ(result.plan.provenance.source, "scenario:SCEN-SLIDE");
  EXPECT_EQ(result.plan.provenance.config_digest, config_digest(s.config));
  EXPECT_EQ(result.descriptors.size(), 3u);
  EXPECT_EQ(result.pointed.size(), 6u);
}

TEST(Pipeline, GoldenParsesRevalidatesAndFollowsTheScene) {
  const auto plan = import_plan(ci::read_file_text(kSlide / "golden_plan.json"));
  EXPECT_NO_THROW(validate(plan));
  ASSERT_EQ(plan.steps.size(), 20u);
  // Independent check against the scene geometry the scenario was recorded from.
  const auto path = ci::testing::slide_scene().path(200);
  for (const auto& s : plan.steps) EXPECT_LT(distance_to_polyline(path, s.position), 0.02) << "t=" << s.t;
  EXPECT_LT((plan.steps.front().position - path.front()).norm(), 0.02);
  EXPECT_LT((plan.steps.back().position - path.back()).norm(), 0.02);
}

TEST(Pipeline, RepeatedRunsAreIdentical) {
  const SlideRun s;
  const auto a = s.run_scripted();
  const auto b = s.run_scripted();
  EXPECT_EQ(a.plan, b.plan);
  SlideRun threaded;
  threaded.config.lifting.threads = 4;
  EXPECT_EQ(threaded.run_scripted().plan.distribution, a.plan.distribution);
}

TEST(Pipeline, SeedChangesDistributionOnly) {
  // The pose-schedule request carries the lifted mean, so a recorded scenario
  // only replays for its own seed; use the synthetic backend instead.
  SlideRun s;
  ci::testing::SlideBackend backend;
  const auto a = s.run(backend);
  s.config.lifting.rng_seed = 8;
  const auto b = s.run(backend);
  EXPECT_NE(a.plan.distribution, b.plan.distribution);
  EXPECT_EQ(a.plan.steps.size(), b.plan.steps.size());
  for (std::size_t i = 0; i < a.plan.steps.size(); ++i) {
    EXPECT_EQ(a.plan.steps[i].orientation, b.plan.steps[i].orientation);
    EXPECT_LT((a.plan.steps[i].position - b.plan.steps[i].position).norm(), 0.01);
  }
}

TEST(Pipeline, RecordedScenarioIsSeedSpecific) {
  SlideRun s;
  s.config.lifting.rng_seed = 8;
  const auto e = error_of([&] { s.run_scripted(); });
  EXPECT_EQ(e.kind(), ci::ErrorKind::kScenarioIncomplete);
  EXPECT_EQ(e.stage(), "pose-schedule");
}

TEST(Pipeline, TraceListsEveryStageInOrder) {
  const SlideRun s;
  ci::models::ScriptedBackend backend(
      ci::models::parse_scenario(ci::read_file_text(kFixtures / "scenarios" / "SCEN-SLIDE.json")));
  const auto result = run_pipeline(s.instr, s.scene, s.config, backend, [] { return "2024-01-01T00:00:00Z"; });
  ASSERT_EQ(result.trace.size(), kStages.size());
  const std::regex hex("[0-9a-f]{64}");
  for (std::size_t i = 0; i < kStages.size(); ++i) {
    EXPECT_EQ(result.trace[i].stage, kStages[i]);
    EXPECT_EQ(result.trace[i].started_at, "2024-01-01T00:00:00Z");
    EXPECT_TRUE(std::regex_match(result.trace[i].input_digest, hex));
    EXPECT_TRUE(std::regex_match(result.trace[i].output_digest, hex));
  }
  const auto lines = trace_to_jsonl(result.trace);
  EXPECT_EQ(std::count(lines.begin(), lines.end(), '\n'), 9);
  EXPECT_EQ(ci::Json::parse(lines.substr(0, lines.find('\n')))["stage"], "scene-validate");
}

TEST(Pipeline, ZeroBaselineFailsAtSceneValidate) {
  SlideRun s;
  auto& views = s.scene.bundle.views;
  const std::string id2 = views[1].camera.id;
  views[1].camera = views[0].camera;
  views[1].camera.id = id2;
  ci::testing::SlideBackend backend;
  const auto e = error_of([&] { s.run(backend); });
  EXPECT_EQ(e.kind(), ci::ErrorKind::kValidation);
  EXPECT_EQ(e.stage(), "scene-validate");
  EXPECT_NE(std::string(e.what()).find("baseline"), std::string::npos);
}

TEST(Pipeline, ImageSizeMismatchFailsAtSceneValidate) {
  SlideRun s;
  s.scene.view_images["view2"] = ci::Image(50, 50);
  ci::testing::SlideBackend backend;
  EXPECT_EQ(error_of([&] { s.run(backend); }).stage(), "scene-validate");
}

TEST(Pipeline, FailedPointingDropsDescriptorAndReindexes) {
  for (const auto kind : {ci::ErrorKind::kTransport, ci::ErrorKind::kInvalidResponse}) {
    const SlideRun s;
    FailingPointBackend backend(1, kind);
    const auto result = s.run(backend);
    ASSERT_EQ(result.descriptors.size(), 2u);
    EXPECT_EQ(result.descriptors[0].label, "block");
    EXPECT_EQ(result.descriptors[1].label, "target");
    ASSERT_EQ(result.pointed.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_EQ(result.pointed[i].descriptor_index, i / 2);
      EXPECT_EQ(result.pointed[i].view_id, i % 2 == 0 ? "view1" : "view2");
    }
    const auto& diags = result.trace[3].diagnostics;
    ASSERT_FALSE(diags.empty());
    EXPECT_NE(diags[0].find("dropped keypoint 1"), std::string::npos);
  }
}

TEST(Pipeline, OtherPointingErrorsPropagate) {
  const SlideRun s;
  FailingPointBackend backend(0, ci::ErrorKind::kScenarioIncomplete);
  const auto e = error_of([&] { s.run(backend); });
  EXPECT_EQ(e.kind(), ci::ErrorKind::kScenarioIncomplete);
  EXPECT_EQ(e.stage(), "pointing");
}

TEST(Pipeline, TooFewKeypoints) {
  SlideRun s;
  s.config.min_descriptors = 4;
  ci::testing::SlideBackend backend;
  auto e = error_of([&] { s.run(backend); });
  EXPECT_EQ(e.kind(), ci::ErrorKind::kInsufficientKeypoints);
  EXPECT_EQ(e.stage(), "keypoints");

  s.config.min_descriptors = 3;
  FailingPointBackend failing(2, ci::ErrorKind::kTransport);
  e = error_of([&] { s.run(failing); });
  EXPECT_EQ(e.kind(), ci::ErrorKind::kInsufficientKeypoints);
  EXPECT_EQ(e.stage(), "pointing");
}

TEST(Pipeline, ScenarioFromOtherInstructionIsIncomplete) {
  SlideRun s;
  s.instr.labels[0].text = "pull";
  ci::models::ScriptedBackend backend(
      ci::models::parse_scenario(ci::read_file_text(kFixtures / "scenarios" / "SCEN-SLIDE.json")));
  const auto e = error_of([&] { s.run(backend); });
  EXPECT_EQ(e.kind(), ci::ErrorKind::kScenarioIncomplete);
  EXPECT_EQ(e.stage(), "keypoints");
}

TEST(Pipeline, ConfigJsonRoundTrip) {
  PipelineConfig c;
  c.horizon = 33;
  c.pixel_variance = 1.5;
  c.lifting.delta = 0.02;
  c.lifting.rng_seed = 99;
  EXPECT_EQ(pipeline_config_from_json(pipeline_config_to_json(c)), c);
  EXPECT_EQ(pipeline_config_from_json(ci::Json::object()), PipelineConfig{});
  EXPECT_NE(config_digest(c), config_digest(PipelineConfig{}));
  EXPECT_THROW(pipeline_config_from_json({{"horizon", 1}}), ci::Error);
}

TEST(PlanFile, RoundTripAndTruncation) {
  const auto text = ci::read_file_text(kSlide / "golden_plan.json");
  const auto plan = import_plan(text);
  EXPECT_EQ(import_plan(export_plan(plan)), plan);
  EXPECT_EQ(export_plan(plan), text);
  for (std::size_t cut : {std::size_t{0}, std::size_t{1}, text.size() / 3, text.size() - 3}) {
    EXPECT_EQ(error_of([&] { import_plan(text.substr(0, cut)); }).kind(), ci::ErrorKind::kParse) << cut;
  }
}

TEST(PlanFile, SchemaViolationsAreParseErrors) {
  const auto j = ci::Json::parse(ci::read_file_text(kSlide / "golden_plan.json"));
  auto bad = j;
  bad["steps"][3]["position"][0] = 5.0;
  EXPECT_EQ(error_of([&] { plan_from_json(bad); }).kind(), ci::ErrorKind::kParse);
  bad = j;
  bad["steps"].erase(bad["steps"].size() - 1);
  EXPECT_EQ(error_of([&] { plan_from_json(bad); }).kind(), ci::ErrorKind::kParse);
  bad = j;
  bad["steps"][0]["quaternion"] = {2, 0, 0, 0};
  EXPECT_EQ(error_of([&] { plan_from_json(bad); }).kind(), ci::ErrorKind::kParse);
  bad = j;
  bad.erase("provenance");
  EXPECT_EQ(error_of([&] { plan_from_json(bad); }).kind(), ci::ErrorKind::kParse);
}

TEST(PlanFile, RandomPlansRoundTrip) {
  ci::Rng rng(21);
  for (int k = 0; k < 50; ++k) {
    ci::lifting::TrajectoryDistribution dist;
    const int h = 2 + static_cast<int>(rng.index(15));
    for (int t = 1; t <= h; ++t) {
      ci::lifting::Mat3 a = ci::lifting::Mat3::Random();
      dist.waypoints.push_back({t, Vec3(rng.normal(), rng.normal(), rng.normal()), 1e-3 * a * a.transpose(),
                                static_cast<std::size_t>(rng.index(1000))});
    }
    auto plan = plan_from_distribution(dist, static_cast<int>(rng.index(h + 1)));
    plan.provenance = {"scenario:X", rng.next(), ci::sha256_hex(std::to_string(k))};
    const double n = std::sqrt(30.0);
    plan.steps[0].orientation = {1 / n, 2 / n, 3 / n, 4 / n};
    ASSERT_EQ(import_plan(export_plan(plan)), plan);
  }
}

TEST(Diagnostics, DegenerateLiftReprojectsExactly) {
  const auto [v1, v2] = ci::testing::fixture_a();
  const auto truth = ci::testing::straight_line(Vec3(-0.3, -0.1, 0.9), Vec3(0.1, 0.2, 1.1), 15);
  const auto xi = ci::testing::project_to_fixture(truth);
  ci::lifting::LiftingConfig cfg;
  cfg.epsilon_sigma = 1e-9;
  const auto plan = plan_from_distribution(ci::lifting::lift_trajectory_pair(xi.first, xi.second, {v1, v2}, cfg));
  const ci::instruction::SceneBundle bundle{{{v1, "a.png"}, {v2, "b.png"}}};
  const auto report = plan_diagnostics(plan, bundle, xi);
  ASSERT_EQ(report.reprojection_error.size(), 15u);
  for (const auto& e : report.reprojection_error) {
    EXPECT_LE(e[0], 0.5);
    EXPECT_LE(e[1], 0.5);
  }
  EXPECT_EQ(report.gripper_transitions, 0);
}

TEST(Diagnostics, DefaultLiftWithinThreeSigma) {
  const auto [v1, v2] = ci::testing::fixture_a();
  const auto truth = ci::testing::straight_line(Vec3(-0.3, -0.1, 0.9), Vec3(0.1, 0.2, 1.1), 15);
  const auto xi = ci::testing::project_to_fixture(truth, 2.0);
  const auto plan = plan_from_distribution(
      ci::lifting::lift_trajectory_pair(xi.first, xi.second, {v1, v2}, ci::lifting::LiftingConfig{}), 5);
  const ci::instruction::SceneBundle bundle{{{v1, "a.png"}, {v2, "b.png"}}};
  const auto report = plan_diagnostics(plan, bundle, xi);
  EXPECT_LE(report.max_reprojection_error, 3.0 * std::sqrt(2.0));
  EXPECT_GT(report.max_sigma_trace, 0.0);
  EXPECT_EQ(report.gripper_transitions, 1);
  const auto j = plan_report_to_json(report);
  EXPECT_EQ(j["reprojection_error"].size(), 15u);
  EXPECT_EQ(j["gripper_transitions"], 1);
}

TEST(Diagnostics, BehindCameraIsInfinite) {
  const auto [v1, v2] = ci::testing::fixture_a();
  const auto xi = ci::testing::project_to_fixture(ci::testing::straight_line(Vec3(0, 0, 1), Vec3(0.1, 0, 1), 3));
  auto plan = plan_from_distribution(ci::lifting::lift_trajectory_pair(xi.first, xi.second, {v1, v2}, {}));
  plan.distribution.waypoints[1].mu = Vec3(0, 0, -1);
  const ci::instruction::SceneBundle bundle{{{v1, "a.png"}, {v2, "b.png"}}};
  EXPECT_TRUE(std::isinf(plan_diagnostics(plan, bundle, xi).max_reprojection_error));
}
