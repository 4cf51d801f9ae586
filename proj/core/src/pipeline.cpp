#include "crossinstruct/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <limits>
#include <tuple>

#include "crossinstruct/error.hpp"

namespace crossinstruct::pipeline {

namespace {

std::string json_digest(const Json& j) { return sha256_hex(canonical_json(j)); }

Json vec3_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Json polyline_json(const std::vector<geometry::Vec2>& pts) {
  Json out = Json::array();
  for (const auto& p : pts) out.push_back({p.x(), p.y()});
  return out;
}

// Runs one stage, records its trace entry and tags any error with the stage.
template <typename Fn>
auto run_stage(std::vector<TraceRecord>& trace, std::string_view stage, const Clock& clock, std::string input_digest,
               Fn&& fn) {
  TraceRecord record;
  record.stage = stage;
  record.started_at = clock();
  record.input_digest = std::move(input_digest);
  try {
    auto [value, output_digest] = fn(record.diagnostics);
    record.output_digest = std::move(output_digest);
    trace.push_back(std::move(record));
    return value;
  } catch (const Error& e) {
    if (!e.stage().empty()) throw;
    throw e.with_stage(std::string(stage));
  }
}

}  // namespace

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t secs = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[96];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

Json pipeline_config_to_json(const PipelineConfig& c) {
  return Json{{"horizon", c.horizon},
              {"lifting", lifting::lifting_config_to_json(c.lifting)},
              {"pixel_variance", c.pixel_variance},
              {"min_descriptors", c.min_descriptors},
              {"min_baseline_deg", c.min_baseline_deg}};
}

PipelineConfig pipeline_config_from_json(const Json& j, PipelineConfig c) {
  if (!j.is_object()) fail(ErrorKind::kValidation, "pipeline config must be an object", "config");
  try {
    if (j.contains("horizon")) c.horizon = j["horizon"].get<std::size_t>();
    if (j.contains("pixel_variance")) c.pixel_variance = j["pixel_variance"].get<double>();
    if (j.contains("min_descriptors")) c.min_descriptors = j["min_descriptors"].get<std::size_t>();
    if (j.contains("min_baseline_deg")) c.min_baseline_deg = j["min_baseline_deg"].get<double>();
  } catch (const Json::exception& e) {
    fail(ErrorKind::kValidation, std::string("bad pipeline config value: ") + e.what(), "config");
  }
  if (j.contains("lifting")) c.lifting = lifting::lifting_config_from_json(j["lifting"], c.lifting);
  if (j.contains("seed")) c.lifting.rng_seed = j["seed"].get<std::uint64_t>();
  if (c.horizon < 2) fail(ErrorKind::kValidation, "horizon must be >= 2", "horizon");
  if (!(c.pixel_variance > 0)) fail(ErrorKind::kValidation, "pixel_variance must be positive", "pixel_variance");
  lifting::validate(c.lifting);
  return c;
}

std::string config_digest(const PipelineConfig& config) { return json_digest(pipeline_config_to_json(config)); }

SceneInput load_scene_input(const instruction::SceneBundle& bundle, const std::filesystem::path& base_dir,
                            const instruction::CrossModalInstruction& instr,
                            const std::filesystem::path& instruction_dir) {
  SceneInput scene;
  scene.bundle = bundle;
  for (const auto& v : bundle.views) {
    if (v.image_path.empty()) fail(ErrorKind::kValidation, "view '" + v.camera.id + "' has no image_path", "image_path");
    const std::filesystem::path p = std::filesystem::path(v.image_path).is_absolute() ? std::filesystem::path(v.image_path) : base_dir / v.image_path;
    scene.view_images[v.camera.id] = read_png(p);
  }
  if (const auto it = scene.view_images.find(instr.image_ref); it != scene.view_images.end()) {
    scene.instruction_image = it->second;
  } else {
    const std::filesystem::path p = std::filesystem::path(instr.image_ref).is_absolute()
                                        ? std::filesystem::path(instr.image_ref)
                                        : instruction_dir / instr.image_ref;
    scene.instruction_image = read_png(p);
  }
  return scene;
}

PipelineResult run_pipeline(const instruction::CrossModalInstruction& instr, const SceneInput& scene,
                            const PipelineConfig& config, models::ModelBackend& backend, const Clock& clock) {
  PipelineResult result;
  auto& trace = result.trace;
  const Json instr_json = instruction::instruction_to_json(instr);

  // scene-validate
  run_stage(trace, kStages[0], clock,
            json_digest({{"bundle", instruction::scene_bundle_to_json(scene.bundle)}, {"instruction", instr_json}}),
            [&](std::vector<std::string>& diags) {
              instruction::validate(instr);
              diags = instruction::validate_scene_bundle(scene.bundle, config.min_baseline_deg);
              if (!diags.empty()) {
                std::string msg = "scene bundle invalid:";
                for (const auto& d : diags) msg += " " + d + ";";
                fail(ErrorKind::kValidation, msg, "scene");
              }
              for (const auto& v : scene.bundle.views) {
                const auto it = scene.view_images.find(v.camera.id);
                if (it == scene.view_images.end()) fail(ErrorKind::kValidation, "missing image for view " + v.camera.id, "views");
                if (it->second.width != v.camera.intrinsics.width || it->second.height != v.camera.intrinsics.height) {
                  fail(ErrorKind::kValidation, "image size does not match intrinsics for view " + v.camera.id, "views");
                }
              }
              return std::pair{0, sha256_hex(std::string_view("ok"))};
            });

  models::ReasoningContext ctx;
  ctx.instruction = instr;
  for (int m = 0; m < 2; ++m) {
    const auto& id = scene.bundle.views[m].camera.id;
    ctx.views[m] = {id, scene.view_images.at(id)};
  }
  const auto& view_1 = scene.bundle.views[0].camera;
  const auto& view_2 = scene.bundle.views[1].camera;

  ctx.annotated_image = run_stage(
      trace, kStages[1], clock, json_digest({{"image", scene.instruction_image.digest()}, {"instruction", instr_json}}),
      [&](std::vector<std::string>&) {
        Image annotated = instruction::rasterize_overlay(scene.instruction_image, instr);
        std::string d = annotated.digest();
        return std::pair{std::move(annotated), std::move(d)};
      });

  ctx.descriptors = run_stage(trace, kStages[2], clock, models::keypoints_request(ctx).digest(),
                              [&](std::vector<std::string>&) {
                                auto descriptors = models::request_keypoints(backend, ctx);
                                if (descriptors.size() < config.min_descriptors) {
                                  fail(ErrorKind::kInsufficientKeypoints,
                                       "got " + std::to_string(descriptors.size()) + " keypoints, need " +
                                           std::to_string(config.min_descriptors));
                                }
                                Json out = Json::array();
                                for (const auto& d : descriptors) out.push_back(models::descriptor_to_json(d));
                                return std::pair{std::move(descriptors), json_digest(out)};
                              });

  Json pointing_input = Json::array();
  for (const auto& d : ctx.descriptors) pointing_input.push_back(models::descriptor_to_json(d));
  run_stage(trace, kStages[3], clock, json_digest(pointing_input), [&](std::vector<std::string>& diags) {
    std::vector<models::KeypointDescriptor> kept;
    std::vector<models::PointedKeypoint> pointed;
    for (std::size_t i = 0; i < ctx.descriptors.size(); ++i) {
      std::vector<models::PointedKeypoint> per_view;
      std::vector<std::string> local;
      try {
        for (const auto& v : ctx.views) {
          per_view.push_back(models::point_keypoint(backend, ctx.descriptors[i], i, v.image, v.view_id, &local));
        }
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kTransport && e.kind() != ErrorKind::kInvalidResponse) throw;
        diags.push_back("dropped keypoint " + std::to_string(i) + " '" + ctx.descriptors[i].label + "': " + e.what());
        continue;
      }
      diags.insert(diags.end(), local.begin(), local.end());
      for (auto& p : per_view) {
        p.descriptor_index = kept.size();
        pointed.push_back(std::move(p));
      }
      kept.push_back(ctx.descriptors[i]);
    }
    if (kept.size() < config.min_descriptors) {
      fail(ErrorKind::kInsufficientKeypoints, std::to_string(kept.size()) + " keypoints left after pointing, need " +
                                                  std::to_string(config.min_descriptors));
    }
    std::stable_sort(pointed.begin(), pointed.end(), [](const auto& a, const auto& b) {
      return std::tie(a.descriptor_index, a.view_id) < std::tie(b.descriptor_index, b.view_id);
    });
    ctx.descriptors = std::move(kept);
    ctx.pointed = std::move(pointed);
    Json out = Json::array();
    for (const auto& p : ctx.pointed) out.push_back(models::pointed_to_json(p));
    return std::pair{0, json_digest(out)};
  });

  const auto raw = run_stage(trace, kStages[4], clock, models::trajectories_request(ctx).digest(),
                             [&](std::vector<std::string>& diags) {
                               auto r = models::request_pixel_trajectories(backend, ctx, &diags);
                               const std::string d =
                                   json_digest({polyline_json(r.view_1), polyline_json(r.view_2)});
                               return std::pair{std::move(r), d};
                             });

  const auto xi = run_stage(
      trace, kStages[5], clock, json_digest({polyline_json(raw.view_1), polyline_json(raw.view_2), config.horizon}),
      [&](std::vector<std::string>&) {
        lifting::PixelTrajectory a{view_1.id, lifting::resample_equal_length(raw.view_1, config.horizon),
                                   config.pixel_variance * lifting::Mat2::Identity()};
        lifting::PixelTrajectory b{view_2.id, lifting::resample_equal_length(raw.view_2, config.horizon),
                                   config.pixel_variance * lifting::Mat2::Identity()};
        const std::string d =
            json_digest({lifting::pixel_trajectory_to_json(a), lifting::pixel_trajectory_to_json(b)});
        return std::pair{std::pair{std::move(a), std::move(b)}, d};
      });
  result.xi_1 = xi.first;
  result.xi_2 = xi.second;

  const auto dist = run_stage(
      trace, kStages[6], clock,
      json_digest({lifting::pixel_trajectory_to_json(xi.first), lifting::pixel_trajectory_to_json(xi.second),
                   lifting::lifting_config_to_json(config.lifting)}),
      [&](std::vector<std::string>& diags) {
        lifting::LiftReport report;
        auto d = lifting::lift_trajectory_pair(xi.first, xi.second, {view_1, view_2}, config.lifting, &report);
        diags = std::move(report.diagnostics);
        const std::string digest = json_digest(lifting::distribution_to_json(d));
        return std::pair{std::move(d), digest};
      });
  ctx.lifted_trajectory = lifting::mean_trajectory(dist);

  const auto poses = run_stage(trace, kStages[7], clock, models::pose_schedule_request(ctx).digest(),
                               [&](std::vector<std::string>& diags) {
                                 auto steps = models::request_pose_schedule(backend, ctx, &diags);
                                 Json out = Json::array();
                                 for (const auto& s : steps) {
                                   out.push_back({models::quaternion_to_json(s.orientation), s.gripper});
                                 }
                                 return std::pair{std::move(steps), json_digest(out)};
                               });

  result.plan = run_stage(trace, kStages[8], clock, json_digest(lifting::distribution_to_json(dist)),
                          [&](std::vector<std::string>&) {
                            MotionPlan plan;
                            plan.distribution = dist;
                            for (std::size_t i = 0; i < dist.waypoints.size(); ++i) {
                              plan.steps.push_back({static_cast<int>(i + 1), dist.waypoints[i].mu,
                                                    poses[i].orientation, poses[i].gripper});
                            }
                            plan.provenance = {backend.name(), config.lifting.rng_seed, config_digest(config)};
                            validate(plan);
                            const std::string d = json_digest(plan_to_json(plan));
                            return std::pair{std::move(plan), d};
                          });
  result.descriptors = ctx.descriptors;
  result.pointed = ctx.pointed;
  return result;
}

void validate(const MotionPlan& plan) {
  lifting::validate(plan.distribution);
  if (plan.steps.size() != plan.distribution.horizon()) {
    fail(ErrorKind::kValidation, "step count differs from distribution horizon", "steps");
  }
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    const auto& s = plan.steps[i];
    if (s.t != static_cast<int>(i + 1)) fail(ErrorKind::kValidation, "step timesteps must run 1..H", "steps.t");
    if (s.position != plan.distribution.waypoints[i].mu) {
      fail(ErrorKind::kValidation, "step position differs from distribution mean at t=" + std::to_string(s.t),
           "steps.position");
    }
    if (std::abs(s.orientation.norm() - 1.0) > 1e-9) fail(ErrorKind::kValidation, "quaternion not unit", "steps.quaternion");
    if (s.gripper != 0 && s.gripper != 1) fail(ErrorKind::kValidation, "gripper must be 0 or 1", "steps.gripper");
  }
}

Json plan_to_json(const MotionPlan& plan) {
  Json steps = Json::array();
  for (const auto& s : plan.steps) {
    steps.push_back({{"t", s.t},
                     {"position", vec3_json(s.position)},
                     {"quaternion", models::quaternion_to_json(s.orientation)},
                     {"gripper", s.gripper}});
  }
  return Json{{"horizon", plan.steps.size()},
              {"steps", steps},
              {"distribution", lifting::distribution_to_json(plan.distribution)},
              {"provenance",
               {{"source", plan.provenance.source},
                {"rng_seed", plan.provenance.rng_seed},
                {"config_digest", plan.provenance.config_digest}}}};
}

MotionPlan plan_from_json(const Json& j) {
  auto require = [](bool ok, const std::string& msg, const std::string& field) {
    if (!ok) fail(ErrorKind::kParse, msg, field);
  };
  require(j.is_object(), "plan must be an object", "");
  for (const char* key : {"horizon", "steps", "distribution", "provenance"}) {
    require(j.contains(key), std::string("plan missing ") + key, key);
  }
  require(j["steps"].is_array(), "steps must be an array", "steps");
  require(j["horizon"].is_number_unsigned(), "horizon must be a count", "horizon");
  MotionPlan plan;
  try {
    plan.distribution = lifting::distribution_from_json(j["distribution"]);
  } catch (const Error& e) {
    fail(ErrorKind::kParse, "distribution: " + e.detail(), "distribution");
  }
  for (const auto& sj : j["steps"]) {
    require(sj.is_object() && sj.contains("t") && sj.contains("position") && sj.contains("quaternion") &&
                sj.contains("gripper"),
            "step needs t, position, quaternion, gripper", "steps");
    require(sj["position"].is_array() && sj["position"].size() == 3, "position must have 3 numbers", "steps.position");
    require(sj["quaternion"].is_array() && sj["quaternion"].size() == 4, "quaternion must have 4 numbers",
            "steps.quaternion");
    require(sj["t"].is_number_integer() && sj["gripper"].is_number_integer(), "t and gripper must be integers", "steps");
    MotionStep s;
    s.t = sj["t"].get<int>();
    for (int i = 0; i < 3; ++i) {
      require(sj["position"][i].is_number(), "position entry not a number", "steps.position");
      s.position(i) = sj["position"][i].get<double>();
    }
    std::array<double, 4> q{};
    for (int i = 0; i < 4; ++i) {
      require(sj["quaternion"][i].is_number(), "quaternion entry not a number", "steps.quaternion");
      q[i] = sj["quaternion"][i].get<double>();
    }
    s.orientation = {q[0], q[1], q[2], q[3]};
    s.gripper = sj["gripper"].get<int>();
    plan.steps.push_back(s);
  }
  require(plan.steps.size() == j["horizon"].get<std::size_t>(), "horizon does not match step count", "horizon");
  const Json& p = j["provenance"];
  require(p.is_object() && p.contains("source") && p["source"].is_string() && p.contains("rng_seed") &&
              p["rng_seed"].is_number_unsigned() && p.contains("config_digest") && p["config_digest"].is_string(),
          "provenance needs source, rng_seed, config_digest", "provenance");
  plan.provenance = {p["source"].get<std::string>(), p["rng_seed"].get<std::uint64_t>(),
                     p["config_digest"].get<std::string>()};
  try {
    validate(plan);
  } catch (const Error& e) {
    fail(ErrorKind::kParse, e.detail(), e.field());
  }
  return plan;
}

std::string export_plan(const MotionPlan& plan) { return plan_to_json(plan).dump(2) + "\n"; }

MotionPlan import_plan(std::string_view bytes) {
  Json j;
  try {
    j = Json::parse(bytes.begin(), bytes.end());
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::kParse, "malformed plan JSON at byte " + std::to_string(e.byte), "");
  }
  return plan_from_json(j);
}

Json trace_record_to_json(const TraceRecord& r) {
  return Json{{"stage", r.stage},
              {"started_at", r.started_at},
              {"input_digest", r.input_digest},
              {"output_digest", r.output_digest},
              {"diagnostics", r.diagnostics}};
}

std::string trace_to_jsonl(const std::vector<TraceRecord>& trace) {
  std::string out;
  for (const auto& r : trace) out += trace_record_to_json(r).dump() + "\n";
  return out;
}

PlanReport plan_diagnostics(const MotionPlan& plan, const instruction::SceneBundle& bundle,
                            const std::pair<lifting::PixelTrajectory, lifting::PixelTrajectory>& xi) {
  PlanReport report;
  const auto& v1 = bundle.view(xi.first.view_id).camera;
  const auto& v2 = bundle.view(xi.second.view_id).camera;
  const auto& wps = plan.distribution.waypoints;
  for (std::size_t i = 0; i < wps.size() && i < xi.first.points.size() && i < xi.second.points.size(); ++i) {
    std::array<double, 2> err{};
    const std::array<const geometry::CameraView*, 2> views{&v1, &v2};
    const std::array<const geometry::Vec2*, 2> targets{&xi.first.points[i], &xi.second.points[i]};
    for (int m = 0; m < 2; ++m) {
      try {
        err[m] = (geometry::project_point(*views[m], wps[i].mu) - *targets[m]).norm();
      } catch (const Error&) {
        err[m] = std::numeric_limits<double>::infinity();
      }
      report.max_reprojection_error = std::max(report.max_reprojection_error, err[m]);
    }
    report.reprojection_error.push_back(err);
    report.max_sigma_trace = std::max(report.max_sigma_trace, wps[i].sigma.trace());
  }
  for (std::size_t i = 1; i < plan.steps.size(); ++i) {
    if (plan.steps[i].gripper != plan.steps[i - 1].gripper) ++report.gripper_transitions;
  }
  return report;
}

Json plan_report_to_json(const PlanReport& report) {
  Json per_t = Json::array();
  for (const auto& e : report.reprojection_error) per_t.push_back({e[0], e[1]});
  return Json{{"reprojection_error", per_t},
              {"max_reprojection_error", report.max_reprojection_error},
              {"max_sigma_trace", report.max_sigma_trace},
              {"gripper_transitions", report.gripper_transitions}};
}

}  // namespace crossinstruct::pipeline
