#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "crossinstruct/image.hpp"
#include "crossinstruct/instruction.hpp"
#include "crossinstruct/lifting.hpp"
#include "crossinstruct/models.hpp"

namespace crossinstruct::pipeline {

using geometry::Vec3;

struct MotionStep {
  int t = 1;
  Vec3 position = Vec3::Zero();
  models::Quaternion orientation;
  int gripper = 0;

  bool operator==(const MotionStep&) const = default;
};

struct Provenance {
  std::string source;  // "scenario:<name>" or "live"
  std::uint64_t rng_seed = 0;
  std::string config_digest;

  bool operator==(const Provenance&) const = default;
};

struct MotionPlan {
  std::vector<MotionStep> steps;
  lifting::TrajectoryDistribution distribution;
  Provenance provenance;

  bool operator==(const MotionPlan&) const = default;
};

struct PipelineConfig {
  std::size_t horizon = 50;
  lifting::LiftingConfig lifting;
  // Isotropic pixel variance (px^2) assigned to both views' trajectories.
  double pixel_variance = 2.0;
  std::size_t min_descriptors = 1;
  double min_baseline_deg = instruction::kDefaultMinBaselineDeg;

  bool operator==(const PipelineConfig&) const = default;
};

Json pipeline_config_to_json(const PipelineConfig& config);
// Missing keys keep the values in `base`.
PipelineConfig pipeline_config_from_json(const Json& j, PipelineConfig base = {});
std::string config_digest(const PipelineConfig& config);

// Scene bundle with decoded images, plus the (possibly separate) image the
// instruction was drawn over.
struct SceneInput {
  instruction::SceneBundle bundle;
  std::map<std::string, Image> view_images;
  Image instruction_image;
};

// Loads view images relative to `base_dir`. The instruction image is the
// bundle view named by image_ref when one matches, otherwise a PNG path
// relative to `instruction_dir`.
SceneInput load_scene_input(const instruction::SceneBundle& bundle, const std::filesystem::path& base_dir,
                            const instruction::CrossModalInstruction& instr,
                            const std::filesystem::path& instruction_dir);

struct TraceRecord {
  std::string stage;
  std::string started_at;
  std::string input_digest;
  std::string output_digest;
  std::vector<std::string> diagnostics;
};

using Clock = std::function<std::string()>;
// ISO-8601 UTC wall clock.
std::string utc_now();

struct PipelineResult {
  MotionPlan plan;
  lifting::PixelTrajectory xi_1;
  lifting::PixelTrajectory xi_2;
  std::vector<models::KeypointDescriptor> descriptors;
  std::vector<models::PointedKeypoint> pointed;
  std::vector<TraceRecord> trace;
};

// Stage names in execution order.
inline constexpr std::array<std::string_view, 9> kStages = {
    "scene-validate", "rasterize", "keypoints", "pointing", "trajectories",
    "resample",       "lift",      "pose-schedule", "assemble"};

// Runs the full coupling, lifting and pose-scheduling flow. Module errors are
// rethrown tagged with the stage name.
PipelineResult run_pipeline(const instruction::CrossModalInstruction& instr, const SceneInput& scene,
                            const PipelineConfig& config, models::ModelBackend& backend,
                            const Clock& clock = utc_now);

// Throws kValidation if steps and distribution disagree.
void validate(const MotionPlan& plan);

Json plan_to_json(const MotionPlan& plan);
MotionPlan plan_from_json(const Json& j);
std::string export_plan(const MotionPlan& plan);
// Throws kParse on malformed or schema-violating input.
MotionPlan import_plan(std::string_view bytes);

Json trace_record_to_json(const TraceRecord& r);
// JSON lines, one record per stage.
std::string trace_to_jsonl(const std::vector<TraceRecord>& trace);

struct PlanReport {
  // [t-1][view] reprojection error of mu_t against xi_m(t), pixels.
  std::vector<std::array<double, 2>> reprojection_error;
  double max_reprojection_error = 0;
  double max_sigma_trace = 0;
  int gripper_transitions = 0;
};

PlanReport plan_diagnostics(const MotionPlan& plan, const instruction::SceneBundle& bundle,
                            const std::pair<lifting::PixelTrajectory, lifting::PixelTrajectory>& xi);
Json plan_report_to_json(const PlanReport& report);

}  // namespace crossinstruct::pipeline
