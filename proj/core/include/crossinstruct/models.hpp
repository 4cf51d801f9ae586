#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crossinstruct/digest.hpp"
#include "crossinstruct/geometry.hpp"
#include "crossinstruct/image.hpp"
#include "crossinstruct/instruction.hpp"

namespace crossinstruct::models {

using geometry::Vec2;
using geometry::Vec3;

namespace kind {
inline constexpr std::string_view kKeypoints = "keypoints";
inline constexpr std::string_view kPoint = "point";
inline constexpr std::string_view kTrajectories = "trajectories";
inline constexpr std::string_view kPoseSchedule = "pose_schedule";
}  // namespace kind

inline constexpr std::array<std::string_view, 4> kRequestKinds = {kind::kKeypoints, kind::kPoint, kind::kTrajectories,
                                                                   kind::kPoseSchedule};

inline constexpr double kQuaternionNormTolerance = 0.1;

struct KeypointDescriptor {
  std::string label;
  std::string metadata;

  bool operator==(const KeypointDescriptor&) const = default;
};

struct PointedKeypoint {
  std::size_t descriptor_index = 0;
  std::string view_id;
  Vec2 pixel = Vec2::Zero();

  bool operator==(const PointedKeypoint&) const = default;
};

// Unit quaternion, scalar first.
struct Quaternion {
  double w = 1, x = 0, y = 0, z = 0;

  double norm() const;
  bool operator==(const Quaternion&) const = default;
};

struct PoseStep {
  int t = 1;
  Quaternion orientation;
  int gripper = 0;  // 0 open, 1 closed

  bool operator==(const PoseStep&) const = default;
};

struct ViewImage {
  std::string view_id;
  Image image;
};

// Context accumulated by the reasoning model across the coupling protocol.
struct ReasoningContext {
  instruction::CrossModalInstruction instruction;
  Image annotated_image;
  std::array<ViewImage, 2> views;
  std::vector<KeypointDescriptor> descriptors;
  std::vector<PointedKeypoint> pointed;
  std::optional<std::vector<Vec3>> lifted_trajectory;

  const Image& image_for(std::string_view view_id) const;
};

// A model request: logical payload with images referenced by digest, plus
// the images themselves for backends that transmit pixels.
struct ModelRequest {
  std::string kind;
  Json payload;
  std::map<std::string, const Image*> images;

  // sha256 over kind and the canonical payload text.
  std::string digest() const;
};

class ModelBackend {
 public:
  virtual ~ModelBackend() = default;
  // Raw JSON response. Implementations must be safe to call concurrently.
  virtual Json complete(const ModelRequest& request) = 0;
  virtual std::string name() const = 0;
};

struct ScenarioEntry {
  std::string kind;
  std::string request_digest;
  Json response;

  bool operator==(const ScenarioEntry&) const = default;
};

struct ScriptedScenario {
  std::string name;
  std::vector<ScenarioEntry> entries;

  // Request kinds with no entry.
  std::vector<std::string> missing_kinds() const;
  bool operator==(const ScriptedScenario&) const = default;
};

Json scenario_to_json(const ScriptedScenario& scenario);
ScriptedScenario scenario_from_json(const Json& j);
std::string serialize_scenario(const ScriptedScenario& scenario);
ScriptedScenario parse_scenario(std::string_view bytes);

// Replays canned responses keyed by (kind, request digest).
class ScriptedBackend : public ModelBackend {
 public:
  explicit ScriptedBackend(ScriptedScenario scenario);
  Json complete(const ModelRequest& request) override;
  std::string name() const override { return "scenario:" + scenario_.name; }
  const ScriptedScenario& scenario() const { return scenario_; }

 private:
  ScriptedScenario scenario_;
  std::map<std::pair<std::string, std::string>, Json> index_;
};

// Forwards to another backend and captures every exchange.
class RecordingBackend : public ModelBackend {
 public:
  RecordingBackend(ModelBackend& inner, std::string scenario_name);
  Json complete(const ModelRequest& request) override;
  std::string name() const override { return inner_.name(); }
  ScriptedScenario scenario() const;

 private:
  ModelBackend& inner_;
  std::string scenario_name_;
  mutable std::mutex mutex_;
  std::vector<ScenarioEntry> entries_;
};

// Live HTTP endpoint. Requests are POSTed as JSON to {base_url}/v1/{kind}
// with the rendered prompt and base64 PNG images; the response body is the
// model's JSON answer.
struct LiveConfig {
  std::string base_url;
  std::string token_env = "CI_LIVE_TOKEN";
  double timeout_seconds = 60.0;
  int retries = 2;
  std::filesystem::path prompt_dir;
};

class LiveBackend : public ModelBackend {
 public:
  explicit LiveBackend(LiveConfig config);
  Json complete(const ModelRequest& request) override;
  std::string name() const override { return "live"; }

 private:
  LiveConfig config_;
  std::map<std::string, std::string> templates_;
};

std::filesystem::path default_prompt_dir();
// Loads {kind}.txt for every request kind.
std::map<std::string, std::string> load_prompt_templates(const std::filesystem::path& dir);
// Replaces {NAME} placeholders; unknown placeholders are left untouched.
std::string render_prompt(std::string_view tmpl, const std::map<std::string, std::string>& values);
// Placeholder values derived from a request payload.
std::map<std::string, std::string> prompt_values(const ModelRequest& request);

// Request builders. Payloads are the canonical inputs hashed for replay.
ModelRequest keypoints_request(const ReasoningContext& ctx);
ModelRequest point_request(const KeypointDescriptor& descriptor, std::size_t descriptor_index, const Image& image,
                           const std::string& view_id);
ModelRequest trajectories_request(const ReasoningContext& ctx);
ModelRequest pose_schedule_request(const ReasoningContext& ctx);

// Operations. Every response goes through the same validators regardless of
// backend. Diagnostics (clamping, normalization) are appended to `diags`.
std::vector<KeypointDescriptor> request_keypoints(ModelBackend& backend, const ReasoningContext& ctx);
PointedKeypoint point_keypoint(ModelBackend& backend, const KeypointDescriptor& descriptor,
                               std::size_t descriptor_index, const Image& image, const std::string& view_id,
                               std::vector<std::string>* diags = nullptr);

struct RawTrajectories {
  std::vector<Vec2> view_1;
  std::vector<Vec2> view_2;
};
RawTrajectories request_pixel_trajectories(ModelBackend& backend, const ReasoningContext& ctx,
                                           std::vector<std::string>* diags = nullptr);
std::vector<PoseStep> request_pose_schedule(ModelBackend& backend, const ReasoningContext& ctx,
                                            std::vector<std::string>* diags = nullptr);

// Validators shared by all backends.
std::vector<KeypointDescriptor> parse_keypoints_response(const Json& response);
Vec2 parse_point_response(const Json& response);
Vec2 clamp_pixel(const Vec2& pixel, int width, int height, bool* clamped = nullptr);
// Normalizes when |norm - 1| <= kQuaternionNormTolerance; throws otherwise.
Quaternion normalize_quaternion(const Quaternion& q);
std::vector<PoseStep> parse_pose_schedule_response(const Json& response, std::size_t horizon,
                                                   std::vector<std::string>* diags = nullptr);

// Minimum pixel distance from a polyline to a point.
double polyline_distance(const std::vector<Vec2>& polyline, const Vec2& point);

Json descriptor_to_json(const KeypointDescriptor& d);
Json pointed_to_json(const PointedKeypoint& p);
Json quaternion_to_json(const Quaternion& q);

}  // namespace crossinstruct::models
