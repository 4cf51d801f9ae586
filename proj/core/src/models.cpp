#include "crossinstruct/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "crossinstruct/error.hpp"

namespace crossinstruct::models {

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

const Image& ReasoningContext::image_for(std::string_view view_id) const {
  for (const auto& v : views)
    if (v.view_id == view_id) return v.image;
  fail(ErrorKind::kNotFound, "context has no view '" + std::string(view_id) + "'", "view_id");
}

std::string ModelRequest::digest() const { return sha256_hex(kind + "\n" + canonical_json(payload)); }

// ---------------------------------------------------------------------------
// Scenarios

std::vector<std::string> ScriptedScenario::missing_kinds() const {
  std::vector<std::string> out;
  for (auto k : kRequestKinds) {
    const bool present = std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.kind == k; });
    if (!present) out.emplace_back(k);
  }
  return out;
}

Json scenario_to_json(const ScriptedScenario& scenario) {
  Json entries = Json::array();
  for (const auto& e : scenario.entries) {
    entries.push_back({{"kind", e.kind}, {"request_digest", e.request_digest}, {"response", e.response}});
  }
  return Json{{"name", scenario.name}, {"entries", entries}};
}

ScriptedScenario scenario_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("name") || !j["name"].is_string()) fail(ErrorKind::kParse, "scenario needs a name", "name");
  if (!j.contains("entries") || !j["entries"].is_array()) fail(ErrorKind::kParse, "scenario needs entries", "entries");
  ScriptedScenario s;
  s.name = j["name"].get<std::string>();
  for (const auto& ej : j["entries"]) {
    if (!ej.is_object() || !ej.contains("kind") || !ej["kind"].is_string() || !ej.contains("request_digest") ||
        !ej["request_digest"].is_string() || !ej.contains("response")) {
      fail(ErrorKind::kParse, "scenario entry needs kind, request_digest, response", "entries");
    }
    const auto k = ej["kind"].get<std::string>();
    if (std::find(kRequestKinds.begin(), kRequestKinds.end(), k) == kRequestKinds.end()) {
      fail(ErrorKind::kParse, "unknown request kind '" + k + "'", "entries.kind");
    }
    s.entries.push_back({k, ej["request_digest"].get<std::string>(), ej["response"]});
  }
  return s;
}

std::string serialize_scenario(const ScriptedScenario& scenario) { return scenario_to_json(scenario).dump(2) + "\n"; }

ScriptedScenario parse_scenario(std::string_view bytes) {
  Json j;
  try {
    j = Json::parse(bytes.begin(), bytes.end());
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::kParse, "malformed scenario JSON at byte " + std::to_string(e.byte), "");
  }
  return scenario_from_json(j);
}

ScriptedBackend::ScriptedBackend(ScriptedScenario scenario) : scenario_(std::move(scenario)) {
  for (const auto& e : scenario_.entries) index_.emplace(std::make_pair(e.kind, e.request_digest), e.response);
}

Json ScriptedBackend::complete(const ModelRequest& request) {
  const auto it = index_.find({request.kind, request.digest()});
  if (it != index_.end()) return it->second;
  const bool has_kind = std::any_of(scenario_.entries.begin(), scenario_.entries.end(),
                                    [&](const auto& e) { return e.kind == request.kind; });
  if (!has_kind) {
    fail(ErrorKind::kScenarioIncomplete, "scenario '" + scenario_.name + "' has no " + request.kind + " entry",
         request.kind);
  }
  fail(ErrorKind::kScenarioIncomplete,
       "scenario '" + scenario_.name + "' has no response for " + request.kind + " request " + request.digest(),
       request.kind);
}

RecordingBackend::RecordingBackend(ModelBackend& inner, std::string scenario_name)
    : inner_(inner), scenario_name_(std::move(scenario_name)) {}

Json RecordingBackend::complete(const ModelRequest& request) {
  Json response = inner_.complete(request);
  const std::string digest = request.digest();
  std::lock_guard lock(mutex_);
  const bool seen = std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) {
    return e.kind == request.kind && e.request_digest == digest;
  });
  if (!seen) entries_.push_back({request.kind, digest, response});
  return response;
}

ScriptedScenario RecordingBackend::scenario() const {
  std::lock_guard lock(mutex_);
  return {scenario_name_, entries_};
}

// ---------------------------------------------------------------------------
// Request builders

Json descriptor_to_json(const KeypointDescriptor& d) { return {{"label", d.label}, {"metadata", d.metadata}}; }

Json pointed_to_json(const PointedKeypoint& p) {
  return {{"descriptor_index", p.descriptor_index}, {"view_id", p.view_id}, {"pixel", {p.pixel.x(), p.pixel.y()}}};
}

Json quaternion_to_json(const Quaternion& q) { return Json::array({q.w, q.x, q.y, q.z}); }

namespace {

Json base_payload(const ReasoningContext& ctx, ModelRequest& req) {
  Json views = Json::array();
  for (const auto& v : ctx.views) {
    const std::string d = v.image.digest();
    req.images[d] = &v.image;
    views.push_back({{"id", v.view_id}, {"image", d}, {"image_size", {v.image.width, v.image.height}}});
  }
  const std::string ann = ctx.annotated_image.digest();
  req.images[ann] = &ctx.annotated_image;
  return {{"instruction", instruction::instruction_to_json(ctx.instruction)}, {"annotated_image", ann}, {"views", views}};
}

Json descriptors_json(const ReasoningContext& ctx) {
  Json out = Json::array();
  for (const auto& d : ctx.descriptors) out.push_back(descriptor_to_json(d));
  return out;
}

Json pointed_json(const ReasoningContext& ctx) {
  Json out = Json::array();
  for (const auto& p : ctx.pointed) out.push_back(pointed_to_json(p));
  return out;
}

}  // namespace

ModelRequest keypoints_request(const ReasoningContext& ctx) {
  ModelRequest req;
  req.kind = kind::kKeypoints;
  req.payload = base_payload(ctx, req);
  return req;
}

ModelRequest point_request(const KeypointDescriptor& descriptor, std::size_t descriptor_index, const Image& image,
                           const std::string& view_id) {
  ModelRequest req;
  req.kind = kind::kPoint;
  const std::string d = image.digest();
  req.images[d] = &image;
  req.payload = {{"descriptor", descriptor_to_json(descriptor)},
                 {"descriptor_index", descriptor_index},
                 {"view_id", view_id},
                 {"image", d},
                 {"image_size", {image.width, image.height}}};
  return req;
}

ModelRequest trajectories_request(const ReasoningContext& ctx) {
  ModelRequest req;
  req.kind = kind::kTrajectories;
  req.payload = base_payload(ctx, req);
  req.payload["descriptors"] = descriptors_json(ctx);
  req.payload["pointed"] = pointed_json(ctx);
  return req;
}

ModelRequest pose_schedule_request(const ReasoningContext& ctx) {
  if (!ctx.lifted_trajectory) fail(ErrorKind::kInvalidInput, "context has no lifted trajectory", "lifted_trajectory");
  ModelRequest req;
  req.kind = kind::kPoseSchedule;
  req.payload = base_payload(ctx, req);
  req.payload["descriptors"] = descriptors_json(ctx);
  req.payload["pointed"] = pointed_json(ctx);
  Json traj = Json::array();
  for (const auto& p : *ctx.lifted_trajectory) traj.push_back({p.x(), p.y(), p.z()});
  req.payload["trajectory_3d"] = traj;
  req.payload["horizon"] = ctx.lifted_trajectory->size();
  return req;
}

// ---------------------------------------------------------------------------
// Validators

namespace {

void bad_response(const std::string& msg, const std::string& field = {}) {
  fail(ErrorKind::kInvalidResponse, msg, field);
}

std::vector<Vec2> parse_polyline(const Json& j, const std::string& field) {
  if (!j.is_array()) bad_response("polyline must be an array", field);
  std::vector<Vec2> out;
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      bad_response("polyline point must be [u, v]", field);
    }
    Vec2 v(p[0].get<double>(), p[1].get<double>());
    if (!v.allFinite()) bad_response("polyline point not finite", field);
    out.push_back(v);
  }
  if (out.size() < 2) bad_response("polyline needs at least 2 points", field);
  return out;
}

}  // namespace

std::vector<KeypointDescriptor> parse_keypoints_response(const Json& response) {
  if (!response.is_object() || !response.contains("keypoints") || !response["keypoints"].is_array()) {
    bad_response("keypoints response needs a keypoints array", "keypoints");
  }
  std::vector<KeypointDescriptor> out;
  for (const auto& k : response["keypoints"]) {
    if (!k.is_object() || !k.contains("label") || !k["label"].is_string()) bad_response("keypoint needs a label", "label");
    KeypointDescriptor d{k["label"].get<std::string>(), ""};
    if (d.label.empty()) bad_response("keypoint label empty", "label");
    if (k.contains("metadata")) {
      if (!k["metadata"].is_string()) bad_response("keypoint metadata must be a string", "metadata");
      d.metadata = k["metadata"].get<std::string>();
    }
    out.push_back(std::move(d));
  }
  if (out.empty()) bad_response("no keypoints returned", "keypoints");
  return out;
}

Vec2 parse_point_response(const Json& response) {
  if (!response.is_object() || !response.contains("pixel")) bad_response("point response needs a pixel", "pixel");
  const Json& p = response["pixel"];
  if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) bad_response("pixel must be [u, v]", "pixel");
  Vec2 v(p[0].get<double>(), p[1].get<double>());
  if (!v.allFinite()) bad_response("pixel not finite", "pixel");
  return v;
}

Vec2 clamp_pixel(const Vec2& pixel, int width, int height, bool* clamped) {
  const Vec2 out(std::clamp(pixel.x(), 0.0, static_cast<double>(width - 1)),
                 std::clamp(pixel.y(), 0.0, static_cast<double>(height - 1)));
  if (clamped) *clamped = out != pixel;
  return out;
}

Quaternion normalize_quaternion(const Quaternion& q) {
  const double n = q.norm();
  if (!std::isfinite(n)) bad_response("quaternion not finite", "quaternion");
  if (std::abs(n - 1.0) > kQuaternionNormTolerance) {
    bad_response("quaternion norm " + std::to_string(n) + " outside tolerance", "quaternion");
  }
  if (std::abs(n - 1.0) <= 1e-15) return q;
  return {q.w / n, q.x / n, q.y / n, q.z / n};
}

std::vector<PoseStep> parse_pose_schedule_response(const Json& response, std::size_t horizon,
                                                   std::vector<std::string>* diags) {
  if (!response.is_object() || !response.contains("steps") || !response["steps"].is_array()) {
    bad_response("pose schedule needs a steps array", "steps");
  }
  const Json& steps = response["steps"];
  if (steps.size() != horizon) {
    bad_response("pose schedule has " + std::to_string(steps.size()) + " steps, expected " + std::to_string(horizon),
                 "steps");
  }
  std::vector<PoseStep> out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const Json& s = steps[i];
    if (!s.is_object() || !s.contains("quaternion") || !s["quaternion"].is_array() || s["quaternion"].size() != 4) {
      bad_response("step needs a 4-element quaternion", "steps.quaternion");
    }
    std::array<double, 4> q{};
    for (int k = 0; k < 4; ++k) {
      if (!s["quaternion"][k].is_number()) bad_response("quaternion entry not a number", "steps.quaternion");
      q[k] = s["quaternion"][k].get<double>();
    }
    const Quaternion raw{q[0], q[1], q[2], q[3]};
    PoseStep step;
    step.t = static_cast<int>(i + 1);
    step.orientation = normalize_quaternion(raw);
    if (diags && step.orientation != raw) diags->push_back("t=" + std::to_string(step.t) + ": quaternion normalized");
    if (!s.contains("gripper") || !s["gripper"].is_number_integer()) bad_response("step needs gripper", "steps.gripper");
    step.gripper = s["gripper"].get<int>();
    if (step.gripper != 0 && step.gripper != 1) bad_response("gripper must be 0 or 1", "steps.gripper");
    out.push_back(step);
  }
  return out;
}

double polyline_distance(const std::vector<Vec2>& polyline, const Vec2& point) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < polyline.size(); ++i) {
    const Vec2 ab = polyline[i + 1] - polyline[i];
    const double len2 = ab.squaredNorm();
    const double t = len2 > 0 ? std::clamp((point - polyline[i]).dot(ab) / len2, 0.0, 1.0) : 0.0;
    best = std::min(best, (point - (polyline[i] + t * ab)).norm());
  }
  if (polyline.size() == 1) best = (point - polyline[0]).norm();
  return best;
}

// ---------------------------------------------------------------------------
// Operations

std::vector<KeypointDescriptor> request_keypoints(ModelBackend& backend, const ReasoningContext& ctx) {
  if (!ctx.descriptors.empty()) fail(ErrorKind::kInvalidInput, "context already has descriptors", "descriptors");
  return parse_keypoints_response(backend.complete(keypoints_request(ctx)));
}

PointedKeypoint point_keypoint(ModelBackend& backend, const KeypointDescriptor& descriptor,
                               std::size_t descriptor_index, const Image& image, const std::string& view_id,
                               std::vector<std::string>* diags) {
  if (descriptor.label.empty()) fail(ErrorKind::kInvalidInput, "descriptor label empty", "label");
  if (image.empty()) fail(ErrorKind::kInvalidInput, "image empty", "image");
  const Vec2 raw = parse_point_response(backend.complete(point_request(descriptor, descriptor_index, image, view_id)));
  bool clamped = false;
  const Vec2 pixel = clamp_pixel(raw, image.width, image.height, &clamped);
  if (clamped && diags) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "warning: keypoint %zu in view %s clamped from (%.9g, %.9g) to (%.9g, %.9g)",
                  descriptor_index, view_id.c_str(), raw.x(), raw.y(), pixel.x(), pixel.y());
    diags->emplace_back(buf);
  }
  return {descriptor_index, view_id, pixel};
}

RawTrajectories request_pixel_trajectories(ModelBackend& backend, const ReasoningContext& ctx,
                                           std::vector<std::string>* diags) {
  if (ctx.descriptors.empty()) fail(ErrorKind::kInvalidInput, "context has no descriptors", "descriptors");
  const Json response = backend.complete(trajectories_request(ctx));
  if (!response.is_object() || !response.contains("trajectories") || !response["trajectories"].is_object()) {
    bad_response("response needs a trajectories object", "trajectories");
  }
  const Json& t = response["trajectories"];
  const auto& id1 = ctx.views[0].view_id;
  const auto& id2 = ctx.views[1].view_id;
  if (!t.contains(id1) || !t.contains(id2)) bad_response("trajectories missing a view", "trajectories");
  RawTrajectories out{parse_polyline(t[id1], "trajectories." + id1), parse_polyline(t[id2], "trajectories." + id2)};
  if (diags) {
    for (const auto& p : ctx.pointed) {
      const auto& line = p.view_id == id1 ? out.view_1 : out.view_2;
      char buf[128];
      std::snprintf(buf, sizeof buf, "keypoint %zu view %s: polyline distance %.3f px", p.descriptor_index,
                    p.view_id.c_str(), polyline_distance(line, p.pixel));
      diags->emplace_back(buf);
    }
  }
  return out;
}

std::vector<PoseStep> request_pose_schedule(ModelBackend& backend, const ReasoningContext& ctx,
                                            std::vector<std::string>* diags) {
  const ModelRequest req = pose_schedule_request(ctx);
  return parse_pose_schedule_response(backend.complete(req), ctx.lifted_trajectory->size(), diags);
}

}  // namespace crossinstruct::models
