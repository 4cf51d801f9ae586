#include "crossinstruct/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "crossinstruct/error.hpp"

namespace crossinstruct::geometry {

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return k;
}

void validate(const CameraIntrinsics& k) {
  if (!(k.fx > 0) || !std::isfinite(k.fx)) fail(ErrorKind::kValidation, "fx must be positive", "intrinsics.fx");
  if (!(k.fy > 0) || !std::isfinite(k.fy)) fail(ErrorKind::kValidation, "fy must be positive", "intrinsics.fy");
  if (k.width <= 0) fail(ErrorKind::kValidation, "width must be positive", "intrinsics.width");
  if (k.height <= 0) fail(ErrorKind::kValidation, "height must be positive", "intrinsics.height");
  if (!(k.cx >= 0 && k.cx < k.width)) fail(ErrorKind::kValidation, "cx outside [0, width)", "intrinsics.cx");
  if (!(k.cy >= 0 && k.cy < k.height)) fail(ErrorKind::kValidation, "cy outside [0, height)", "intrinsics.cy");
}

void validate(const CameraPose& pose) {
  if (!pose.rotation.allFinite()) fail(ErrorKind::kValidation, "rotation not finite", "pose.rotation");
  if (!pose.translation.allFinite()) fail(ErrorKind::kValidation, "translation not finite", "pose.translation");
  const double ortho = (pose.rotation.transpose() * pose.rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho > kOrthonormalTol) fail(ErrorKind::kValidation, "rotation not orthonormal", "pose.rotation");
  if (std::abs(pose.rotation.determinant() - 1.0) > kOrthonormalTol) {
    fail(ErrorKind::kValidation, "rotation determinant is not +1", "pose.rotation");
  }
}

void validate(const CameraView& view) {
  if (view.id.empty()) fail(ErrorKind::kValidation, "view id empty", "id");
  validate(view.intrinsics);
  validate(view.pose);
}

Ray pixel_to_ray(const CameraView& view, const Vec2& pixel) {
  if (!pixel.allFinite()) fail(ErrorKind::kInvalidInput, "pixel coordinates must be finite", "pixel");
  const auto& k = view.intrinsics;
  const Vec3 cam((pixel.x() - k.cx) / k.fx, (pixel.y() - k.cy) / k.fy, 1.0);
  return Ray{view.pose.translation, (view.pose.rotation * cam).normalized()};
}

Vec3 ray_point(const Ray& ray, double depth) { return ray.origin + depth * ray.direction; }

Vec2 project_point(const CameraView& view, const Vec3& point) {
  const Vec3 cam = view.pose.rotation.transpose() * (point - view.pose.translation);
  if (!(cam.z() > 0)) fail(ErrorKind::kBehindCamera, "point has non-positive camera depth");
  const auto& k = view.intrinsics;
  return {k.fx * cam.x() / cam.z() + k.cx, k.fy * cam.y() / cam.z() + k.cy};
}

ClosestPoints ray_ray_closest_points(const Ray& r1, const Ray& r2) {
  const Vec3& d1 = r1.direction;
  const Vec3& d2 = r2.direction;
  const double b = d1.dot(d2);
  if (std::abs(b) > 1.0 - kParallelTol) fail(ErrorKind::kDegenerateGeometry, "rays are parallel");
  const double a = d1.squaredNorm();
  const double c = d2.squaredNorm();
  const Vec3 w = r1.origin - r2.origin;
  const double d = d1.dot(w);
  const double e = d2.dot(w);
  const double denom = a * c - b * b;
  const double s = (b * e - c * d) / denom;
  const double t = (a * e - b * d) / denom;
  ClosestPoints out;
  out.p1 = r1.origin + s * d1;
  out.p2 = r2.origin + t * d2;
  out.gap = (out.p1 - out.p2).norm();
  return out;
}

double baseline_angle_deg(const CameraView& a, const CameraView& b, const Vec3& target) {
  const Vec3 da = (target - a.origin()).normalized();
  const Vec3 db = (target - b.origin()).normalized();
  const double c = std::clamp(da.dot(db), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

Vec3 workspace_center(const CameraView& a, const CameraView& b) {
  const Ray ra{a.origin(), a.optical_axis()};
  const Ray rb{b.origin(), b.optical_axis()};
  if (std::abs(ra.direction.dot(rb.direction)) > 1.0 - kParallelTol) {
    return ray_point(ra, 1.0);
  }
  return ray_ray_closest_points(ra, rb).midpoint();
}

Mat3 look_rotation(const Vec3& forward, const Vec3& down_hint) {
  const Vec3 z = forward.normalized();
  Vec3 y = down_hint - down_hint.dot(z) * z;
  if (y.norm() < 1e-12) y = z.unitOrthogonal();
  y.normalize();
  const Vec3 x = y.cross(z);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return r;
}

Json view_to_json(const CameraView& view) {
  const auto& k = view.intrinsics;
  Json rot = Json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(view.pose.rotation(r, c));
  const auto& t = view.pose.translation;
  return Json{{"id", view.id},
              {"intrinsics",
               {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}}},
              {"pose", {{"rotation", rot}, {"translation", {t.x(), t.y(), t.z()}}}}};
}

namespace {

double number_at(const Json& j, const char* key, const std::string& field) {
  if (!j.contains(key) || !j.at(key).is_number()) fail(ErrorKind::kValidation, "missing number", field);
  return j.at(key).get<double>();
}

}  // namespace

CameraView view_from_json(const Json& j) {
  if (!j.is_object()) fail(ErrorKind::kValidation, "view must be an object", "view");
  CameraView view;
  if (!j.contains("id") || !j["id"].is_string()) fail(ErrorKind::kValidation, "missing id", "id");
  view.id = j["id"].get<std::string>();
  if (!j.contains("intrinsics") || !j["intrinsics"].is_object()) {
    fail(ErrorKind::kValidation, "missing intrinsics", "intrinsics");
  }
  const Json& k = j["intrinsics"];
  view.intrinsics.fx = number_at(k, "fx", "intrinsics.fx");
  view.intrinsics.fy = number_at(k, "fy", "intrinsics.fy");
  view.intrinsics.cx = number_at(k, "cx", "intrinsics.cx");
  view.intrinsics.cy = number_at(k, "cy", "intrinsics.cy");
  if (!k.contains("width") || !k["width"].is_number_integer()) fail(ErrorKind::kValidation, "missing width", "intrinsics.width");
  if (!k.contains("height") || !k["height"].is_number_integer()) fail(ErrorKind::kValidation, "missing height", "intrinsics.height");
  view.intrinsics.width = k["width"].get<int>();
  view.intrinsics.height = k["height"].get<int>();
  if (!j.contains("pose") || !j["pose"].is_object()) fail(ErrorKind::kValidation, "missing pose", "pose");
  const Json& p = j["pose"];
  if (!p.contains("rotation") || !p["rotation"].is_array() || p["rotation"].size() != 9) {
    fail(ErrorKind::kValidation, "rotation must have 9 numbers", "pose.rotation");
  }
  if (!p.contains("translation") || !p["translation"].is_array() || p["translation"].size() != 3) {
    fail(ErrorKind::kValidation, "translation must have 3 numbers", "pose.translation");
  }
  for (int i = 0; i < 9; ++i) {
    if (!p["rotation"][i].is_number()) fail(ErrorKind::kValidation, "rotation entry not a number", "pose.rotation");
    view.pose.rotation(i / 3, i % 3) = p["rotation"][i].get<double>();
  }
  for (int i = 0; i < 3; ++i) {
    if (!p["translation"][i].is_number()) fail(ErrorKind::kValidation, "translation entry not a number", "pose.translation");
    view.pose.translation(i) = p["translation"][i].get<double>();
  }
  validate(view);
  return view;
}

std::vector<CameraView> calibration_from_json(const Json& j) {
  std::vector<CameraView> views;
  if (j.is_object() && j.contains("views")) {
    if (!j["views"].is_array()) fail(ErrorKind::kValidation, "views must be an array", "views");
    for (const auto& v : j["views"]) views.push_back(view_from_json(v));
  } else if (j.is_array()) {
    for (const auto& v : j) views.push_back(view_from_json(v));
  } else {
    views.push_back(view_from_json(j));
  }
  return views;
}

Json calibration_to_json(const std::vector<CameraView>& views) {
  Json arr = Json::array();
  for (const auto& v : views) arr.push_back(view_to_json(v));
  return Json{{"views", arr}};
}

}  // namespace crossinstruct::geometry
