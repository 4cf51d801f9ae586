#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "crossinstruct/digest.hpp"

namespace crossinstruct::geometry {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kOrthonormalTol = 1e-9;
inline constexpr double kParallelTol = 1e-9;
inline constexpr double kUnitTol = 1e-9;

// Zero-skew pinhole intrinsics, pixels.
struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  Mat3 matrix() const;
  bool operator==(const CameraIntrinsics&) const = default;
};

// World-from-camera pose. Camera frame is x-right, y-down, z-forward;
// `translation` is the camera origin in world coordinates.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  bool operator==(const CameraPose&) const = default;
};

struct CameraView {
  std::string id;
  CameraIntrinsics intrinsics;
  CameraPose pose;

  Vec3 origin() const { return pose.translation; }
  Vec3 optical_axis() const { return pose.rotation.col(2); }
  bool operator==(const CameraView&) const = default;
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
};

struct ClosestPoints {
  Vec3 p1;
  Vec3 p2;
  double gap = 0;

  Vec3 midpoint() const { return 0.5 * (p1 + p2); }
};

// Throws kValidation naming the violated field.
void validate(const CameraIntrinsics& k);
void validate(const CameraPose& pose);
void validate(const CameraView& view);

Ray pixel_to_ray(const CameraView& view, const Vec2& pixel);
Vec3 ray_point(const Ray& ray, double depth);
// Throws kBehindCamera for points with non-positive camera depth.
Vec2 project_point(const CameraView& view, const Vec3& point);
// Closest points between the two (infinite) lines. Throws kDegenerateGeometry
// when the directions are parallel within kParallelTol.
ClosestPoints ray_ray_closest_points(const Ray& r1, const Ray& r2);

// Angle in degrees between the two views' rays toward `target`.
double baseline_angle_deg(const CameraView& a, const CameraView& b, const Vec3& target);
// Point closest to both optical axes; falls back to one meter ahead of the
// first camera when the axes are parallel.
Vec3 workspace_center(const CameraView& a, const CameraView& b);

// Rotation whose z column points along `forward` with y roughly along `down`.
Mat3 look_rotation(const Vec3& forward, const Vec3& down_hint);

// Calibration JSON: {id, intrinsics {fx, fy, cx, cy, width, height},
// pose {rotation: 9 row-major, translation: 3}}.
Json view_to_json(const CameraView& view);
CameraView view_from_json(const Json& j);
// Accepts either a single view object or {"views": [...]}.
std::vector<CameraView> calibration_from_json(const Json& j);
Json calibration_to_json(const std::vector<CameraView>& views);

}  // namespace crossinstruct::geometry
