#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "crossinstruct/geometry.hpp"
#include "crossinstruct/rng.hpp"

namespace crossinstruct::lifting {

using geometry::CameraView;
using geometry::Mat3;
using geometry::Vec2;
using geometry::Vec3;
using Mat2 = Eigen::Matrix2d;

// 2D pixel path for one view; points[t-1] is the density mean at timestep t.
struct PixelTrajectory {
  std::string view_id;
  std::vector<Vec2> points;
  Mat2 sigma = 2.0 * Mat2::Identity();

  std::size_t horizon() const { return points.size(); }
  bool operator==(const PixelTrajectory&) const = default;
};

struct LiftingConfig {
  double d_near = 0.1;
  double d_far = 3.0;
  // Pixel region kept per view, as a Mahalanobis radius under sigma.
  double epsilon_sigma = 3.0;
  // Cross-view pairing tolerance, meters.
  double delta = 0.01;
  int samples_per_view = 64;
  int depth_samples = 64;
  std::uint64_t rng_seed = 0;
  // On an empty intersection, retry with delta doubled up to this many times
  // (0 disables widening; at most 3).
  int max_delta_widenings = 0;
  // Worker threads for per-timestep lifting. Output does not depend on it.
  int threads = 1;

  bool operator==(const LiftingConfig&) const = default;
};

struct Gaussian2 {
  Vec2 mean;
  Mat2 cov;
};

struct WaypointGaussian {
  int t = 1;
  Vec3 mu = Vec3::Zero();
  Mat3 sigma = Mat3::Zero();
  std::size_t n_samples = 0;

  bool operator==(const WaypointGaussian&) const = default;
};

struct TrajectoryDistribution {
  std::vector<WaypointGaussian> waypoints;

  std::size_t horizon() const { return waypoints.size(); }
  bool operator==(const TrajectoryDistribution&) const = default;
};

// Diagnostics from lift_trajectory_pair (delta widening events).
struct LiftReport {
  std::vector<std::string> diagnostics;
};

void validate(const PixelTrajectory& traj);
void validate(const LiftingConfig& config);
void validate(const TrajectoryDistribution& dist);

// Arc-length uniform resampling; endpoints are kept exactly.
std::vector<Vec2> resample_equal_length(const std::vector<Vec2>& polyline, std::size_t horizon);

// t is 1-based.
Gaussian2 pixel_density_at(const PixelTrajectory& traj, std::size_t t);
double density_value(const Gaussian2& g, const Vec2& pixel);

// Samples the ray-cast pre-image of the density's truncated region:
// samples_per_view pixels (exact truncated-Gaussian draws) times
// depth_samples stratified uniform depths each. Requires d_near <= d_far.
std::vector<Vec3> cast_density_region(const CameraView& view, const Gaussian2& density, const LiftingConfig& config,
                                      Rng& rng);

// Midpoints of all cross pairs (a, b) with |a - b| <= delta, ordered by
// (index in samples_1, index in samples_2).
std::vector<Vec3> intersect_regions(const std::vector<Vec3>& samples_1, const std::vector<Vec3>& samples_2,
                                    double delta);

// Mean and population covariance. Throws kEmptyRegion on empty input.
WaypointGaussian fit_waypoint_gaussian(const std::vector<Vec3>& samples, int t);

TrajectoryDistribution lift_trajectory_pair(const PixelTrajectory& xi_1, const PixelTrajectory& xi_2,
                                            const std::pair<CameraView, CameraView>& views,
                                            const LiftingConfig& config, LiftReport* report = nullptr);

std::vector<Vec3> mean_trajectory(const TrajectoryDistribution& dist);
// Independent draws x_t ~ N(mu_t, Sigma_t). Zero covariance yields mu_t exactly.
std::vector<Vec3> sample_trajectory(const TrajectoryDistribution& dist, Rng& rng);
// Sum of per-timestep Gaussian log densities. Throws kSingularCovariance if
// any Sigma_t is not strictly positive definite.
double log_density(const TrajectoryDistribution& dist, const std::vector<Vec3>& traj);
double waypoint_log_density(const WaypointGaussian& w, const Vec3& x);

Json distribution_to_json(const TrajectoryDistribution& dist);
TrajectoryDistribution distribution_from_json(const Json& j);
Json pixel_trajectory_to_json(const PixelTrajectory& traj);
PixelTrajectory pixel_trajectory_from_json(const Json& j);
Json lifting_config_to_json(const LiftingConfig& config);
// Missing keys keep the values already in `base`.
LiftingConfig lifting_config_from_json(const Json& j, LiftingConfig base = {});

}  // namespace crossinstruct::lifting
