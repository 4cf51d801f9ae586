#include "crossinstruct/lifting.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <optional>
#include <thread>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "crossinstruct/error.hpp"

namespace crossinstruct::lifting {

void validate(const PixelTrajectory& traj) {
  if (traj.points.size() < 2) fail(ErrorKind::kValidation, "pixel trajectory needs at least 2 points", "points");
  for (const auto& p : traj.points)
    if (!p.allFinite()) fail(ErrorKind::kValidation, "pixel trajectory point not finite", "points");
  if (!traj.sigma.allFinite() || std::abs(traj.sigma(0, 1) - traj.sigma(1, 0)) > 1e-12) {
    fail(ErrorKind::kValidation, "sigma must be symmetric", "sigma");
  }
  Eigen::SelfAdjointEigenSolver<Mat2> es(traj.sigma);
  if (!(es.eigenvalues().minCoeff() > 0)) fail(ErrorKind::kValidation, "sigma must be positive definite", "sigma");
}

void validate(const LiftingConfig& c) {
  if (!(c.d_near > 0 && c.d_near < c.d_far)) fail(ErrorKind::kValidation, "need 0 < d_near < d_far", "d_near");
  if (!(c.epsilon_sigma > 0)) fail(ErrorKind::kValidation, "epsilon_sigma must be positive", "epsilon_sigma");
  if (!(c.delta > 0)) fail(ErrorKind::kValidation, "delta must be positive", "delta");
  if (c.samples_per_view < 1) fail(ErrorKind::kValidation, "samples_per_view must be >= 1", "samples_per_view");
  if (c.depth_samples < 1) fail(ErrorKind::kValidation, "depth_samples must be >= 1", "depth_samples");
  if (c.max_delta_widenings < 0 || c.max_delta_widenings > 3) {
    fail(ErrorKind::kValidation, "max_delta_widenings must be in [0, 3]", "max_delta_widenings");
  }
  if (c.threads < 1) fail(ErrorKind::kValidation, "threads must be >= 1", "threads");
}

void validate(const TrajectoryDistribution& dist) {
  for (std::size_t i = 0; i < dist.waypoints.size(); ++i) {
    const auto& w = dist.waypoints[i];
    if (w.t != static_cast<int>(i + 1)) fail(ErrorKind::kValidation, "timesteps must be contiguous from 1", "waypoints.t");
    if (!w.mu.allFinite() || !w.sigma.allFinite()) fail(ErrorKind::kValidation, "non-finite waypoint", "waypoints");
    if ((w.sigma - w.sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
      fail(ErrorKind::kValidation, "waypoint sigma not symmetric", "waypoints.sigma");
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(w.sigma, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-12) fail(ErrorKind::kValidation, "waypoint sigma not PSD", "waypoints.sigma");
  }
}

std::vector<Vec2> resample_equal_length(const std::vector<Vec2>& polyline, std::size_t horizon) {
  if (polyline.size() < 2) fail(ErrorKind::kValidation, "polyline needs at least 2 points", "polyline");
  if (horizon < 2) fail(ErrorKind::kValidation, "horizon must be >= 2", "horizon");
  std::vector<double> cum(polyline.size(), 0.0);
  for (std::size_t i = 1; i < polyline.size(); ++i) cum[i] = cum[i - 1] + (polyline[i] - polyline[i - 1]).norm();
  const double total = cum.back();
  if (!(total > 0)) fail(ErrorKind::kValidation, "polyline has zero length", "polyline");

  std::vector<Vec2> out;
  out.reserve(horizon);
  out.push_back(polyline.front());
  std::size_t seg = 0;
  for (std::size_t k = 1; k + 1 < horizon; ++k) {
    const double s = total * static_cast<double>(k) / static_cast<double>(horizon - 1);
    while (seg + 2 < polyline.size() && cum[seg + 1] <= s) ++seg;
    const double len = cum[seg + 1] - cum[seg];
    const double f = len > 0 ? (s - cum[seg]) / len : 0.0;
    out.push_back(polyline[seg] + f * (polyline[seg + 1] - polyline[seg]));
  }
  out.push_back(polyline.back());
  return out;
}

Gaussian2 pixel_density_at(const PixelTrajectory& traj, std::size_t t) {
  if (t < 1 || t > traj.points.size()) {
    fail(ErrorKind::kIndex, "timestep " + std::to_string(t) + " outside 1.." + std::to_string(traj.points.size()), "t");
  }
  return {traj.points[t - 1], traj.sigma};
}

double density_value(const Gaussian2& g, const Vec2& pixel) {
  const Vec2 d = pixel - g.mean;
  const double m2 = d.dot(g.cov.inverse() * d);
  return std::exp(-0.5 * m2) / (2.0 * std::numbers::pi * std::sqrt(g.cov.determinant()));
}

std::vector<Vec3> cast_density_region(const CameraView& view, const Gaussian2& density, const LiftingConfig& config,
                                      Rng& rng) {
  const Eigen::LLT<Mat2> llt(density.cov);
  if (llt.info() != Eigen::Success) fail(ErrorKind::kValidation, "pixel covariance not positive definite", "sigma");
  const Mat2 l = llt.matrixL();
  // Mahalanobis radius of a 2D Gaussian is Rayleigh distributed; invert its
  // CDF restricted to [0, epsilon_sigma].
  const double mass = -std::expm1(-0.5 * config.epsilon_sigma * config.epsilon_sigma);

  // Stratified depths: pixel sample i takes strata j * P + perm[i] of the
  // P * D equal strata, all shifted by one shared uniform offset. Each depth
  // is marginally uniform on [d_near, d_far] and the union over all pixel
  // samples is an evenly spaced grid.
  const auto n_pix = static_cast<std::size_t>(config.samples_per_view);
  const auto n_depth = static_cast<std::size_t>(config.depth_samples);
  const double offset = rng.uniform();
  std::vector<std::size_t> perm(n_pix);
  for (std::size_t i = 0; i < n_pix; ++i) perm[i] = i;
  for (std::size_t i = n_pix; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  const double stratum = (config.d_far - config.d_near) / static_cast<double>(n_pix * n_depth);

  std::vector<Vec3> out;
  out.reserve(n_pix * n_depth);
  for (std::size_t i = 0; i < n_pix; ++i) {
    const double r = std::sqrt(-2.0 * std::log1p(-rng.uniform() * mass));
    const double theta = 2.0 * std::numbers::pi * rng.uniform();
    const Vec2 pixel = density.mean + l * Vec2(r * std::cos(theta), r * std::sin(theta));
    const geometry::Ray ray = geometry::pixel_to_ray(view, pixel);
    for (std::size_t j = 0; j < n_depth; ++j) {
      const double k = static_cast<double>(j * n_pix + perm[i]) + offset;
      out.push_back(geometry::ray_point(ray, config.d_near + stratum * k));
    }
  }
  return out;
}

namespace {

struct Cell {
  std::int64_t x, y, z;
  auto operator<=>(const Cell&) const = default;
};

Cell cell_of(const Vec3& p, double size) {
  return {static_cast<std::int64_t>(std::floor(p.x() / size)), static_cast<std::int64_t>(std::floor(p.y() / size)),
          static_cast<std::int64_t>(std::floor(p.z() / size))};
}

}  // namespace

std::vector<Vec3> intersect_regions(const std::vector<Vec3>& samples_1, const std::vector<Vec3>& samples_2,
                                    double delta) {
  if (samples_1.empty() || samples_2.empty()) fail(ErrorKind::kValidation, "sample sets must be nonempty", "samples");
  if (!(delta > 0)) fail(ErrorKind::kValidation, "delta must be positive", "delta");

  std::vector<std::pair<Cell, std::size_t>> grid;
  grid.reserve(samples_2.size());
  for (std::size_t j = 0; j < samples_2.size(); ++j) grid.emplace_back(cell_of(samples_2[j], delta), j);
  std::sort(grid.begin(), grid.end());

  // Neighbor candidates are gathered once per occupied cell of samples_1.
  std::vector<std::pair<Cell, std::size_t>> cells_1;
  cells_1.reserve(samples_1.size());
  for (std::size_t i = 0; i < samples_1.size(); ++i) cells_1.emplace_back(cell_of(samples_1[i], delta), i);
  std::sort(cells_1.begin(), cells_1.end());
  std::vector<std::size_t> group_of(samples_1.size());
  std::vector<std::vector<std::size_t>> candidates;
  for (std::size_t k = 0; k < cells_1.size(); ++k) {
    if (k == 0 || !(cells_1[k].first == cells_1[k - 1].first)) {
      const Cell c = cells_1[k].first;
      auto& cand = candidates.emplace_back();
      for (std::int64_t dx = -1; dx <= 1; ++dx)
        for (std::int64_t dy = -1; dy <= 1; ++dy)
          for (std::int64_t dz = -1; dz <= 1; ++dz) {
            const Cell key{c.x + dx, c.y + dy, c.z + dz};
            auto lo = std::lower_bound(grid.begin(), grid.end(), key,
                                       [](const auto& entry, const Cell& q) { return entry.first < q; });
            for (; lo != grid.end() && lo->first == key; ++lo) cand.push_back(lo->second);
          }
      std::sort(cand.begin(), cand.end());
    }
    group_of[cells_1[k].second] = candidates.size() - 1;
  }

  const double delta2 = delta * delta;
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < samples_1.size(); ++i) {
    const Vec3& a = samples_1[i];
    for (std::size_t j : candidates[group_of[i]]) {
      const Vec3& b = samples_2[j];
      if ((a - b).squaredNorm() <= delta2) out.push_back(0.5 * (a + b));
    }
  }
  return out;
}

WaypointGaussian fit_waypoint_gaussian(const std::vector<Vec3>& samples, int t) {
  if (samples.empty()) fail(ErrorKind::kEmptyRegion, "no samples at t=" + std::to_string(t), "t");
  const double n = static_cast<double>(samples.size());
  Vec3 mu = Vec3::Zero();
  for (const auto& s : samples) mu += s;
  mu /= n;
  Mat3 cov = Mat3::Zero();
  for (const auto& s : samples) {
    const Vec3 d = s - mu;
    cov += d * d.transpose();
  }
  cov /= n;
  cov = 0.5 * (cov + cov.transpose()).eval();
  return {t, mu, cov, samples.size()};
}

namespace {

WaypointGaussian lift_timestep(const PixelTrajectory& xi_1, const PixelTrajectory& xi_2,
                               const std::pair<CameraView, CameraView>& views, const LiftingConfig& config, int t,
                               std::vector<std::string>& diags) {
  const auto ut = static_cast<std::uint64_t>(t);
  Rng rng_1 = Rng::derive(config.rng_seed, {ut, 1});
  Rng rng_2 = Rng::derive(config.rng_seed, {ut, 2});
  const auto region_1 = cast_density_region(views.first, pixel_density_at(xi_1, ut), config, rng_1);
  const auto region_2 = cast_density_region(views.second, pixel_density_at(xi_2, ut), config, rng_2);
  double delta = config.delta;
  for (int attempt = 0;; ++attempt) {
    auto kept = intersect_regions(region_1, region_2, delta);
    if (!kept.empty()) return fit_waypoint_gaussian(kept, t);
    if (attempt >= config.max_delta_widenings) break;
    delta *= 2.0;
    diags.push_back("t=" + std::to_string(t) + ": empty intersection, widening delta to " + std::to_string(delta));
  }
  fail(ErrorKind::kEmptyRegion, "empty cross-view intersection at t=" + std::to_string(t), "t");
}

}  // namespace

TrajectoryDistribution lift_trajectory_pair(const PixelTrajectory& xi_1, const PixelTrajectory& xi_2,
                                            const std::pair<CameraView, CameraView>& views,
                                            const LiftingConfig& config, LiftReport* report) {
  validate(config);
  validate(xi_1);
  validate(xi_2);
  if (xi_1.horizon() != xi_2.horizon()) {
    fail(ErrorKind::kValidation,
         "trajectory lengths differ (" + std::to_string(xi_1.horizon()) + " vs " + std::to_string(xi_2.horizon()) + ")",
         "points");
  }
  if (xi_1.view_id != views.first.id || xi_2.view_id != views.second.id) {
    fail(ErrorKind::kValidation, "trajectory view ids do not match the camera views", "view_id");
  }
  const int horizon = static_cast<int>(xi_1.horizon());
  std::vector<std::optional<WaypointGaussian>> slots(horizon);
  std::vector<std::vector<std::string>> diags(horizon);
  std::vector<std::optional<Error>> errors(horizon);

  auto run = [&](int index) {
    try {
      slots[index] = lift_timestep(xi_1, xi_2, views, config, index + 1, diags[index]);
    } catch (const Error& e) {
      errors[index] = e;
    }
  };
  const int workers = std::min(config.threads, horizon);
  if (workers <= 1) {
    for (int i = 0; i < horizon; ++i) run(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (int i = next++; i < horizon; i = next++) run(i);
      });
    }
  }

  TrajectoryDistribution dist;
  for (int i = 0; i < horizon; ++i) {
    if (report) report->diagnostics.insert(report->diagnostics.end(), diags[i].begin(), diags[i].end());
    if (errors[i]) throw *errors[i];
    dist.waypoints.push_back(*slots[i]);
  }
  return dist;
}

std::vector<Vec3> mean_trajectory(const TrajectoryDistribution& dist) {
  std::vector<Vec3> out;
  out.reserve(dist.waypoints.size());
  for (const auto& w : dist.waypoints) out.push_back(w.mu);
  return out;
}

std::vector<Vec3> sample_trajectory(const TrajectoryDistribution& dist, Rng& rng) {
  std::vector<Vec3> out;
  out.reserve(dist.waypoints.size());
  for (const auto& w : dist.waypoints) {
    const Vec3 z(rng.normal(), rng.normal(), rng.normal());
    if (w.sigma.isZero(0.0)) {
      out.push_back(w.mu);
      continue;
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(w.sigma);
    const Vec3 scale = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    out.push_back(w.mu + es.eigenvectors() * scale.cwiseProduct(z));
  }
  return out;
}

double waypoint_log_density(const WaypointGaussian& w, const Vec3& x) {
  const Eigen::LLT<Mat3> llt(w.sigma);
  if (llt.info() != Eigen::Success) {
    fail(ErrorKind::kSingularCovariance, "covariance at t=" + std::to_string(w.t) + " is not positive definite", "sigma");
  }
  const Mat3 l = llt.matrixL();
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  if (!std::isfinite(log_det)) fail(ErrorKind::kSingularCovariance, "singular covariance at t=" + std::to_string(w.t), "sigma");
  const Vec3 y = l.triangularView<Eigen::Lower>().solve(x - w.mu);
  return -0.5 * (3.0 * std::log(2.0 * std::numbers::pi) + log_det + y.squaredNorm());
}

double log_density(const TrajectoryDistribution& dist, const std::vector<Vec3>& traj) {
  if (traj.size() != dist.waypoints.size()) fail(ErrorKind::kValidation, "trajectory length differs from horizon", "traj");
  double total = 0.0;
  for (std::size_t i = 0; i < traj.size(); ++i) total += waypoint_log_density(dist.waypoints[i], traj[i]);
  return total;
}

Json distribution_to_json(const TrajectoryDistribution& dist) {
  Json wps = Json::array();
  for (const auto& w : dist.waypoints) {
    Json sigma = Json::array();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) sigma.push_back(w.sigma(r, c));
    wps.push_back({{"t", w.t}, {"mu", {w.mu.x(), w.mu.y(), w.mu.z()}}, {"sigma", sigma}, {"n_samples", w.n_samples}});
  }
  return Json{{"horizon", dist.waypoints.size()}, {"waypoints", wps}};
}

namespace {

void require(bool ok, const std::string& msg, const std::string& field) {
  if (!ok) fail(ErrorKind::kParse, msg, field);
}

double num(const Json& j, const std::string& field) {
  require(j.is_number(), "expected number", field);
  return j.get<double>();
}

}  // namespace

TrajectoryDistribution distribution_from_json(const Json& j) {
  require(j.is_object() && j.contains("horizon") && j.contains("waypoints"), "distribution needs horizon and waypoints",
          "distribution");
  require(j["horizon"].is_number_unsigned(), "horizon must be a count", "horizon");
  require(j["waypoints"].is_array(), "waypoints must be an array", "waypoints");
  TrajectoryDistribution dist;
  for (const auto& wj : j["waypoints"]) {
    require(wj.is_object() && wj.contains("t") && wj.contains("mu") && wj.contains("sigma") && wj.contains("n_samples"),
            "waypoint needs t, mu, sigma, n_samples", "waypoints");
    WaypointGaussian w;
    require(wj["t"].is_number_integer(), "t must be an integer", "waypoints.t");
    w.t = wj["t"].get<int>();
    require(wj["mu"].is_array() && wj["mu"].size() == 3, "mu must have 3 numbers", "waypoints.mu");
    require(wj["sigma"].is_array() && wj["sigma"].size() == 9, "sigma must have 9 numbers", "waypoints.sigma");
    for (int i = 0; i < 3; ++i) w.mu(i) = num(wj["mu"][i], "waypoints.mu");
    for (int i = 0; i < 9; ++i) w.sigma(i / 3, i % 3) = num(wj["sigma"][i], "waypoints.sigma");
    require(wj["n_samples"].is_number_unsigned(), "n_samples must be a count", "waypoints.n_samples");
    w.n_samples = wj["n_samples"].get<std::size_t>();
    dist.waypoints.push_back(w);
  }
  require(dist.waypoints.size() == j["horizon"].get<std::size_t>(), "horizon does not match waypoint count", "horizon");
  validate(dist);
  return dist;
}

Json pixel_trajectory_to_json(const PixelTrajectory& traj) {
  Json pts = Json::array();
  for (const auto& p : traj.points) pts.push_back({p.x(), p.y()});
  return Json{{"view_id", traj.view_id},
              {"sigma", {traj.sigma(0, 0), traj.sigma(0, 1), traj.sigma(1, 0), traj.sigma(1, 1)}},
              {"points", pts}};
}

PixelTrajectory pixel_trajectory_from_json(const Json& j) {
  if (!j.is_object()) fail(ErrorKind::kValidation, "pixel trajectory must be an object", "");
  PixelTrajectory traj;
  if (!j.contains("view_id") || !j["view_id"].is_string()) fail(ErrorKind::kValidation, "missing view_id", "view_id");
  traj.view_id = j["view_id"].get<std::string>();
  if (j.contains("sigma")) {
    const Json& s = j["sigma"];
    if (!s.is_array() || s.size() != 4) fail(ErrorKind::kValidation, "sigma must have 4 numbers", "sigma");
    for (int i = 0; i < 4; ++i) {
      if (!s[i].is_number()) fail(ErrorKind::kValidation, "sigma entry not a number", "sigma");
      traj.sigma(i / 2, i % 2) = s[i].get<double>();
    }
  }
  if (!j.contains("points") || !j["points"].is_array()) fail(ErrorKind::kValidation, "missing points", "points");
  for (const auto& p : j["points"]) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      fail(ErrorKind::kValidation, "point must be [u, v]", "points");
    }
    traj.points.emplace_back(p[0].get<double>(), p[1].get<double>());
  }
  validate(traj);
  return traj;
}

Json lifting_config_to_json(const LiftingConfig& c) {
  return Json{{"d_near", c.d_near},
              {"d_far", c.d_far},
              {"epsilon_sigma", c.epsilon_sigma},
              {"delta", c.delta},
              {"samples_per_view", c.samples_per_view},
              {"depth_samples", c.depth_samples},
              {"rng_seed", c.rng_seed},
              {"max_delta_widenings", c.max_delta_widenings}};
}

LiftingConfig lifting_config_from_json(const Json& j, LiftingConfig c) {
  if (!j.is_object()) fail(ErrorKind::kValidation, "lifting config must be an object", "lifting");
  auto get = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(dst);
    } catch (const Json::exception&) {
      fail(ErrorKind::kValidation, std::string("bad value for ") + key, key);
    }
  };
  get("d_near", c.d_near);
  get("d_far", c.d_far);
  get("epsilon_sigma", c.epsilon_sigma);
  get("delta", c.delta);
  get("samples_per_view", c.samples_per_view);
  get("depth_samples", c.depth_samples);
  get("rng_seed", c.rng_seed);
  get("max_delta_widenings", c.max_delta_widenings);
  get("threads", c.threads);
  validate(c);
  return c;
}

}  // namespace crossinstruct::lifting
