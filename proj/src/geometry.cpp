#include "distnav/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace distnav::geo {
namespace {

Eigen::Matrix3d rot_z(double theta) {
  return Eigen::AngleAxisd(theta, Eigen::Vector3d::UnitZ()).toRotationMatrix();
}

void check_compatible(const sim::Observation& a, const sim::Observation& b) {
  if (a.ray_count() != b.ray_count() || a.fov != b.fov)
    throw std::invalid_argument("psr: observations differ in ray_count or fov");
  if (a.ray_count() == 0) throw std::invalid_argument("psr: empty observation");
}

}  // namespace

RelativePose RelativePose::compose(const RelativePose& other) const {
  RelativePose out;
  out.rotation = rotation * other.rotation;
  out.translation = translation + rotation * other.translation;
  return out;
}

RelativePose RelativePose::inverse() const {
  RelativePose out;
  out.rotation = rotation.transpose();
  out.translation = -(out.rotation * translation);
  return out;
}

RelativePose relative_pose(const sim::Pose& a, const sim::Pose& b) {
  RelativePose out;
  out.rotation = rot_z(b.heading - a.heading);
  Eigen::Vector3d d(b.x - a.x, b.y - a.y, 0.0);
  out.translation = rot_z(-a.heading) * d;
  out.translation.z() = 0.0;
  return out;
}

double symlog(double x, double alpha) {
  if (!(alpha > 0)) throw std::invalid_argument("symlog: alpha must be positive");
  if (x == 0) return 0.0;
  double v = std::log1p(alpha * std::abs(x));
  return x < 0 ? -v : v;
}

double psr(const sim::Observation& goal_obs, const sim::Observation& cur_obs, const sim::GridWorld& world,
           double tau_depth) {
  check_compatible(goal_obs, cur_obs);
  (void)world;
  const int R = goal_obs.ray_count();
  const double fov = goal_obs.fov;
  const double spacing = fov / R;
  const sim::Pose& g = goal_obs.pose;
  const sim::Pose& c = cur_obs.pose;
  const double cc = std::cos(c.heading), sc = std::sin(c.heading);

  int valid = 0, ok = 0;
  for (int i = 0; i < R; ++i) {
    double d = goal_obs.depth[i];
    if (!(d < goal_obs.max_range)) continue;
    ++valid;
    double ang = g.heading + sim::ray_offset(i, R, fov);
    double px = g.x + d * std::cos(ang) - c.x;
    double py = g.y + d * std::sin(ang) - c.y;
    double qx = cc * px + sc * py;
    double qy = -sc * px + cc * py;
    double phi = std::atan2(qy, qx);
    if (std::abs(phi) > fov / 2.0) continue;
    int j = static_cast<int>(std::floor((fov / 2.0 - phi) / spacing));
    j = std::clamp(j, 0, R - 1);
    double predicted = std::hypot(qx, qy);
    if (std::abs(predicted - cur_obs.depth[j]) < tau_depth) ++ok;
  }
  return valid == 0 ? 0.0 : static_cast<double>(ok) / valid;
}

double psr_max(const sim::GridWorld& world, double x, double y, const sim::Observation& goal_obs, int K,
               double tau_depth) {
  if (K < 1) throw std::invalid_argument("psr_max: K must be >= 1");
  sim::Cell cell = world.cell_of(x, y);
  if (!world.traversable(cell)) throw std::invalid_argument("psr_max: position is not in free space");
  sim::RenderParams rp{goal_obs.ray_count(), goal_obs.fov, goal_obs.max_range};
  double best = 0.0;
  for (int k = 0; k < K; ++k) {
    sim::Pose p{x, y, 2.0 * std::numbers::pi * k / K};
    best = std::max(best, psr(goal_obs, sim::render_observation(world, p, rp), world, tau_depth));
  }
  return best;
}

OverlapFeatures overlap_features_from(double psr_value, const sim::Pose& cur, const sim::Pose& goal, double alpha) {
  RelativePose rel = relative_pose(cur, goal);
  OverlapFeatures f{};
  f[0] = psr_value;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) f[1 + 3 * r + c] = rel.rotation(r, c);
  for (int k = 0; k < 3; ++k) f[10 + k] = symlog(rel.translation(k), alpha);
  return f;
}

OverlapFeatures overlap_features(const sim::Observation& cur, const sim::Observation& goal,
                                 const sim::GridWorld& world, double alpha, double tau_depth) {
  return overlap_features_from(psr(goal, cur, world, tau_depth), cur.pose, goal.pose, alpha);
}

}  // namespace distnav::geo
