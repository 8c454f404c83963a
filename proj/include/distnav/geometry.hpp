#pragma once

// Relative pose math, projection success ratio (PSR) and the overlap
// feature vector used by the noise model.

#include "distnav/simworld.hpp"

#include <Eigen/Dense>

#include <array>

namespace distnav::geo {

constexpr double kDefaultDepthTolerance = 0.1;
constexpr int kOverlapFeatureDim = 13;

struct RelativePose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  /// (this ∘ other): maps frame-c quantities into frame-a when this = a<-b and other = b<-c.
  RelativePose compose(const RelativePose& other) const;
  RelativePose inverse() const;
};

using OverlapFeatures = std::array<double, kOverlapFeatureDim>;

/// Pose of b expressed in the frame of a.
RelativePose relative_pose(const sim::Pose& a, const sim::Pose& b);

/// sign(x) * log(1 + alpha |x|). Throws for alpha <= 0.
double symlog(double x, double alpha);

/// Fraction of valid goal rays that reproject depth-consistently into the
/// current view. Projection is to the nearest ray of the current bundle;
/// points behind the camera or outside the fov count as failures. Returns 0
/// when the goal view has no valid ray.
double psr(const sim::Observation& goal_obs, const sim::Observation& cur_obs, const sim::GridWorld& world,
           double tau_depth = kDefaultDepthTolerance);

/// Max of psr over K evenly spaced headings (2*pi*k/K) at the given position.
double psr_max(const sim::GridWorld& world, double x, double y, const sim::Observation& goal_obs, int K,
               double tau_depth = kDefaultDepthTolerance);

/// [psr, rotation row-major, symlog(translation)] with the goal pose taken
/// relative to the current one.
OverlapFeatures overlap_features(const sim::Observation& cur, const sim::Observation& goal,
                                 const sim::GridWorld& world, double alpha = 1.0,
                                 double tau_depth = kDefaultDepthTolerance);

/// Same as overlap_features with a known psr value.
OverlapFeatures overlap_features_from(double psr_value, const sim::Pose& cur, const sim::Pose& goal, double alpha = 1.0);

}  // namespace distnav::geo
