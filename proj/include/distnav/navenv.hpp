#pragma once

// Point-goal navigation environment with a swappable distance source.

#include "distnav/distmodel.hpp"
#include "distnav/noisemodel.hpp"
#include "distnav/simworld.hpp"

#include <array>
#include <iosfwd>
#include <memory>
#include <vector>

namespace distnav::env {

constexpr int kObstacleSectors = 8;
constexpr int kPsrMaxHeadings = 36;
constexpr int kPolicyObsDim = 2 + kObstacleSectors + 2 + sim::kNumActions;

/// Geodesic distance (BFS cells x cell size). Throws when either pose is not
/// in free space or the pair is disconnected.
double geodesic_distance(const sim::GridWorld& world, const sim::Pose& pose, const sim::Pose& goal_pose);

/// Everything that depends only on (world, goal object): goal pose and view,
/// the goal distance field and a lazily filled psr_max table per cell.
/// Shared between episodes with the same goal; not thread-safe.
class GoalContext {
 public:
  GoalContext(std::shared_ptr<const sim::GridWorld> world, int object_index, const sim::RenderParams& rp = {});

  const sim::GridWorld& world() const { return *world_; }
  std::shared_ptr<const sim::GridWorld> world_ptr() const { return world_; }
  int object_index() const { return object_; }
  const sim::Pose& goal_pose() const { return goal_pose_; }
  const sim::Observation& goal_obs() const { return goal_obs_; }
  const dm::GoalSpec& goal_spec() const { return goal_spec_; }
  const sim::RenderParams& render() const { return rp_; }
  /// BFS steps to the goal cell, -1 if unreachable.
  int steps_to_goal(sim::Cell c) const;
  double distance(const sim::Pose& p) const;  // meters; throws if unreachable
  double psr_max(sim::Cell c);

 private:
  std::shared_ptr<const sim::GridWorld> world_;
  int object_;
  sim::RenderParams rp_;
  sim::Pose goal_pose_;
  sim::Observation goal_obs_;
  dm::GoalSpec goal_spec_;
  std::vector<int> dist_;
  std::vector<double> psr_max_;
};

struct EpisodeSpec {
  std::shared_ptr<GoalContext> goal;
  sim::Pose start;
  int max_steps = 500;
  double d_s = 1.0;
  double psr_s = 0.1;
  double gamma_pen = 0.01;
  double R_s = 2.5;
  bool auto_success = false;  // succeed on entry instead of on stop
  std::uint64_t seed = 0;
};

enum class SourceKind { GroundTruth, GeoNoise, Ou, Learned };
std::string to_string(SourceKind k);
SourceKind source_from_string(const std::string& s);

struct DistanceSource {
  SourceKind kind = SourceKind::GroundTruth;
  std::shared_ptr<const noise::GeoNoiseParams> geonoise;
  noise::OuConfig ou;
  std::shared_ptr<const dm::DistModel> model;

  static DistanceSource ground_truth();
  static DistanceSource geo(std::shared_ptr<const noise::GeoNoiseParams> p);
  static DistanceSource ou_noise(const noise::OuConfig& cfg = {});
  static DistanceSource learned(std::shared_ptr<const dm::DistModel> m);
  void validate() const;
};

struct PolicyObs {
  double d_hat = 0.0;  // meters
  double c_hat = 1.0;
  std::array<double, kObstacleSectors> obstacle{};
  std::array<double, 2> gps{};
  std::array<double, sim::kNumActions> prev_action{};

  std::array<double, kPolicyObsDim> to_array() const;
};

struct StepInfo {
  double true_d = 0.0;
  double psr = 0.0;
  double psr_max = 0.0;
  bool success = false;
  bool moved = false;
};

struct Transition {
  PolicyObs obs;
  sim::Action action = sim::Action::Stop;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

/// r = (d_prev - d) - gamma_pen (1 - psr) + [success] R_s.
double reward(double d_prev, double d, double psr, bool success, const EpisodeSpec& spec);
bool success_condition(double d, double psr_max, const EpisodeSpec& spec);

class NavEnv {
 public:
  /// Throws if start or goal is not in free space or they are disconnected.
  PolicyObs reset(const EpisodeSpec& spec, const DistanceSource& source);
  /// Throws std::logic_error after the episode is done.
  Transition step(sim::Action a);

  bool done() const { return done_; }
  bool success() const { return success_; }
  const sim::Pose& pose() const { return pose_; }
  int steps() const { return steps_; }
  double path_length() const { return path_length_; }
  double start_distance() const { return d0_; }
  double distance() const { return d_; }
  const sim::Observation& observation() const { return obs_; }
  const EpisodeSpec& spec() const { return spec_; }
  /// JSON-lines trace of every subsequent step; nullptr disables.
  void set_trace(std::ostream* out) { trace_ = out; }

 private:
  PolicyObs observe(sim::Action prev, bool has_prev);

  EpisodeSpec spec_;
  DistanceSource source_;
  sim::Pose pose_;
  sim::Observation obs_;
  noise::OuState ou_{0};
  Rng rng_;
  double d_ = 0.0, d0_ = 0.0, path_length_ = 0.0;
  int steps_ = 0;
  bool done_ = true, success_ = false;
  std::ostream* trace_ = nullptr;
};

}  // namespace distnav::env
