#include "distnav/navenv.hpp"

#include "distnav/geometry.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace distnav::env {

double geodesic_distance(const sim::GridWorld& world, const sim::Pose& pose, const sim::Pose& goal_pose) {
  sim::Cell a = world.cell_of(pose.x, pose.y), b = world.cell_of(goal_pose.x, goal_pose.y);
  if (!world.traversable(a) || !world.traversable(b))
    throw std::invalid_argument("geodesic_distance: pose not in free space");
  std::vector<int> d = sim::bfs_distances(world, b);
  int steps = d[world.index(a.x, a.y)];
  if (steps < 0) throw std::runtime_error("geodesic_distance: poses are disconnected");
  return steps * world.cell_size;
}

GoalContext::GoalContext(std::shared_ptr<const sim::GridWorld> world, int object_index, const sim::RenderParams& rp)
    : world_(std::move(world)), object_(object_index), rp_(rp) {
  if (!world_) throw std::invalid_argument("GoalContext: null world");
  const sim::WorldObject& obj = world_->objects.at(static_cast<std::size_t>(object_index));
  sim::Cell vp = sim::viewpoint_cell(*world_, object_index);
  goal_pose_ = sim::cell_pose(vp, obj.facing + std::numbers::pi);
  goal_obs_ = sim::render_observation(*world_, goal_pose_, rp_);
  goal_spec_ = dm::GoalSpec::joint(goal_obs_, dm::Descriptor{world_->room_at(obj.cell), obj.object_class});
  goal_spec_.use_descriptor = false;
  dist_ = sim::bfs_distances(*world_, vp);
  psr_max_.assign(dist_.size(), std::numeric_limits<double>::quiet_NaN());
}

int GoalContext::steps_to_goal(sim::Cell c) const {
  return world_->in_bounds(c.x, c.y) ? dist_[world_->index(c.x, c.y)] : -1;
}

double GoalContext::distance(const sim::Pose& p) const {
  int s = steps_to_goal(world_->cell_of(p.x, p.y));
  if (s < 0) throw std::runtime_error("pose cannot reach the goal");
  return s * world_->cell_size;
}

double GoalContext::psr_max(sim::Cell c) {
  double& slot = psr_max_.at(world_->index(c.x, c.y));
  if (std::isnan(slot)) {
    sim::Pose p = sim::cell_pose(c, 0.0);
    slot = geo::psr_max(*world_, p.x, p.y, goal_obs_, kPsrMaxHeadings);
  }
  return slot;
}

std::string to_string(SourceKind k) {
  switch (k) {
    case SourceKind::GroundTruth: return "gt";
    case SourceKind::GeoNoise: return "geonoise";
    case SourceKind::Ou: return "ou";
    case SourceKind::Learned: return "learned";
  }
  return "unknown";
}

SourceKind source_from_string(const std::string& s) {
  if (s == "gt") return SourceKind::GroundTruth;
  if (s == "geonoise") return SourceKind::GeoNoise;
  if (s == "ou") return SourceKind::Ou;
  if (s == "learned") return SourceKind::Learned;
  throw std::invalid_argument("unknown distance source '" + s + "'");
}

DistanceSource DistanceSource::ground_truth() { return {}; }

DistanceSource DistanceSource::geo(std::shared_ptr<const noise::GeoNoiseParams> p) {
  DistanceSource s;
  s.kind = SourceKind::GeoNoise;
  s.geonoise = std::move(p);
  return s;
}

DistanceSource DistanceSource::ou_noise(const noise::OuConfig& cfg) {
  DistanceSource s;
  s.kind = SourceKind::Ou;
  s.ou = cfg;
  return s;
}

DistanceSource DistanceSource::learned(std::shared_ptr<const dm::DistModel> m) {
  DistanceSource s;
  s.kind = SourceKind::Learned;
  s.model = std::move(m);
  return s;
}

void DistanceSource::validate() const {
  if (kind == SourceKind::GeoNoise && !geonoise) throw std::invalid_argument("geonoise source without parameters");
  if (kind == SourceKind::Learned && !model) throw std::invalid_argument("learned source without a model");
}

std::array<double, kPolicyObsDim> PolicyObs::to_array() const {
  std::array<double, kPolicyObsDim> a{};
  std::size_t i = 0;
  a[i++] = d_hat;
  a[i++] = c_hat;
  for (double v : obstacle) a[i++] = v;
  for (double v : gps) a[i++] = v;
  for (double v : prev_action) a[i++] = v;
  return a;
}

bool success_condition(double d, double psr_max, const EpisodeSpec& spec) {
  return d < spec.d_s && psr_max > spec.psr_s;
}

double reward(double d_prev, double d, double psr, bool success, const EpisodeSpec& spec) {
  return (d_prev - d) - spec.gamma_pen * (1.0 - psr) + (success ? spec.R_s : 0.0);
}

PolicyObs NavEnv::reset(const EpisodeSpec& spec, const DistanceSource& source) {
  if (!spec.goal) throw std::invalid_argument("episode has no goal");
  if (!(spec.d_s > 0) || !(spec.psr_s > 0 && spec.psr_s <= 1)) throw std::invalid_argument("invalid success thresholds");
  source.validate();
  const sim::GridWorld& w = spec.goal->world();
  if (!w.traversable(w.cell_of(spec.start.x, spec.start.y))) throw std::invalid_argument("start not in free space");
  spec_ = spec;
  source_ = source;
  pose_ = spec.start;
  d_ = d0_ = spec_.goal->distance(pose_);
  path_length_ = 0.0;
  steps_ = 0;
  done_ = false;
  success_ = false;
  rng_ = make_rng(spec.seed, "episode");
  ou_ = noise::OuState(derive_seed(spec.seed, "episode/ou"));
  obs_ = sim::render_observation(w, pose_, spec_.goal->render());
  return observe(sim::Action::Stop, false);
}

PolicyObs NavEnv::observe(sim::Action prev, bool has_prev) {
  GoalContext& g = *spec_.goal;
  PolicyObs o;
  switch (source_.kind) {
    case SourceKind::GroundTruth:
      o.d_hat = d_;
      o.c_hat = 1.0;
      break;
    case SourceKind::GeoNoise: {
      double p = geo::psr(g.goal_obs(), obs_, g.world());
      auto feats = geo::overlap_features_from(p, pose_, g.goal_pose());
      dm::DistPrediction s = noise::sample_geonoise(*source_.geonoise, feats, rng_);
      o.d_hat = s.t_hat * g.world().cell_size;
      o.c_hat = s.c_hat;
      break;
    }
    case SourceKind::Ou: {
      dm::DistPrediction s = noise::ou_apply(ou_, d_, source_.ou);
      o.d_hat = s.t_hat;
      o.c_hat = s.c_hat;
      break;
    }
    case SourceKind::Learned: {
      dm::DistPrediction s = dm::forward(*source_.model, obs_, g.goal_spec()).pred;
      o.d_hat = s.t_hat * g.world().cell_size;
      o.c_hat = s.c_hat;
      break;
    }
  }
  const int R = obs_.ray_count();
  const int per = R / kObstacleSectors;
  for (int s = 0; s < kObstacleSectors; ++s) {
    double acc = 0.0;
    for (int k = s * per; k < (s + 1) * per; ++k) acc += obs_.depth[k];
    o.obstacle[s] = acc / per;
  }
  double dx = pose_.x - spec_.start.x, dy = pose_.y - spec_.start.y;
  double c = std::cos(spec_.start.heading), s = std::sin(spec_.start.heading);
  o.gps = {c * dx + s * dy, -s * dx + c * dy};
  if (has_prev) o.prev_action[static_cast<int>(prev)] = 1.0;
  return o;
}

Transition NavEnv::step(sim::Action a) {
  if (done_) throw std::logic_error("step called after the episode ended");
  GoalContext& g = *spec_.goal;
  const sim::GridWorld& w = g.world();
  const double d_prev = d_;
  Transition tr;
  tr.action = a;
  pose_ = sim::apply_action(w, pose_, a, &tr.info.moved);
  if (tr.info.moved) path_length_ += w.cell_size;
  ++steps_;
  d_ = g.distance(pose_);
  obs_ = sim::render_observation(w, pose_, g.render());
  tr.info.true_d = d_;
  tr.info.psr = geo::psr(g.goal_obs(), obs_, w);
  tr.info.psr_max = g.psr_max(w.cell_of(pose_.x, pose_.y));
  bool cond = success_condition(d_, tr.info.psr_max, spec_);
  bool success = cond && (a == sim::Action::Stop || spec_.auto_success);
  tr.reward = reward(d_prev, d_, tr.info.psr, success, spec_);
  tr.info.success = success;
  tr.done = success || a == sim::Action::Stop || steps_ >= spec_.max_steps;
  done_ = tr.done;
  success_ = success;
  tr.obs = observe(a, true);
  if (trace_) {
    nlohmann::ordered_json j;
    j["step"] = steps_;
    j["pose"] = {pose_.x, pose_.y, pose_.heading};
    j["action"] = static_cast<int>(a);
    j["reward"] = tr.reward;
    j["d_hat"] = tr.obs.d_hat;
    j["c_hat"] = tr.obs.c_hat;
    j["true_d"] = d_;
    j["psr"] = tr.info.psr;
    j["done"] = tr.done;
    j["success"] = success;
    *trace_ << j.dump() << '\n';
  }
  return tr;
}

}  // namespace distnav::env
