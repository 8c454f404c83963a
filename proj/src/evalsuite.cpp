#include "distnav/evalsuite.hpp"

#include "distnav/geometry.hpp"
#include "distnav/rng.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace distnav::eval {

TauResult kendall_tau(std::span<const double> pred, std::span<const double> gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("kendall_tau: length mismatch");
  if (pred.size() < 2) throw std::invalid_argument("kendall_tau: need at least two samples");
  TauResult r;
  r.n = static_cast<long>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = i + 1; j < pred.size(); ++j) {
      double dp = pred[i] - pred[j];
      double dg = gt[i] - gt[j];
      if (dp == 0) ++r.pred_ties;
      if (dg == 0) ++r.gt_ties;
      if (dp == 0 || dg == 0) continue;
      if ((dp > 0) == (dg > 0))
        ++r.concordant;
      else
        ++r.discordant;
    }
  }
  const long n0 = r.n * (r.n - 1) / 2;
  if (r.gt_ties == n0) throw std::invalid_argument("kendall_tau: ground truth is constant");
  if (r.pred_ties == n0) {
    r.degenerate = true;
    r.tau = 0.0;
    return r;
  }
  double denom = std::sqrt(static_cast<double>(n0 - r.pred_ties) * static_cast<double>(n0 - r.gt_ties));
  r.tau = static_cast<double>(r.concordant - r.discordant) / denom;
  return r;
}

DistanceFn model_fn(const dm::DistModel& model) {
  return [&model](std::span<const sim::Observation* const> obs, std::span<const dm::GoalSpec* const> goals) {
    return dm::predict(model, obs, goals);
  };
}

OrdinalResult ordinal_consistency(const DistanceFn& fn, const std::vector<sim::Trajectory>& trajectories,
                                  const HorizonSpec& spec, EvalGoal goal_kind,
                                  const std::vector<dm::Descriptor>* descriptors) {
  if (spec.min_distance < 0 || spec.min_distance >= spec.max_start_distance)
    throw std::invalid_argument("horizon requires 0 <= min < max");
  if (goal_kind != EvalGoal::View && (!descriptors || descriptors->size() != trajectories.size()))
    throw std::invalid_argument("descriptor goals need one descriptor per trajectory");
  OrdinalResult res;
  double sum = 0.0;
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    const auto& obs = trajectories[k].observations;
    const int len = static_cast<int>(obs.size());
    if (len <= spec.min_distance + 1) continue;
    dm::GoalSpec goal;
    switch (goal_kind) {
      case EvalGoal::View: goal = dm::GoalSpec::from_view(obs.back()); break;
      case EvalGoal::Descriptor: goal = dm::GoalSpec::from_descriptor((*descriptors)[k]); break;
      case EvalGoal::Joint: goal = dm::GoalSpec::joint(obs.back(), (*descriptors)[k]); break;
    }
    std::vector<const sim::Observation*> frames;
    std::vector<double> remaining;
    for (int i = 0; i < len; ++i) {
      int r = len - 1 - i;
      if (r < spec.min_distance || r > spec.max_start_distance) continue;
      frames.push_back(&obs[i]);
      remaining.push_back(r);
    }
    std::vector<const dm::GoalSpec*> goals(frames.size(), &goal);
    std::vector<dm::DistPrediction> pred = fn(frames, goals);
    std::vector<double> t(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) t[i] = pred[i].t_hat;
    TauResult tr = kendall_tau(t, remaining);
    if (tr.degenerate) ++res.degenerate;
    sum += tr.tau;
    res.per_trajectory.push_back(tr);
    res.trajectory_index.push_back(static_cast<int>(k));
  }
  if (res.per_trajectory.empty()) throw std::invalid_argument("ordinal_consistency: no qualifying trajectories");
  res.mean_tau = sum / static_cast<double>(res.per_trajectory.size());
  return res;
}

AccuracyResult distance_accuracy(const DistanceFn& fn, const sim::GridWorld& world, const AccuracyGoal& goal,
                                 int n_in, int n_out, std::uint64_t seed, int max_attempts) {
  if (world.room_count < 2) throw std::invalid_argument("distance_accuracy: world needs at least two rooms");
  if (n_in < 0 || n_out < 0) throw std::invalid_argument("distance_accuracy: negative sample count");
  goal.goal.validate();
  const sim::Observation& g = goal.goal_obs;
  sim::RenderParams rp{g.ray_count(), g.fov, g.max_range};
  const std::vector<int> dist = sim::bfs_distances(world, world.cell_of(g.pose.x, g.pose.y));
  const std::vector<sim::Cell> cells = world.traversable_cells();
  std::map<std::pair<int, int>, double> overlap_cache;
  auto overlap = [&](sim::Cell c) {
    auto key = std::make_pair(c.x, c.y);
    auto it = overlap_cache.find(key);
    if (it != overlap_cache.end()) return it->second;
    sim::Pose p = sim::cell_pose(c, 0.0);
    double v = geo::psr_max(world, p.x, p.y, g, 36);
    overlap_cache.emplace(key, v);
    return v;
  };

  Rng rng = make_rng(seed, "eval/distance-accuracy");
  std::vector<sim::Observation> in_obs, out_obs;
  std::vector<double> in_d, out_d;
  int attempts = 0;
  while (static_cast<int>(in_obs.size()) < n_in || static_cast<int>(out_obs.size()) < n_out) {
    if (++attempts > max_attempts)
      throw std::runtime_error("distance_accuracy: insufficient qualifying poses (" + std::to_string(in_obs.size()) +
                               " in, " + std::to_string(out_obs.size()) + " out)");
    sim::Cell c = cells[uniform_index(rng, cells.size())];
    int d = dist[world.index(c.x, c.y)];
    if (d < 0) continue;
    double heading = static_cast<double>(uniform_index(rng, sim::kTurnsPerRevolution)) * sim::kTurnIncrement;
    double om = overlap(c);
    if (om > 0) {
      if (static_cast<int>(in_obs.size()) >= n_in) continue;
      sim::Observation o = sim::render_observation(world, sim::cell_pose(c, heading), rp);
      if (geo::psr(g, o, world) > 0) continue;
      in_obs.push_back(std::move(o));
      in_d.push_back(d * world.cell_size);
    } else {
      if (static_cast<int>(out_obs.size()) >= n_out) continue;
      out_obs.push_back(sim::render_observation(world, sim::cell_pose(c, heading), rp));
      out_d.push_back(d * world.cell_size);
    }
  }

  auto predict_all = [&](const std::vector<sim::Observation>& obs) {
    std::vector<const sim::Observation*> ptrs;
    for (const auto& o : obs) ptrs.push_back(&o);
    std::vector<const dm::GoalSpec*> goals(ptrs.size(), &goal.goal);
    std::vector<double> t;
    if (ptrs.empty()) return t;
    for (const auto& p : fn(ptrs, goals)) t.push_back(p.t_hat);
    return t;
  };
  const std::vector<double> in_t = predict_all(in_obs), out_t = predict_all(out_obs);

  auto score = [](PairAccuracy& acc, double da, double ta, double db, double tb) {
    if (da == db) {
      ++acc.excluded_ties;
      return;
    }
    ++acc.total;
    bool a_closer = da < db;
    if (a_closer ? ta < tb : tb < ta) ++acc.correct;
  };
  AccuracyResult res;
  res.n_in = n_in;
  res.n_out = n_out;
  for (int a = 0; a < n_in; ++a)
    for (int b = a + 1; b < n_in; ++b) score(res.in_in, in_d[a], in_t[a], in_d[b], in_t[b]);
  for (int a = 0; a < n_out; ++a)
    for (int b = a + 1; b < n_out; ++b) score(res.out_out, out_d[a], out_t[a], out_d[b], out_t[b]);
  for (int a = 0; a < n_out; ++a)
    for (int b = 0; b < n_in; ++b) score(res.out_in, out_d[a], out_t[a], in_d[b], in_t[b]);
  return res;
}

void accumulate(AccuracyResult& into, const AccuracyResult& add) {
  auto acc = [](PairAccuracy& a, const PairAccuracy& b) {
    a.correct += b.correct;
    a.total += b.total;
    a.excluded_ties += b.excluded_ties;
  };
  acc(into.in_in, add.in_in);
  acc(into.out_in, add.out_in);
  acc(into.out_out, add.out_out);
  into.n_in += add.n_in;
  into.n_out += add.n_out;
}

ProbeResult negative_pair_probe(const DistanceFn& fn, const std::vector<sim::Trajectory>& trajectories, int n_pairs,
                                int td_max, std::uint64_t seed) {
  std::map<std::uint64_t, int> worlds;
  for (const auto& t : trajectories) {
    if (t.observations.empty()) throw std::invalid_argument("negative_pair_probe: empty trajectory");
    ++worlds[t.world_seed];
  }
  if (worlds.size() < 2) throw std::invalid_argument("negative_pair_probe: needs trajectories from two worlds");
  Rng rng = make_rng(seed, "eval/negative-probe");
  std::vector<const sim::Observation*> obs;
  std::vector<dm::GoalSpec> goals;
  goals.reserve(static_cast<std::size_t>(n_pairs));
  while (static_cast<int>(obs.size()) < n_pairs) {
    const auto& a = trajectories[uniform_index(rng, trajectories.size())];
    const auto& b = trajectories[uniform_index(rng, trajectories.size())];
    if (a.world_seed == b.world_seed) continue;
    obs.push_back(&a.observations[uniform_index(rng, a.observations.size())]);
    goals.push_back(dm::GoalSpec::from_view(b.observations.back()));
  }
  std::vector<const dm::GoalSpec*> gp;
  for (const auto& g : goals) gp.push_back(&g);
  ProbeResult r;
  r.n = n_pairs;
  if (n_pairs == 0) return r;
  int calibrated = 0;
  for (const auto& p : fn(obs, gp)) {
    r.mean_ratio += p.t_hat / td_max;
    r.mean_conf += p.c_hat;
    if (p.t_hat >= 0.9 * td_max && p.c_hat >= 0.8) ++calibrated;
  }
  r.mean_ratio /= n_pairs;
  r.mean_conf /= n_pairs;
  r.frac_calibrated = static_cast<double>(calibrated) / n_pairs;
  return r;
}

}  // namespace distnav::eval
