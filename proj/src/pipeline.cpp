#include "distnav/pipeline.hpp"

#include "distnav/errors.hpp"
#include "distnav/geometry.hpp"

#include <algorithm>
#include <numbers>
#include <stdexcept>

namespace distnav::pipe {

std::uint64_t world_seed(std::uint64_t root, bool validation, int index) {
  return derive_seed(root, (validation ? "world/val/" : "world/train/") + std::to_string(index));
}

std::vector<std::shared_ptr<const sim::GridWorld>> make_worlds(const CorpusConfig& cfg, bool validation) {
  const int n = validation ? cfg.val_worlds : cfg.train_worlds;
  std::vector<std::shared_ptr<const sim::GridWorld>> out;
  for (int i = 0; i < n; ++i)
    out.push_back(std::make_shared<const sim::GridWorld>(sim::generate_world(world_seed(cfg.seed, validation, i), cfg.world)));
  return out;
}

std::vector<sim::Trajectory> sample_trajectories(const sim::GridWorld& world, int count, int min_length,
                                                 const sim::RenderParams& rp, std::uint64_t seed) {
  if (world.objects.empty()) throw std::invalid_argument("world has no objects");
  Rng rng = make_rng(seed, "trajectories/" + std::to_string(world.seed));
  const std::vector<sim::Cell> cells = world.traversable_cells();
  std::vector<sim::Trajectory> out;
  int attempts = 0;
  while (static_cast<int>(out.size()) < count) {
    if (++attempts > 100 * std::max(count, 1)) throw std::runtime_error("cannot sample long enough trajectories");
    int obj = static_cast<int>(uniform_index(rng, world.objects.size()));
    sim::Cell c = cells[uniform_index(rng, cells.size())];
    double heading = static_cast<double>(uniform_index(rng, sim::kTurnsPerRevolution)) * sim::kTurnIncrement;
    sim::FollowerResult fr = sim::shortest_path_trajectory(world, sim::cell_pose(c, heading), obj, rp);
    if (static_cast<int>(fr.trajectory.observations.size()) < min_length) continue;
    out.push_back(std::move(fr.trajectory));
  }
  return out;
}

Corpus generate_corpus(const CorpusConfig& cfg) {
  Corpus c;
  c.train_worlds = make_worlds(cfg, false);
  c.val_worlds = make_worlds(cfg, true);
  for (const auto& w : c.train_worlds) {
    auto t = sample_trajectories(*w, cfg.trajectories_per_world, cfg.min_length, cfg.render, cfg.seed);
    c.train.insert(c.train.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
  }
  for (const auto& w : c.val_worlds) {
    auto t = sample_trajectories(*w, cfg.val_trajectories_per_world, cfg.min_length, cfg.render, cfg.seed);
    c.val.insert(c.val.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
  }
  c.train_desc = descriptors_for(c.train, c.train_worlds);
  c.val_desc = descriptors_for(c.val, c.val_worlds);
  return c;
}

dm::Descriptor descriptor_for(const sim::GridWorld& world, int object_index) {
  const sim::WorldObject& o = world.objects.at(static_cast<std::size_t>(object_index));
  return {world.room_at(o.cell), o.object_class};
}

std::vector<dm::Descriptor> descriptors_for(const std::vector<sim::Trajectory>& trajs,
                                            const std::vector<std::shared_ptr<const sim::GridWorld>>& worlds) {
  std::map<std::uint64_t, const sim::GridWorld*> by_seed;
  for (const auto& w : worlds) by_seed[w->seed] = w.get();
  std::vector<dm::Descriptor> out;
  for (const auto& t : trajs) {
    auto it = by_seed.find(t.world_seed);
    if (it == by_seed.end()) throw DataError("trajectory references unknown world seed " + std::to_string(t.world_seed));
    if (t.goal_object < 0 || t.goal_object >= static_cast<int>(it->second->objects.size()))
      throw DataError("trajectory goal object out of range");
    out.push_back(descriptor_for(*it->second, t.goal_object));
  }
  return out;
}

std::vector<std::shared_ptr<const sim::GridWorld>> worlds_of(const std::vector<sim::Trajectory>& trajs,
                                                             const sim::WorldParams& params) {
  std::vector<std::shared_ptr<const sim::GridWorld>> out;
  std::vector<std::uint64_t> seen;
  for (const auto& t : trajs) {
    if (std::find(seen.begin(), seen.end(), t.world_seed) != seen.end()) continue;
    seen.push_back(t.world_seed);
    out.push_back(std::make_shared<const sim::GridWorld>(sim::generate_world(t.world_seed, params)));
  }
  return out;
}

sim::Pose goal_pose(const sim::GridWorld& world, int object_index) {
  const sim::WorldObject& obj = world.objects.at(static_cast<std::size_t>(object_index));
  return sim::cell_pose(sim::viewpoint_cell(world, object_index), obj.facing + std::numbers::pi);
}

std::vector<noise::NoisePair> make_noise_pairs(const dm::DistModel& model,
                                               const std::vector<std::shared_ptr<const sim::GridWorld>>& worlds,
                                               int count, int td_max, int near_steps, const sim::RenderParams& rp,
                                               std::uint64_t seed) {
  if (worlds.empty()) throw std::invalid_argument("make_noise_pairs: no worlds");
  Rng rng = make_rng(seed, "noise/pairs");
  std::vector<sim::Observation> cur, goal;
  std::vector<const sim::GridWorld*> world_of;
  cur.reserve(static_cast<std::size_t>(count));
  goal.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const sim::GridWorld& w = *worlds[uniform_index(rng, worlds.size())];
    int obj = static_cast<int>(uniform_index(rng, w.objects.size()));
    sim::Pose gp = goal_pose(w, obj);
    std::vector<int> dist = sim::bfs_distances(w, w.cell_of(gp.x, gp.y));
    std::vector<sim::Cell> cells = w.traversable_cells();
    if (i % 2 == 0) {
      std::erase_if(cells, [&](sim::Cell c) {
        int d = dist[w.index(c.x, c.y)];
        return d < 0 || d > near_steps;
      });
    }
    sim::Cell c = cells[uniform_index(rng, cells.size())];
    double heading = static_cast<double>(uniform_index(rng, sim::kTurnsPerRevolution)) * sim::kTurnIncrement;
    cur.push_back(sim::render_observation(w, sim::cell_pose(c, heading), rp));
    goal.push_back(sim::render_observation(w, gp, rp));
    world_of.push_back(&w);
  }
  std::vector<dm::GoalSpec> specs;
  specs.reserve(goal.size());
  for (const auto& g : goal) specs.push_back(dm::GoalSpec::from_view(g));
  std::vector<const sim::Observation*> op;
  std::vector<const dm::GoalSpec*> gp;
  for (std::size_t i = 0; i < cur.size(); ++i) {
    op.push_back(&cur[i]);
    gp.push_back(&specs[i]);
  }
  std::vector<dm::DistPrediction> pred = dm::predict(model, op, gp);
  std::vector<noise::NoisePair> out(cur.size());
  for (std::size_t i = 0; i < cur.size(); ++i) {
    out[i].feats = geo::overlap_features(cur[i], goal[i], *world_of[i]);
    out[i].teacher = {std::clamp(pred[i].t_hat, 0.0, static_cast<double>(td_max)), std::clamp(pred[i].c_hat, 0.0, 1.0)};
  }
  return out;
}

EpisodeSampler::EpisodeSampler(const std::vector<std::shared_ptr<const sim::GridWorld>>& worlds,
                               const EpisodeDefaults& defaults, const sim::RenderParams& rp)
    : defaults_(defaults) {
  if (defaults.min_start_steps < 0 || defaults.max_start_steps < defaults.min_start_steps)
    throw std::invalid_argument("bad start-distance range");
  for (const auto& w : worlds) {
    for (int k = 0; k < static_cast<int>(w->objects.size()); ++k) {
      Entry e;
      e.goal = std::make_shared<env::GoalContext>(w, k, rp);
      for (sim::Cell c : w->traversable_cells()) {
        int d = e.goal->steps_to_goal(c);
        if (d >= defaults.min_start_steps && d <= defaults.max_start_steps) e.starts.push_back(c);
      }
      if (!e.starts.empty()) goals_.push_back(std::move(e));
    }
  }
  if (goals_.empty()) throw std::invalid_argument("no goal has start cells in the requested range");
}

env::EpisodeSpec EpisodeSampler::sample(Rng& rng) const {
  const Entry& e = goals_[uniform_index(rng, goals_.size())];
  env::EpisodeSpec s;
  s.goal = e.goal;
  double heading = static_cast<double>(uniform_index(rng, sim::kTurnsPerRevolution)) * sim::kTurnIncrement;
  s.start = sim::cell_pose(e.starts[uniform_index(rng, e.starts.size())], heading);
  s.max_steps = defaults_.max_steps;
  s.d_s = defaults_.d_s;
  s.psr_s = defaults_.psr_s;
  s.gamma_pen = defaults_.gamma_pen;
  s.R_s = defaults_.R_s;
  s.auto_success = defaults_.auto_success;
  s.seed = rng();
  return s;
}

std::vector<env::EpisodeSpec> EpisodeSampler::fixed_set(int count, std::uint64_t seed) const {
  Rng rng = make_rng(seed, "episodes/fixed");
  std::vector<env::EpisodeSpec> out;
  for (int i = 0; i < count; ++i) out.push_back(sample(rng));
  return out;
}

}  // namespace distnav::pipe
