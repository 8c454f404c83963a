#pragma once

// Glue shared by the CLI and the acceptance suite: corpus generation split by
// world, descriptors, GeoNoise teacher pairs and episode sampling.

#include "distnav/distmodel.hpp"
#include "distnav/navenv.hpp"
#include "distnav/noisemodel.hpp"

#include <map>
#include <memory>

namespace distnav::pipe {

struct CorpusConfig {
  sim::WorldParams world{40, 40, 6, 2};
  sim::RenderParams render;
  int train_worlds = 20;
  int trajectories_per_world = 50;
  int val_worlds = 5;
  int val_trajectories_per_world = 50;
  int min_length = 8;
  std::uint64_t seed = 0;
};

struct Corpus {
  std::vector<std::shared_ptr<const sim::GridWorld>> train_worlds, val_worlds;
  std::vector<sim::Trajectory> train, val;
  std::vector<dm::Descriptor> train_desc, val_desc;
};

std::uint64_t world_seed(std::uint64_t root, bool validation, int index);
std::vector<std::shared_ptr<const sim::GridWorld>> make_worlds(const CorpusConfig& cfg, bool validation);

/// Follower trajectories from uniformly drawn (object, start cell, heading),
/// rejecting those shorter than min_length frames.
std::vector<sim::Trajectory> sample_trajectories(const sim::GridWorld& world, int count, int min_length,
                                                 const sim::RenderParams& rp, std::uint64_t seed);

Corpus generate_corpus(const CorpusConfig& cfg);

dm::Descriptor descriptor_for(const sim::GridWorld& world, int object_index);
/// Throws DataError when a trajectory's world is absent.
std::vector<dm::Descriptor> descriptors_for(const std::vector<sim::Trajectory>& trajs,
                                            const std::vector<std::shared_ptr<const sim::GridWorld>>& worlds);

/// Rebuilds the worlds referenced by a dataset (worlds are regenerated from
/// their seeds, so the world params must match those used for generation).
std::vector<std::shared_ptr<const sim::GridWorld>> worlds_of(const std::vector<sim::Trajectory>& trajs,
                                                             const sim::WorldParams& params);

/// Goal view: standing on the viewpoint cell facing the object.
sim::Pose goal_pose(const sim::GridWorld& world, int object_index);

/// Teacher pairs: random poses against object goal views, labelled with the
/// learned model's prediction (t_hat clamped to [0, td_max]). Half of the
/// poses lie within `near_steps` of the goal.
std::vector<noise::NoisePair> make_noise_pairs(const dm::DistModel& model,
                                               const std::vector<std::shared_ptr<const sim::GridWorld>>& worlds,
                                               int count, int td_max, int near_steps, const sim::RenderParams& rp,
                                               std::uint64_t seed);

struct EpisodeDefaults {
  int max_steps = 500;
  double d_s = 1.0;
  double psr_s = 0.1;
  double gamma_pen = 0.01;
  double R_s = 2.5;
  bool auto_success = false;
  int min_start_steps = 5;
  int max_start_steps = 24;
};

/// Shares one GoalContext per (world, object) across all sampled episodes.
class EpisodeSampler {
 public:
  EpisodeSampler(const std::vector<std::shared_ptr<const sim::GridWorld>>& worlds, const EpisodeDefaults& defaults,
                 const sim::RenderParams& rp = {});
  env::EpisodeSpec sample(Rng& rng) const;
  std::vector<env::EpisodeSpec> fixed_set(int count, std::uint64_t seed) const;
  std::size_t goal_count() const { return goals_.size(); }

 private:
  struct Entry {
    std::shared_ptr<env::GoalContext> goal;
    std::vector<sim::Cell> starts;
  };
  std::vector<Entry> goals_;
  EpisodeDefaults defaults_;
};

}  // namespace distnav::pipe
