#pragma once

// Distance-function evaluation: Kendall's tau-b, ordinal consistency over
// horizons, the in/out-room distance-accuracy protocol and negative-pair
// calibration probes.

#include "distnav/distmodel.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace distnav::eval {

struct TauResult {
  double tau = 0.0;
  long n = 0;
  long concordant = 0;
  long discordant = 0;
  long pred_ties = 0;  // pairs tied in prediction (including joint ties)
  long gt_ties = 0;    // pairs tied in ground truth (including joint ties)
  bool degenerate = false;  // constant prediction: tau reported as 0
};

/// Tau-b over all pairs. Throws std::invalid_argument for mismatched
/// lengths, fewer than two samples or constant ground truth. A constant
/// prediction yields tau = 0 with `degenerate` set.
TauResult kendall_tau(std::span<const double> pred, std::span<const double> gt);

struct HorizonSpec {
  int max_start_distance = 20;
  int min_distance = 0;
};

/// Batched distance function: one prediction per (observation, goal) pair.
using DistanceFn = std::function<std::vector<dm::DistPrediction>(std::span<const sim::Observation* const>,
                                                                 std::span<const dm::GoalSpec* const>)>;

DistanceFn model_fn(const dm::DistModel& model);

enum class EvalGoal { View, Descriptor, Joint };

struct OrdinalResult {
  double mean_tau = 0.0;
  std::vector<TauResult> per_trajectory;
  std::vector<int> trajectory_index;  // index into the input set
  int degenerate = 0;
};

/// For each trajectory, frames whose remaining step count to the final frame
/// lies in [min, max] are scored against the final-frame goal. Tau is taken
/// between predictions and remaining steps, so a prediction that decreases
/// while the agent approaches counts as concordant (positive tau).
/// `descriptors` is required for descriptor and joint goals.
OrdinalResult ordinal_consistency(const DistanceFn& fn, const std::vector<sim::Trajectory>& trajectories,
                                  const HorizonSpec& spec, EvalGoal goal_kind = EvalGoal::View,
                                  const std::vector<dm::Descriptor>* descriptors = nullptr);

struct PairAccuracy {
  long correct = 0;
  long total = 0;
  long excluded_ties = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

struct AccuracyResult {
  PairAccuracy in_in, out_in, out_out;
  int n_in = 0, n_out = 0;
};

struct AccuracyGoal {
  dm::GoalSpec goal;
  sim::Observation goal_obs;  // rendered goal view; defines overlap
};

/// Samples n_in viewpoints with psr_max > 0 (K = 36) whose own heading has
/// psr = 0, and n_out with psr_max = 0; scores every cross-pair within each
/// category by whether the smaller prediction belongs to the geodesically
/// closer viewpoint. Prediction ties count as wrong; ground-truth ties are
/// excluded. Throws std::runtime_error if rejection sampling runs out.
AccuracyResult distance_accuracy(const DistanceFn& fn, const sim::GridWorld& world, const AccuracyGoal& goal,
                                 int n_in, int n_out, std::uint64_t seed, int max_attempts = 20000);

void accumulate(AccuracyResult& into, const AccuracyResult& add);

struct ProbeResult {
  double mean_ratio = 0.0;  // mean t_hat / td_max
  double mean_conf = 0.0;
  double frac_calibrated = 0.0;  // t_hat >= 0.9 td_max and c_hat >= 0.8
  int n = 0;
};

/// Observation from one world, final-frame goal view from a different world.
ProbeResult negative_pair_probe(const DistanceFn& fn, const std::vector<sim::Trajectory>& trajectories, int n_pairs,
                                int td_max, std::uint64_t seed);

}  // namespace distnav::eval
