#pragma once

// Triplet sampling with negative mining, the four training objectives and
// the distance-model training loop.

#include "distnav/distmodel.hpp"

#include <functional>
#include <string>

namespace distnav::obj {

using ad::Mat;
using ad::Var;

enum class Objective { MixtureNll, Mse, Vip, Qrl };
std::string to_string(Objective o);
Objective objective_from_string(const std::string& s);

enum class GoalMode { View, Joint };

struct QrlConfig {
  double d_max = 100.0;
  double epsilon = 0.25;
  double lambda_clamp = 100.0;
  int local_gap = 3;
  double rho_init = 0.0;
  double rho_lr = 1e-2;
};

struct TrainConfig {
  int td_max = 100;
  double p_neg = 0.05;
  double var_reliable = 4.0;
  double var_outlier = 40.0;
  long steps = 20000;
  int batch_size = 64;
  double lr = 1e-3;
  long warmup = 500;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  Objective objective = Objective::MixtureNll;
  GoalMode goal_mode = GoalMode::View;
  QrlConfig qrl;
  double vip_gamma = 0.98;
  long eval_interval = 1000;
  int eval_trajectories = 40;  // validation trajectories used for the logged tau
  dm::DistModelConfig model;

  void validate() const;
};

struct Triplet {
  const sim::Observation* obs = nullptr;
  dm::GoalSpec goal;
  int td = 0;
  bool is_negative = false;
  // Provenance: trajectory and frame indices of obs and goal.
  int obs_traj = 0, obs_frame = 0, goal_traj = 0, goal_frame = 0;
};

/// Positive batches pick a trajectory uniformly, then an offset uniformly in
/// {0..min(td_max, len-1)}, then a start index uniformly. With probability
/// p_neg (one flip per batch) every pair instead comes from two different
/// trajectories and is labelled td_max. `descriptors`, when given, is indexed
/// like `trajectories` and used for joint goals on final frames.
std::vector<Triplet> sample_triplet_batch(const std::vector<sim::Trajectory>& trajectories, const TrainConfig& cfg,
                                          Rng& rng, const std::vector<dm::Descriptor>* descriptors = nullptr);

/// Scalar forms.
double mixture_nll(double t_hat, double c_hat, double td, double var_reliable, double var_outlier);
double mse_loss(double t_hat, double td);

/// Graph forms (batch means).
Var mixture_nll_loss(Var t_hat, Var c_hat, const ad::Vec& td, double var_reliable, double var_outlier);
Var mse_loss(Var t_hat, const ad::Vec& td);

/// Rows of each argument are embeddings of (first, k, k+1, last) frames of
/// each sampled sub-trajectory.
Var vip_loss(Var first, Var k, Var k_next, Var last, double gamma);

struct QrlTerms {
  Var model_loss;       // spreading + lambda * (constraint - eps^2), lambda detached
  Var multiplier_loss;  // -lambda(rho) * (constraint - eps^2), model terms detached
  double lambda = 0.0;
  double spreading = 0.0;
  double constraint = 0.0;
};

/// d_random: distances of random pairs, d_trans: distances of transitions
/// with step costs `cost`; rho is a 1x1 variable.
QrlTerms qrl_loss(Var d_random, Var d_trans, const ad::Vec& cost, Var rho, const QrlConfig& cfg);

struct VipSample {
  const sim::Observation* first;
  const sim::Observation* k;
  const sim::Observation* k_next;
  const sim::Observation* last;
};
std::vector<VipSample> sample_vip_batch(const std::vector<sim::Trajectory>& trajectories, int batch, Rng& rng);

struct QrlBatch {
  std::vector<const sim::Observation*> rand_obs, rand_goal, trans_obs, trans_next;
  ad::Vec cost;
};
/// Random pairs are drawn uniformly over all frames; transitions have a gap of
/// 1..local_gap steps within one trajectory.
QrlBatch sample_qrl_batch(const std::vector<sim::Trajectory>& trajectories, int batch, int local_gap, Rng& rng);

/// A training batch for any objective.
struct Batch {
  Objective objective = Objective::MixtureNll;
  std::vector<Triplet> triplets;
  std::vector<VipSample> vip;
  QrlBatch qrl;
};

Batch sample_batch(const std::vector<sim::Trajectory>& trajectories, const TrainConfig& cfg, Rng& rng,
                   const std::vector<dm::Descriptor>* descriptors = nullptr);

struct GradResult {
  double loss = 0.0;
  double multiplier_loss = 0.0;
  std::vector<Mat> grads;  // mirrors model.params
  Mat rho_grad;            // QRL only: gradient of the multiplier loss
};

/// Exact batch-mean loss and its gradients. `rho` is only read for QRL.
GradResult compute_gradients(const dm::DistModel& model, const Mat& rho, const Batch& batch, const TrainConfig& cfg);
/// Loss only (no backward pass).
double evaluate_loss(const dm::DistModel& model, const Mat& rho, const Batch& batch, const TrainConfig& cfg);

struct LogRow {
  long step = 0;
  std::string objective;
  double loss = 0.0;
  double lr = 0.0;
  double val_tau_20 = std::numeric_limits<double>::quiet_NaN();
  double val_tau_50 = std::numeric_limits<double>::quiet_NaN();
  double val_tau_100 = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  dm::DistModel model;
  std::vector<LogRow> log;
  double rho = 0.0;
};

/// Adam with warmup + cosine decay for cfg.steps updates. Validation tau is
/// logged every eval_interval steps when `val` is non-empty. Throws
/// DivergenceError carrying the step index on a non-finite loss or gradient.
TrainResult train_distance_model(const std::vector<sim::Trajectory>& train, const TrainConfig& cfg,
                                 const std::vector<sim::Trajectory>& val = {},
                                 const std::vector<dm::Descriptor>* descriptors = nullptr,
                                 const std::function<void(const LogRow&)>& on_log = {});

/// CSV: step,objective,loss,lr,val_tau_20,val_tau_50,val_tau_100 (empty cells
/// where tau was not evaluated). The first line is a comment describing the
/// sampling distribution.
void write_train_log(const std::vector<LogRow>& log, const TrainConfig& cfg, const std::filesystem::path& path);

}  // namespace distnav::obj
