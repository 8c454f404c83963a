#include "distnav/objectives.hpp"

#include "distnav/errors.hpp"
#include "distnav/evalsuite.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <stdexcept>

namespace distnav::obj {
namespace {

using ObsSpan = std::span<const sim::Observation* const>;
using GoalSpan = std::span<const dm::GoalSpec* const>;

std::size_t pick_traj(const std::vector<sim::Trajectory>& t, Rng& rng) { return uniform_index(rng, t.size()); }

dm::GoalSpec make_goal(const std::vector<sim::Trajectory>& trajs, std::size_t k, int j, const TrainConfig& cfg,
                       const std::vector<dm::Descriptor>* descriptors) {
  const sim::Trajectory& t = trajs[k];
  bool final_frame = j == static_cast<int>(t.observations.size()) - 1;
  if (cfg.goal_mode == GoalMode::Joint && descriptors && final_frame)
    return dm::GoalSpec::joint(t.observations[j], (*descriptors)[k]);
  return dm::GoalSpec::from_view(t.observations[j]);
}

Var mean_pair_distance(ad::Tape& tape, const dm::DistModel& m, const std::vector<Var>& p, ObsSpan a, ObsSpan b) {
  std::vector<const sim::Observation*> all(a.begin(), a.end());
  all.insert(all.end(), b.begin(), b.end());
  const int n = static_cast<int>(a.size());
  Var e = dm::embed_batch(tape, m, p, all);
  return ad::row_norm(ad::sub(ad::slice_rows(e, 0, n), ad::slice_rows(e, n, n)));
}

struct Graph {
  Var loss;
  Var multiplier;  // QRL only
  bool has_multiplier = false;
};

Graph build_graph(ad::Tape& tape, const dm::DistModel& m, const std::vector<Var>& p, Var rho, const Batch& batch,
                  const TrainConfig& cfg) {
  Graph g;
  switch (batch.objective) {
    case Objective::MixtureNll:
    case Objective::Mse: {
      if (batch.triplets.empty()) throw std::invalid_argument("empty batch");
      std::vector<const sim::Observation*> obs;
      std::vector<const dm::GoalSpec*> goals;
      ad::Vec td(static_cast<Eigen::Index>(batch.triplets.size()));
      for (std::size_t i = 0; i < batch.triplets.size(); ++i) {
        obs.push_back(batch.triplets[i].obs);
        goals.push_back(&batch.triplets[i].goal);
        td(static_cast<Eigen::Index>(i)) = batch.triplets[i].td;
      }
      dm::BatchOutput out = dm::forward_batch(tape, m, p, obs, goals);
      g.loss = batch.objective == Objective::Mse
                   ? mse_loss(out.t_hat, td)
                   : mixture_nll_loss(out.t_hat, out.c_hat, td, cfg.var_reliable, cfg.var_outlier);
      break;
    }
    case Objective::Vip: {
      if (batch.vip.empty()) throw std::invalid_argument("vip_loss: batch size 0");
      const int B = static_cast<int>(batch.vip.size());
      std::vector<const sim::Observation*> all;
      for (const auto& s : batch.vip) all.push_back(s.first);
      for (const auto& s : batch.vip) all.push_back(s.k);
      for (const auto& s : batch.vip) all.push_back(s.k_next);
      for (const auto& s : batch.vip) all.push_back(s.last);
      Var e = dm::embed_batch(tape, m, p, all);
      g.loss = vip_loss(ad::slice_rows(e, 0, B), ad::slice_rows(e, B, B), ad::slice_rows(e, 2 * B, B),
                        ad::slice_rows(e, 3 * B, B), cfg.vip_gamma);
      break;
    }
    case Objective::Qrl: {
      const QrlBatch& q = batch.qrl;
      if (q.rand_obs.empty() || q.trans_obs.empty()) throw std::invalid_argument("qrl_loss: empty batch");
      Var dr = mean_pair_distance(tape, m, p, q.rand_obs, q.rand_goal);
      Var dt = mean_pair_distance(tape, m, p, q.trans_obs, q.trans_next);
      QrlTerms terms = qrl_loss(dr, dt, q.cost, rho, cfg.qrl);
      g.loss = terms.model_loss;
      g.multiplier = terms.multiplier_loss;
      g.has_multiplier = true;
      break;
    }
  }
  return g;
}

void check_family(const TrainConfig& cfg) {
  bool embed = cfg.model.family == dm::Family::EmbeddingDistance;
  bool needs_embed = cfg.objective == Objective::Vip || cfg.objective == Objective::Qrl;
  if (needs_embed && !embed)
    throw std::invalid_argument(to_string(cfg.objective) + " objective requires the embedding-distance family");
  if (!needs_embed && embed && cfg.objective == Objective::MixtureNll)
    throw std::invalid_argument("mixture-nll needs a confidence head; embedding-distance has none");
}

}  // namespace

std::string to_string(Objective o) {
  switch (o) {
    case Objective::MixtureNll: return "mixture-nll";
    case Objective::Mse: return "mse";
    case Objective::Vip: return "vip";
    case Objective::Qrl: return "qrl";
  }
  return "unknown";
}

Objective objective_from_string(const std::string& s) {
  if (s == "mixture-nll") return Objective::MixtureNll;
  if (s == "mse") return Objective::Mse;
  if (s == "vip") return Objective::Vip;
  if (s == "qrl") return Objective::Qrl;
  throw std::invalid_argument("unknown objective '" + s + "'");
}

void TrainConfig::validate() const {
  if (td_max < 1) throw std::invalid_argument("td_max must be >= 1");
  if (!(p_neg >= 0 && p_neg <= 1)) throw std::invalid_argument("p_neg must lie in [0, 1]");
  if (!(var_reliable > 0 && var_reliable < var_outlier))
    throw std::invalid_argument("variances must satisfy 0 < var_reliable < var_outlier");
  if (steps < 0 || batch_size < 1 || !(lr > 0) || warmup < 0) throw std::invalid_argument("invalid optimizer settings");
  if (!(qrl.d_max > 0)) throw std::invalid_argument("qrl d_max must be positive");
  if (qrl.local_gap < 1) throw std::invalid_argument("qrl local_gap must be >= 1");
  model.validate();
}

std::vector<Triplet> sample_triplet_batch(const std::vector<sim::Trajectory>& trajectories, const TrainConfig& cfg,
                                          Rng& rng, const std::vector<dm::Descriptor>* descriptors) {
  if (trajectories.empty()) throw std::invalid_argument("sample_triplet_batch: no trajectories");
  for (const auto& t : trajectories)
    if (t.observations.empty()) throw std::invalid_argument("sample_triplet_batch: empty trajectory");
  std::vector<Triplet> batch;
  batch.reserve(static_cast<std::size_t>(cfg.batch_size));
  const bool negative = cfg.p_neg > 0 && uniform01(rng) < cfg.p_neg;
  if (negative && trajectories.size() < 2)
    throw std::invalid_argument("negative mining needs at least two trajectories");
  for (int b = 0; b < cfg.batch_size; ++b) {
    Triplet tr;
    if (negative) {
      std::size_t k = pick_traj(trajectories, rng);
      std::size_t l = uniform_index(rng, trajectories.size() - 1);
      if (l >= k) ++l;
      int i = static_cast<int>(uniform_index(rng, trajectories[k].observations.size()));
      int j = static_cast<int>(uniform_index(rng, trajectories[l].observations.size()));
      tr.obs = &trajectories[k].observations[i];
      tr.goal = make_goal(trajectories, l, j, cfg, descriptors);
      tr.td = cfg.td_max;
      tr.is_negative = true;
      tr.obs_traj = static_cast<int>(k);
      tr.obs_frame = i;
      tr.goal_traj = static_cast<int>(l);
      tr.goal_frame = j;
    } else {
      std::size_t k = pick_traj(trajectories, rng);
      int len = static_cast<int>(trajectories[k].observations.size());
      int max_off = std::min(cfg.td_max, len - 1);
      int off = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(max_off + 1)));
      int i = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(len - off)));
      int j = i + off;
      tr.obs = &trajectories[k].observations[i];
      tr.goal = make_goal(trajectories, k, j, cfg, descriptors);
      tr.td = off;
      tr.obs_traj = tr.goal_traj = static_cast<int>(k);
      tr.obs_frame = i;
      tr.goal_frame = j;
    }
    batch.push_back(std::move(tr));
  }
  return batch;
}

double mixture_nll(double t_hat, double c_hat, double td, double var_reliable, double var_outlier) {
  if (!(var_reliable > 0) || !(var_outlier > 0)) throw std::invalid_argument("mixture_nll: variances must be positive");
  ad::Tape tape;
  Var t = tape.constant(Mat::Constant(1, 1, t_hat));
  Var c = tape.constant(Mat::Constant(1, 1, c_hat));
  return ad::mixture_nll(t, c, ad::Vec::Constant(1, td), var_reliable, var_outlier).scalar();
}

double mse_loss(double t_hat, double td) { return (td - t_hat) * (td - t_hat); }

Var mixture_nll_loss(Var t_hat, Var c_hat, const ad::Vec& td, double var_reliable, double var_outlier) {
  if (!(var_reliable > 0)) throw std::invalid_argument("mixture_nll: var_reliable must be positive");
  return ad::mean(ad::mixture_nll(t_hat, c_hat, td, var_reliable, var_outlier));
}

Var mse_loss(Var t_hat, const ad::Vec& td) {
  Var target = t_hat.tape->constant(Mat(td));
  return ad::mean(ad::square(ad::sub(target, t_hat)));
}

Var vip_loss(Var first, Var k, Var k_next, Var last, double gamma) {
  if (first.rows() == 0) throw std::invalid_argument("vip_loss: batch size 0");
  Var anchor = ad::mean(ad::square(ad::row_norm(ad::sub(first, last))));
  Var x = ad::sub(ad::row_norm(ad::sub(k, last)), ad::scale(ad::row_norm(ad::sub(k_next, last)), gamma));
  const double shift = x.value().maxCoeff();
  Var lme = ad::add_scalar(ad::log(ad::mean(ad::exp(ad::add_scalar(x, -shift)))), shift);
  return ad::add(anchor, lme);
}

QrlTerms qrl_loss(Var d_random, Var d_trans, const ad::Vec& cost, Var rho, const QrlConfig& cfg) {
  if (!(cfg.d_max > 0)) throw std::invalid_argument("qrl_loss: d_max must be positive");
  if (cost.size() != d_trans.rows()) throw std::invalid_argument("qrl_loss: cost/transition mismatch");
  ad::Tape& tape = *d_random.tape;
  Var dr = ad::clamp(d_random, 0.0, cfg.d_max);
  Var dt = ad::clamp(d_trans, 0.0, cfg.d_max);
  Var spreading = ad::mean(ad::softplus(ad::scale(ad::add_scalar(dr, -cfg.d_max), -1.0)));
  Var hinge = ad::relu(ad::sub(dt, tape.constant(Mat(cost))));
  Var constraint = ad::mean(ad::square(hinge));
  const double eps2 = cfg.epsilon * cfg.epsilon;

  Var lam = ad::minimum(ad::softplus(rho), tape.constant(Mat::Constant(1, 1, cfg.lambda_clamp)));
  QrlTerms out;
  out.lambda = lam.scalar();
  out.spreading = spreading.scalar();
  out.constraint = constraint.scalar();
  Var lam_const = tape.constant(Mat::Constant(1, 1, out.lambda));
  out.model_loss = ad::add(spreading, ad::mul(lam_const, ad::add_scalar(constraint, -eps2)));
  Var slack = tape.constant(Mat::Constant(1, 1, out.constraint - eps2));
  out.multiplier_loss = ad::scale(ad::mul(lam, slack), -1.0);
  return out;
}

std::vector<VipSample> sample_vip_batch(const std::vector<sim::Trajectory>& trajectories, int batch, Rng& rng) {
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < trajectories.size(); ++i)
    if (trajectories[i].observations.size() >= 2) usable.push_back(i);
  if (usable.empty()) throw std::invalid_argument("vip sampling needs a trajectory with >= 2 frames");
  std::vector<VipSample> out;
  for (int b = 0; b < batch; ++b) {
    const auto& obs = trajectories[usable[uniform_index(rng, usable.size())]].observations;
    int len = static_cast<int>(obs.size());
    int t = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(len - 1)));
    int T = t + 1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(len - 1 - t)));
    int k = t + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(T - t)));
    out.push_back({&obs[t], &obs[k], &obs[k + 1], &obs[T]});
  }
  return out;
}

QrlBatch sample_qrl_batch(const std::vector<sim::Trajectory>& trajectories, int batch, int local_gap, Rng& rng) {
  std::vector<const sim::Observation*> frames;
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    for (const auto& o : trajectories[i].observations) frames.push_back(&o);
    if (trajectories[i].observations.size() >= 2) usable.push_back(i);
  }
  if (usable.empty()) throw std::invalid_argument("qrl sampling needs a trajectory with >= 2 frames");
  QrlBatch q;
  q.cost.resize(batch);
  for (int b = 0; b < batch; ++b) {
    q.rand_obs.push_back(frames[uniform_index(rng, frames.size())]);
    q.rand_goal.push_back(frames[uniform_index(rng, frames.size())]);
    const auto& obs = trajectories[usable[uniform_index(rng, usable.size())]].observations;
    int len = static_cast<int>(obs.size());
    int gap = 1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(std::min(local_gap, len - 1))));
    int i = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(len - gap)));
    q.trans_obs.push_back(&obs[i]);
    q.trans_next.push_back(&obs[i + gap]);
    q.cost(b) = gap;
  }
  return q;
}

Batch sample_batch(const std::vector<sim::Trajectory>& trajectories, const TrainConfig& cfg, Rng& rng,
                   const std::vector<dm::Descriptor>* descriptors) {
  Batch b;
  b.objective = cfg.objective;
  switch (cfg.objective) {
    case Objective::MixtureNll:
    case Objective::Mse: b.triplets = sample_triplet_batch(trajectories, cfg, rng, descriptors); break;
    case Objective::Vip: b.vip = sample_vip_batch(trajectories, cfg.batch_size, rng); break;
    case Objective::Qrl: b.qrl = sample_qrl_batch(trajectories, cfg.batch_size, cfg.qrl.local_gap, rng); break;
  }
  return b;
}

GradResult compute_gradients(const dm::DistModel& model, const Mat& rho, const Batch& batch, const TrainConfig& cfg) {
  ad::Tape tape;
  auto p = model.params.bind(tape);
  Var rv = tape.leaf(rho);
  Graph g = build_graph(tape, model, p, rv, batch, cfg);
  GradResult r;
  r.loss = g.loss.scalar();
  tape.backward(g.loss);
  r.grads = model.params.gradients(tape, p);
  if (g.has_multiplier) {
    r.multiplier_loss = g.multiplier.scalar();
    // The model loss treats lambda as a constant, so rho's gradient comes from
    // the multiplier loss alone.
    ad::Tape t2;
    auto p2 = model.params.bind(t2);
    Var rv2 = t2.leaf(rho);
    Graph g2 = build_graph(t2, model, p2, rv2, batch, cfg);
    t2.backward(g2.multiplier);
    const Mat& gr = t2.grad(rv2.id);
    r.rho_grad = gr.size() == 0 ? Mat::Zero(1, 1) : gr;
  } else {
    r.rho_grad = Mat::Zero(1, 1);
  }
  return r;
}

double evaluate_loss(const dm::DistModel& model, const Mat& rho, const Batch& batch, const TrainConfig& cfg) {
  ad::Tape tape;
  auto p = model.params.bind(tape);
  Var rv = tape.constant_ref(rho);
  return build_graph(tape, model, p, rv, batch, cfg).loss.scalar();
}

TrainResult train_distance_model(const std::vector<sim::Trajectory>& train, const TrainConfig& cfg,
                                 const std::vector<sim::Trajectory>& val,
                                 const std::vector<dm::Descriptor>* descriptors,
                                 const std::function<void(const LogRow&)>& on_log) {
  cfg.validate();
  check_family(cfg);
  if (train.empty()) throw std::invalid_argument("train_distance_model: no trajectories");
  TrainResult res{dm::init_model(cfg.model), {}, cfg.qrl.rho_init};
  if (cfg.steps == 0) return res;

  Rng rng = make_rng(cfg.seed, "sampler");
  nn::Adam adam(res.model.params);
  Mat rho = Mat::Constant(1, 1, cfg.qrl.rho_init);
  std::vector<sim::Trajectory> val_subset(val.begin(), val.begin() + std::min<std::size_t>(val.size(), static_cast<std::size_t>(std::max(0, cfg.eval_trajectories))));

  auto tau_at = [&](int horizon, int min_d) {
    eval::DistanceFn fn = eval::model_fn(res.model);
    try {
      return eval::ordinal_consistency(fn, val_subset, {horizon, min_d}).mean_tau;
    } catch (const std::invalid_argument&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };

  for (long step = 0; step < cfg.steps; ++step) {
    Batch batch = sample_batch(train, cfg, rng, descriptors);
    GradResult g;
    try {
      g = compute_gradients(res.model, rho, batch, cfg);
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(step), step);
    }
    if (!std::isfinite(g.loss) || !nn::all_finite(g.grads))
      throw DivergenceError("non-finite loss or gradient at step " + std::to_string(step), step);
    nn::clip_global_norm(g.grads, cfg.grad_clip);
    double lr = nn::warmup_cosine(step, cfg.steps, cfg.warmup, cfg.lr);
    adam.step(res.model.params, g.grads, lr);
    if (cfg.objective == Objective::Qrl) {
      // Gradient reversal: the multiplier loss is the negated Lagrangian, so
      // descending it ascends the Lagrangian in rho.
      rho(0, 0) -= cfg.qrl.rho_lr * g.rho_grad(0, 0);
    }

    LogRow row;
    row.step = step + 1;
    row.objective = to_string(cfg.objective);
    row.loss = g.loss;
    row.lr = lr;
    bool eval_now = !val_subset.empty() && cfg.eval_interval > 0 &&
                    ((step + 1) % cfg.eval_interval == 0 || step + 1 == cfg.steps);
    if (eval_now) {
      row.val_tau_20 = tau_at(20, 0);
      row.val_tau_50 = tau_at(50, 0);
      row.val_tau_100 = tau_at(100, 0);
    }
    res.log.push_back(row);
    if (on_log) on_log(row);
  }
  res.model.params.round_to_float();
  res.rho = rho(0, 0);
  return res;
}

void write_train_log(const std::vector<LogRow>& log, const TrainConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write training log: " + path.string());
  out << "# objective=" << to_string(cfg.objective) << " td_max=" << cfg.td_max << " p_neg=" << cfg.p_neg;
  if (cfg.objective == Objective::Qrl)
    out << " qrl_pairs=uniform-over-all-frames qrl_local_gap=" << cfg.qrl.local_gap;
  out << '\n';
  out << "step,objective,loss,lr,val_tau_20,val_tau_50,val_tau_100\n";
  out << std::setprecision(9);
  auto cell = [&](double v) {
    if (std::isfinite(v)) out << v;
  };
  for (const LogRow& r : log) {
    out << r.step << ',' << r.objective << ',' << r.loss << ',' << r.lr << ',';
    cell(r.val_tau_20);
    out << ',';
    cell(r.val_tau_50);
    out << ',';
    cell(r.val_tau_100);
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace distnav::obj
