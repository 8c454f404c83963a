#pragma once

// Small models and corpora shared by the unit tests and the acceptance binary.

#include "distnav/objectives.hpp"
#include "distnav/pipeline.hpp"
#include "distnav/rltrain.hpp"
#include "support.hpp"

namespace fixture {

using namespace distnav;

inline dm::DistModelConfig small_model(dm::Family f = dm::Family::Decoder) {
  dm::DistModelConfig c;
  c.family = f;
  c.ray_count = 16;
  c.sectors = 4;
  c.token_dim = 8;
  c.layers = 1;
  c.heads = 2;
  c.ffn_dim = 8;
  c.head_hidden = 8;
  c.num_semantic = 33;
  c.embed_dim = 6;
  c.seed = 11;
  return c;
}

inline sim::RenderParams small_render() { return {16, std::numbers::pi / 2, 5.0}; }

/// A few follower trajectories from two worlds at 16 rays.
inline std::vector<sim::Trajectory> tiny_corpus(int per_world = 4) {
  std::vector<sim::Trajectory> out;
  for (std::uint64_t seed : {101u, 102u}) {
    sim::GridWorld w = sim::generate_world(seed, {});
    auto t = pipe::sample_trajectories(w, per_world, 6, small_render(), 5);
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

/// Relative finite-difference error (h = 1e-4) of the batch loss gradient
/// over every model parameter for the given objective.
inline double objective_fd_error(obj::Objective objective, std::string* worst = nullptr) {
  static const std::vector<sim::Trajectory> corpus = tiny_corpus();
  obj::TrainConfig cfg;
  cfg.objective = objective;
  cfg.batch_size = 4;
  cfg.p_neg = 0.0;
  bool embed = objective == obj::Objective::Vip || objective == obj::Objective::Qrl;
  cfg.model = small_model(embed ? dm::Family::EmbeddingDistance : dm::Family::Decoder);
  dm::DistModel m = dm::init_model(cfg.model);
  Rng rng = make_rng(17, "fd-batch");
  obj::Batch batch = obj::sample_batch(corpus, cfg, rng);
  ad::Mat rho = ad::Mat::Constant(1, 1, 0.3);
  obj::GradResult g = obj::compute_gradients(m, rho, batch, cfg);
  auto rep = oracle::fd_check(m.params, g.grads, [&] { return obj::evaluate_loss(m, rho, batch, cfg); });
  if (worst) *worst = rep.worst;
  return rep.max_rel;
}

inline rl::PolicyConfig small_policy() {
  rl::PolicyConfig c;
  c.hidden = 6;
  c.input_proj = 5;
  c.head_hidden = 4;
  c.seed = 3;
  return c;
}

/// Synthetic rollout of T steps over E environments with one episode end.
inline rl::Rollout synthetic_rollout(const rl::RecurrentPolicy& p, int T, int E, std::uint64_t seed) {
  Rng rng = make_rng(seed, "rollout");
  rl::Rollout r;
  r.T = T;
  r.E = E;
  r.start = {ad::Mat::Zero(E, p.cfg.hidden), ad::Mat::Zero(E, p.cfg.hidden)};
  for (int e = 0; e < E; ++e)
    for (int k = 0; k < p.cfg.hidden; ++k) {
      r.start.h(e, k) = 0.3 * standard_normal(rng);
      r.start.c(e, k) = 0.3 * standard_normal(rng);
    }
  r.old_logp.resize(T, E);
  r.values.resize(T, E);
  r.rewards.resize(T, E);
  r.dones = ad::Mat::Zero(T, E);
  r.dones(T / 2, 0) = 1.0;
  for (int t = 0; t < T; ++t) {
    ad::Mat x(E, env::kPolicyObsDim);
    for (long k = 0; k < x.size(); ++k) x.data()[k] = standard_normal(rng);
    r.inputs.push_back(x);
    r.actions.emplace_back();
    for (int e = 0; e < E; ++e) {
      r.actions[t].push_back(static_cast<int>(uniform_index(rng, 4)));
      // Old log-probabilities near the current ones so ratios straddle the clip range.
      r.old_logp(t, e) = std::log(0.25) + 0.3 * standard_normal(rng);
      r.values(t, e) = standard_normal(rng);
      r.rewards(t, e) = standard_normal(rng);
    }
  }
  rl::compute_gae(r, ad::Mat::Zero(E, 1), 0.99, 0.95);
  return r;
}

/// Finite-difference error of the PPO objective on a 3-step rollout.
inline double ppo_fd_error(std::string* worst = nullptr) {
  rl::RecurrentPolicy p = rl::init_policy(small_policy());
  // Larger output weights so the policy is far from uniform.
  p.params[p.pw2] *= 100.0;
  rl::Rollout r = synthetic_rollout(p, 3, 2, 5);
  rl::PpoConfig cfg;
  std::vector<int> cols{0, 1};
  auto loss_value = [&] {
    ad::Tape tape;
    auto L = p.params.bind(tape);
    return rl::ppo_loss_graph(tape, p, L, r, cols, cfg).loss.scalar();
  };
  ad::Tape tape;
  auto L = p.params.bind(tape);
  rl::PpoTerms terms = rl::ppo_loss_graph(tape, p, L, r, cols, cfg);
  tape.backward(terms.loss);
  auto grads = p.params.gradients(tape, L);
  auto rep = oracle::fd_check(p.params, grads, loss_value);
  if (worst) *worst = rep.worst;
  return rep.max_rel;
}

}  // namespace fixture
