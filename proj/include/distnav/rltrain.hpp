#pragma once

// Recurrent actor-critic policy, PPO training over vectorized environments
// and SR/SPL evaluation including the deployment swap harness.

#include "distnav/navenv.hpp"
#include "distnav/nn.hpp"

#include <functional>
#include <string>

namespace distnav::rl {

using ad::Mat;
using ad::Var;

struct PolicyConfig {
  int hidden = 128;
  int input_proj = 64;
  int head_hidden = 64;
  bool use_confidence = true;
  std::uint64_t seed = 0;
  std::string to_json() const;
  static PolicyConfig from_json(const std::string& text);
  friend bool operator==(const PolicyConfig&, const PolicyConfig&) = default;
};

struct RecurrentPolicy {
  PolicyConfig cfg;
  nn::ParamSet params;
  int w_in = -1, b_in = -1, w_lstm = -1, b_lstm = -1;
  int pw1 = -1, pb1 = -1, pw2 = -1, pb2 = -1, vw1 = -1, vb1 = -1, vw2 = -1, vb2 = -1;
};

RecurrentPolicy init_policy(const PolicyConfig& cfg);

struct LstmState {
  Mat h, c;  // B x hidden
  static LstmState zeros(int batch, int hidden);
};

/// Normalized network input for a batch of observations (B x kPolicyObsDim).
Mat policy_input(const PolicyConfig& cfg, const std::vector<env::PolicyObs>& obs);

struct StepGraph {
  Var logits;  // B x 4
  Var value;   // B x 1
  Var h, c;
};

StepGraph policy_graph(const RecurrentPolicy& p, const std::vector<Var>& leaves, Var x, Var h, Var c);

struct PolicyOutput {
  Mat probs;  // B x 4
  Mat value;  // B x 1
  LstmState next;
};

/// One recurrent step for a batch. Throws DivergenceError on non-finite output.
PolicyOutput policy_step(const RecurrentPolicy& p, const Mat& input, const LstmState& state);
PolicyOutput policy_step(const RecurrentPolicy& p, const env::PolicyObs& obs, const LstmState& state);

struct PpoConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  int epochs = 4;
  int minibatches = 4;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double lr = 5e-4;
  double max_grad_norm = 0.5;
  int rollout = 128;
  int envs = 16;
  long total_steps = 2'000'000;
  std::uint64_t seed = 0;
  long eval_interval = 0;  // updates between evaluations (0 = never)
  void validate() const;
};

/// One rollout buffer: T steps of E environments.
struct Rollout {
  int T = 0, E = 0;
  std::vector<Mat> inputs;               // T x (E x obs_dim)
  std::vector<std::vector<int>> actions;  // T x E
  Mat old_logp, values, rewards, dones;  // T x E; dones[t] marks an episode end after step t
  LstmState start;                       // hidden state before step 0
  Mat advantages, returns;               // T x E
};

/// GAE with dones treated as terminal; fills advantages and returns.
void compute_gae(Rollout& r, const Mat& last_value, double gamma, double lambda);

struct PpoTerms {
  Var loss;
  double policy_loss = 0.0, value_loss = 0.0, entropy = 0.0;
};

/// Clipped surrogate + value_coef * value loss - entropy_coef * entropy over
/// the given environment columns, unrolled from the stored start state.
/// Advantages are used as stored (normalize beforehand).
PpoTerms ppo_loss_graph(ad::Tape& tape, const RecurrentPolicy& p, const std::vector<Var>& leaves, const Rollout& r,
                        const std::vector<int>& env_cols, const PpoConfig& cfg);

struct PpoLogRow {
  long step = 0;
  double mean_reward = 0.0;
  double sr_eval = std::numeric_limits<double>::quiet_NaN();
  double spl_eval = std::numeric_limits<double>::quiet_NaN();
  double entropy = 0.0;
  double value_loss = 0.0;
  double train_sr = 0.0;  // over episodes finished since the previous row
};

using SpecGenerator = std::function<env::EpisodeSpec(Rng&)>;

struct EpisodeRecord {
  bool success = false;
  double spl = 0.0;
  double shortest = 0.0;
  double path = 0.0;
  int steps = 0;
  std::vector<int> actions;
};

struct EvalReport {
  double sr = 0.0;
  double spl = 0.0;
  int episodes = 0;
  std::vector<EpisodeRecord> records;
  std::string trained_on, deployed_on;
};

struct PpoResult {
  RecurrentPolicy policy;
  std::vector<PpoLogRow> log;
};

/// Throws DivergenceError with the environment step on a non-finite loss.
PpoResult ppo_train(const SpecGenerator& specs, const env::DistanceSource& source, const PolicyConfig& pcfg,
                    const PpoConfig& cfg, const std::vector<env::EpisodeSpec>& eval_specs = {},
                    const std::function<void(const PpoLogRow&)>& on_log = {});

/// Runs every episode to completion; argmax actions when deterministic.
EvalReport evaluate_policy(const RecurrentPolicy& p, const env::DistanceSource& source,
                           const std::vector<env::EpisodeSpec>& specs, bool deterministic = true,
                           std::uint64_t seed = 0);

EvalReport swap_evaluate(const RecurrentPolicy& p, const std::string& trained_on, const env::DistanceSource& deploy,
                         const std::vector<env::EpisodeSpec>& specs, bool deterministic = true,
                         std::uint64_t seed = 0);

/// Longest run of consecutive identical turn actions.
int longest_turn_run(const std::vector<int>& actions);
/// Fraction of episodes containing a run of at least `min_run` same-direction turns.
double scan_fraction(const EvalReport& r, int min_run = sim::kTurnsPerRevolution);

void save_policy(const RecurrentPolicy& p, const std::filesystem::path& path);
RecurrentPolicy load_policy(const std::filesystem::path& path);

void write_ppo_log(const std::vector<PpoLogRow>& log, const std::string& source, const std::filesystem::path& path);

}  // namespace distnav::rl
