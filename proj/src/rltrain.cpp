#include "distnav/rltrain.hpp"

#include "distnav/errors.hpp"
#include "distnav/tensor_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace distnav::rl {

namespace {

constexpr std::array<char, 4> kMagic{'P', 'O', 'L', '1'};
constexpr double kInputScale = 0.2;  // meters -> roughly unit range

Mat gather(const Mat& m, const std::vector<int>& rows) {
  Mat out(static_cast<int>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<int>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace

std::string PolicyConfig::to_json() const {
  nlohmann::ordered_json j;
  j["hidden"] = hidden;
  j["input_proj"] = input_proj;
  j["head_hidden"] = head_hidden;
  j["use_confidence"] = use_confidence;
  j["seed"] = seed;
  return j.dump();
}

PolicyConfig PolicyConfig::from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  PolicyConfig c;
  c.hidden = j.at("hidden").get<int>();
  c.input_proj = j.at("input_proj").get<int>();
  c.head_hidden = j.at("head_hidden").get<int>();
  c.use_confidence = j.at("use_confidence").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

RecurrentPolicy init_policy(const PolicyConfig& cfg) {
  if (cfg.hidden < 1 || cfg.input_proj < 1 || cfg.head_hidden < 1)
    throw std::invalid_argument("policy sizes must be positive");
  RecurrentPolicy p;
  p.cfg = cfg;
  Rng rng = make_rng(cfg.seed, "policy/init");
  const int D = env::kPolicyObsDim, P = cfg.input_proj, H = cfg.hidden, F = cfg.head_hidden;
  auto& ps = p.params;
  p.w_in = ps.add_uniform("in.w", D, P, D, rng);
  p.b_in = ps.add_constant("in.b", 1, P, 0.0);
  p.w_lstm = ps.add_uniform("lstm.w", P + H, 4 * H, P + H, rng);
  Mat b = Mat::Zero(1, 4 * H);
  b.block(0, H, 1, H).setOnes();  // forget gate
  p.b_lstm = ps.add("lstm.b", b);
  p.pw1 = ps.add_uniform("pi.w1", H, F, H, rng);
  p.pb1 = ps.add_constant("pi.b1", 1, F, 0.0);
  p.pw2 = ps.add_uniform("pi.w2", F, sim::kNumActions, F, rng);
  p.pb2 = ps.add_constant("pi.b2", 1, sim::kNumActions, 0.0);
  p.vw1 = ps.add_uniform("v.w1", H, F, H, rng);
  p.vb1 = ps.add_constant("v.b1", 1, F, 0.0);
  p.vw2 = ps.add_uniform("v.w2", F, 1, F, rng);
  p.vb2 = ps.add_constant("v.b2", 1, 1, 0.0);
  ps[p.pw2] *= 0.01;
  ps.round_to_float();
  return p;
}

LstmState LstmState::zeros(int batch, int hidden) { return {Mat::Zero(batch, hidden), Mat::Zero(batch, hidden)}; }

Mat policy_input(const PolicyConfig& cfg, const std::vector<env::PolicyObs>& obs) {
  Mat x(static_cast<int>(obs.size()), env::kPolicyObsDim);
  for (std::size_t r = 0; r < obs.size(); ++r) {
    env::PolicyObs o = obs[r];
    if (!cfg.use_confidence) o.c_hat = 0.0;
    auto a = o.to_array();
    for (int k = 0; k < env::kPolicyObsDim; ++k) {
      bool metric = k == 0 || (k >= 2 && k < 2 + env::kObstacleSectors + 2);
      x(static_cast<int>(r), k) = metric ? a[k] * kInputScale : a[k];
    }
  }
  return x;
}

StepGraph policy_graph(const RecurrentPolicy& p, const std::vector<Var>& L, Var x, Var h, Var c) {
  const int H = p.cfg.hidden;
  Var xp = ad::tanh(ad::linear(x, L[p.w_in], L[p.b_in]));
  Var z = ad::linear(ad::concat_cols({xp, h}), L[p.w_lstm], L[p.b_lstm]);
  Var i = ad::sigmoid(ad::slice_cols(z, 0, H));
  Var f = ad::sigmoid(ad::slice_cols(z, H, H));
  Var g = ad::tanh(ad::slice_cols(z, 2 * H, H));
  Var o = ad::sigmoid(ad::slice_cols(z, 3 * H, H));
  StepGraph s;
  s.c = ad::add(ad::mul(f, c), ad::mul(i, g));
  s.h = ad::mul(o, ad::tanh(s.c));
  s.logits = nn::mlp2(L, p.pw1, p.pb1, p.pw2, p.pb2, s.h);
  s.value = nn::mlp2(L, p.vw1, p.vb1, p.vw2, p.vb2, s.h);
  return s;
}

PolicyOutput policy_step(const RecurrentPolicy& p, const Mat& input, const LstmState& state) {
  ad::Tape tape;
  auto L = p.params.bind(tape);
  StepGraph s = policy_graph(p, L, tape.constant_ref(input), tape.constant_ref(state.h), tape.constant_ref(state.c));
  PolicyOutput out;
  Mat lp = ad::log_softmax_rows(s.logits).value();
  out.probs = lp.array().exp().matrix();
  out.value = s.value.value();
  out.next = {s.h.value(), s.c.value()};
  if (!out.probs.allFinite() || !out.value.allFinite() || !out.next.h.allFinite())
    throw DivergenceError("non-finite policy output");
  return out;
}

PolicyOutput policy_step(const RecurrentPolicy& p, const env::PolicyObs& obs, const LstmState& state) {
  return policy_step(p, policy_input(p.cfg, {obs}), state);
}

void PpoConfig::validate() const {
  if (!(gamma > 0 && gamma <= 1) || !(gae_lambda >= 0 && gae_lambda <= 1)) throw std::invalid_argument("bad discount");
  if (!(clip > 0) || epochs < 1 || minibatches < 1 || rollout < 1 || envs < 1 || total_steps < 1)
    throw std::invalid_argument("bad PPO schedule");
  if (envs % minibatches != 0) throw std::invalid_argument("envs must be divisible by minibatches");
  if (!(lr > 0) || !(max_grad_norm > 0)) throw std::invalid_argument("bad PPO optimizer settings");
}

void compute_gae(Rollout& r, const Mat& last_value, double gamma, double lambda) {
  r.advantages = Mat::Zero(r.T, r.E);
  r.returns = Mat::Zero(r.T, r.E);
  for (int e = 0; e < r.E; ++e) {
    double gae = 0.0;
    for (int t = r.T - 1; t >= 0; --t) {
      double nonterminal = 1.0 - r.dones(t, e);
      double next_v = t + 1 < r.T ? r.values(t + 1, e) : last_value(e, 0);
      double delta = r.rewards(t, e) + gamma * next_v * nonterminal - r.values(t, e);
      gae = delta + gamma * lambda * nonterminal * gae;
      r.advantages(t, e) = gae;
    }
  }
  r.returns = r.advantages + r.values;
}

PpoTerms ppo_loss_graph(ad::Tape& tape, const RecurrentPolicy& p, const std::vector<Var>& L, const Rollout& r,
                        const std::vector<int>& cols, const PpoConfig& cfg) {
  const int m = static_cast<int>(cols.size());
  if (m == 0) throw std::invalid_argument("ppo_loss_graph: no environments selected");
  Var h = tape.constant(gather(r.start.h, cols));
  Var c = tape.constant(gather(r.start.c, cols));
  std::vector<Var> logits, values;
  std::vector<int> actions;
  Mat old_logp(r.T * m, 1), adv(r.T * m, 1), ret(r.T * m, 1);
  for (int t = 0; t < r.T; ++t) {
    StepGraph s = policy_graph(p, L, tape.constant(gather(r.inputs[t], cols)), h, c);
    logits.push_back(s.logits);
    values.push_back(s.value);
    ad::Vec keep(m);
    bool any_done = false;
    for (int k = 0; k < m; ++k) {
      const int e = cols[k], row = t * m + k;
      actions.push_back(r.actions[t][e]);
      old_logp(row, 0) = r.old_logp(t, e);
      adv(row, 0) = r.advantages(t, e);
      ret(row, 0) = r.returns(t, e);
      keep(k) = 1.0 - r.dones(t, e);
      any_done = any_done || r.dones(t, e) != 0.0;
    }
    h = any_done ? ad::scale_rows(s.h, keep) : s.h;
    c = any_done ? ad::scale_rows(s.c, keep) : s.c;
  }
  const double n = static_cast<double>(r.T * m);
  Var lp_all = ad::log_softmax_rows(ad::concat_rows(logits));
  Var lp = ad::pick_cols(lp_all, actions);
  Var ratio = ad::exp(ad::sub(lp, tape.constant(old_logp)));
  Var A = tape.constant(adv);
  Var surr = ad::minimum(ad::mul(ratio, A), ad::mul(ad::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), A));
  Var policy_loss = ad::scale(ad::mean(surr), -1.0);
  Var value_loss = ad::mean(ad::square(ad::sub(ad::concat_rows(values), tape.constant(ret))));
  Var entropy = ad::scale(ad::sum(ad::mul(ad::exp(lp_all), lp_all)), -1.0 / n);
  PpoTerms out;
  out.loss = ad::sub(ad::add(policy_loss, ad::scale(value_loss, cfg.value_coef)), ad::scale(entropy, cfg.entropy_coef));
  out.policy_loss = policy_loss.scalar();
  out.value_loss = value_loss.scalar();
  out.entropy = entropy.scalar();
  return out;
}

namespace {

int sample_action(const Mat& probs, int row, Rng& rng) {
  double u = uniform01(rng), acc = 0.0;
  for (int a = 0; a < probs.cols(); ++a) {
    acc += probs(row, a);
    if (u < acc) return a;
  }
  return static_cast<int>(probs.cols()) - 1;
}

int argmax_action(const Mat& probs, int row) {
  int best = 0;
  for (int a = 1; a < probs.cols(); ++a)
    if (probs(row, a) > probs(row, best)) best = a;
  return best;
}

double spl_of(bool success, double shortest, double path) {
  if (!success) return 0.0;
  double denom = std::max(path, shortest);
  return denom > 0 ? shortest / denom : 1.0;
}

EvalReport run_episodes(const RecurrentPolicy& p, const env::DistanceSource& source,
                        const std::vector<env::EpisodeSpec>& specs, bool deterministic, std::uint64_t seed) {
  constexpr std::size_t kParallel = 32;
  Rng rng = make_rng(seed, "policy/eval");
  EvalReport rep;
  rep.records.resize(specs.size());
  for (std::size_t base = 0; base < specs.size(); base += kParallel) {
    const std::size_t n = std::min(kParallel, specs.size() - base);
    std::vector<env::NavEnv> envs(n);
    std::vector<env::PolicyObs> obs(n);
    for (std::size_t i = 0; i < n; ++i) obs[i] = envs[i].reset(specs[base + i], source);
    LstmState st = LstmState::zeros(static_cast<int>(n), p.cfg.hidden);
    std::vector<int> active(n);
    std::iota(active.begin(), active.end(), 0);
    while (!active.empty()) {
      std::vector<env::PolicyObs> batch;
      for (int i : active) batch.push_back(obs[i]);
      LstmState sub{gather(st.h, active), gather(st.c, active)};
      PolicyOutput out = policy_step(p, policy_input(p.cfg, batch), sub);
      std::vector<int> still;
      for (std::size_t k = 0; k < active.size(); ++k) {
        const int i = active[k];
        int a = deterministic ? argmax_action(out.probs, static_cast<int>(k))
                              : sample_action(out.probs, static_cast<int>(k), rng);
        st.h.row(i) = out.next.h.row(static_cast<int>(k));
        st.c.row(i) = out.next.c.row(static_cast<int>(k));
        env::Transition tr = envs[i].step(static_cast<sim::Action>(a));
        obs[i] = tr.obs;
        rep.records[base + i].actions.push_back(a);
        if (!tr.done) still.push_back(i);
      }
      active = std::move(still);
    }
    for (std::size_t i = 0; i < n; ++i) {
      EpisodeRecord& rec = rep.records[base + i];
      rec.success = envs[i].success();
      rec.shortest = envs[i].start_distance();
      rec.path = envs[i].path_length();
      rec.steps = envs[i].steps();
      rec.spl = spl_of(rec.success, rec.shortest, rec.path);
    }
  }
  rep.episodes = static_cast<int>(specs.size());
  for (const auto& r : rep.records) {
    rep.sr += r.success ? 1.0 : 0.0;
    rep.spl += r.spl;
  }
  if (rep.episodes > 0) {
    rep.sr /= rep.episodes;
    rep.spl /= rep.episodes;
  }
  return rep;
}

}  // namespace

EvalReport evaluate_policy(const RecurrentPolicy& p, const env::DistanceSource& source,
                           const std::vector<env::EpisodeSpec>& specs, bool deterministic, std::uint64_t seed) {
  EvalReport r = run_episodes(p, source, specs, deterministic, seed);
  r.trained_on = r.deployed_on = env::to_string(source.kind);
  return r;
}

EvalReport swap_evaluate(const RecurrentPolicy& p, const std::string& trained_on, const env::DistanceSource& deploy,
                         const std::vector<env::EpisodeSpec>& specs, bool deterministic, std::uint64_t seed) {
  EvalReport r = run_episodes(p, deploy, specs, deterministic, seed);
  r.trained_on = trained_on;
  r.deployed_on = env::to_string(deploy.kind);
  return r;
}

PpoResult ppo_train(const SpecGenerator& specs, const env::DistanceSource& source, const PolicyConfig& pcfg,
                    const PpoConfig& cfg, const std::vector<env::EpisodeSpec>& eval_specs,
                    const std::function<void(const PpoLogRow&)>& on_log) {
  cfg.validate();
  source.validate();
  PpoResult res;
  res.policy = init_policy(pcfg);
  RecurrentPolicy& pol = res.policy;
  nn::Adam adam(pol.params);
  Rng spec_rng = make_rng(cfg.seed, "ppo/specs");
  Rng act_rng = make_rng(cfg.seed, "ppo/actions");
  Rng mb_rng = make_rng(cfg.seed, "ppo/minibatches");

  const int E = cfg.envs, T = cfg.rollout, H = pcfg.hidden;
  std::vector<env::NavEnv> envs(static_cast<std::size_t>(E));
  std::vector<env::PolicyObs> obs(static_cast<std::size_t>(E));
  std::vector<double> ep_return(static_cast<std::size_t>(E), 0.0);
  for (int e = 0; e < E; ++e) obs[e] = envs[e].reset(specs(spec_rng), source);
  LstmState state = LstmState::zeros(E, H);

  const long per_update = static_cast<long>(T) * E;
  const long updates = (cfg.total_steps + per_update - 1) / per_update;
  long step = 0;
  double ret_sum = 0.0;
  int finished = 0, succeeded = 0;

  for (long u = 0; u < updates; ++u) {
    Rollout r;
    r.T = T;
    r.E = E;
    r.start = state;
    r.old_logp.resize(T, E);
    r.values.resize(T, E);
    r.rewards.resize(T, E);
    r.dones.resize(T, E);
    for (int t = 0; t < T; ++t) {
      Mat x = policy_input(pcfg, obs);
      PolicyOutput out;
      try {
        out = policy_step(pol, x, state);
      } catch (const DivergenceError& e) {
        throw DivergenceError(e.what(), step);
      }
      r.inputs.push_back(x);
      r.actions.emplace_back(static_cast<std::size_t>(E));
      for (int e = 0; e < E; ++e) {
        int a = sample_action(out.probs, e, act_rng);
        r.actions[t][e] = a;
        r.old_logp(t, e) = std::log(std::max(out.probs(e, a), 1e-300));
        r.values(t, e) = out.value(e, 0);
        env::Transition tr = envs[e].step(static_cast<sim::Action>(a));
        r.rewards(t, e) = tr.reward;
        r.dones(t, e) = tr.done ? 1.0 : 0.0;
        ep_return[e] += tr.reward;
        obs[e] = tr.obs;
        if (tr.done) {
          ret_sum += ep_return[e];
          ep_return[e] = 0.0;
          ++finished;
          succeeded += tr.info.success ? 1 : 0;
          obs[e] = envs[e].reset(specs(spec_rng), source);
          out.next.h.row(e).setZero();
          out.next.c.row(e).setZero();
        }
      }
      state = out.next;
      step += E;
    }
    Mat last_value = policy_step(pol, policy_input(pcfg, obs), state).value;
    compute_gae(r, last_value, cfg.gamma, cfg.gae_lambda);
    {
      double mu = r.advantages.mean();
      double sd = std::sqrt((r.advantages.array() - mu).square().mean());
      r.advantages = ((r.advantages.array() - mu) / (sd + 1e-8)).matrix();
    }

    double ent_acc = 0.0, vl_acc = 0.0;
    int n_mb = 0;
    std::vector<int> order(static_cast<std::size_t>(E));
    std::iota(order.begin(), order.end(), 0);
    const int mb = E / cfg.minibatches;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), mb_rng);
      for (int k = 0; k < cfg.minibatches; ++k) {
        std::vector<int> cols(order.begin() + k * mb, order.begin() + (k + 1) * mb);
        ad::Tape tape;
        auto L = pol.params.bind(tape);
        PpoTerms terms = ppo_loss_graph(tape, pol, L, r, cols, cfg);
        if (!std::isfinite(terms.loss.scalar())) throw DivergenceError("non-finite PPO loss", step);
        tape.backward(terms.loss);
        auto grads = pol.params.gradients(tape, L);
        if (!nn::all_finite(grads)) throw DivergenceError("non-finite policy gradient", step);
        nn::clip_global_norm(grads, cfg.max_grad_norm);
        adam.step(pol.params, grads, cfg.lr);
        ent_acc += terms.entropy;
        vl_acc += terms.value_loss;
        ++n_mb;
      }
    }
    if (!pol.params.all_finite()) throw DivergenceError("non-finite policy parameters", step);

    PpoLogRow row;
    row.step = step;
    row.mean_reward = finished > 0 ? ret_sum / finished : std::numeric_limits<double>::quiet_NaN();
    row.train_sr = finished > 0 ? static_cast<double>(succeeded) / finished : 0.0;
    row.entropy = ent_acc / n_mb;
    row.value_loss = vl_acc / n_mb;
    bool eval_now = !eval_specs.empty() && cfg.eval_interval > 0 &&
                    ((u + 1) % cfg.eval_interval == 0 || u + 1 == updates);
    if (eval_now) {
      EvalReport rep = evaluate_policy(pol, source, eval_specs, true, cfg.seed);
      row.sr_eval = rep.sr;
      row.spl_eval = rep.spl;
    }
    res.log.push_back(row);
    if (on_log) on_log(row);
    ret_sum = 0.0;
    finished = succeeded = 0;
  }
  pol.params.round_to_float();
  return res;
}

int longest_turn_run(const std::vector<int>& actions) {
  int best = 0, run = 0, prev = -1;
  for (int a : actions) {
    bool turn = a == static_cast<int>(sim::Action::TurnLeft) || a == static_cast<int>(sim::Action::TurnRight);
    run = turn ? (a == prev ? run + 1 : 1) : 0;
    prev = turn ? a : -1;
    best = std::max(best, run);
  }
  return best;
}

double scan_fraction(const EvalReport& r, int min_run) {
  if (r.records.empty()) return 0.0;
  int n = 0;
  for (const auto& rec : r.records) n += longest_turn_run(rec.actions) >= min_run ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(r.records.size());
}

void save_policy(const RecurrentPolicy& p, const std::filesystem::path& path) {
  TensorFile f;
  f.magic = kMagic;
  f.metadata = p.cfg.to_json();
  f.tensors = p.params.to_tensors();
  write_tensor_file(path, f);
}

RecurrentPolicy load_policy(const std::filesystem::path& path) {
  TensorFile f = read_tensor_file(path, kMagic);
  PolicyConfig cfg;
  try {
    cfg = PolicyConfig::from_json(f.metadata);
  } catch (const std::exception& e) {
    throw DataError("bad policy metadata in " + path.string() + ": " + e.what());
  }
  RecurrentPolicy p = init_policy(cfg);
  try {
    p.params.assign(f.tensors);
  } catch (const std::invalid_argument& e) {
    throw DataError("policy shape table mismatch in " + path.string() + ": " + e.what());
  }
  return p;
}

void write_ppo_log(const std::vector<PpoLogRow>& log, const std::string& source, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  auto num = [](double v) { return std::isfinite(v) ? std::to_string(v) : std::string(); };
  out << "# source=" << source << '\n';
  out << "step,mean_reward,SR_eval,SPL_eval,entropy,value_loss,train_SR\n";
  for (const auto& r : log)
    out << r.step << ',' << num(r.mean_reward) << ',' << num(r.sr_eval) << ',' << num(r.spl_eval) << ','
        << num(r.entropy) << ',' << num(r.value_loss) << ',' << num(r.train_sr) << '\n';
}

}  // namespace distnav::rl
