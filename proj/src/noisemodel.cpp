#include "distnav/noisemodel.hpp"

#include "distnav/errors.hpp"
#include "distnav/tensor_io.hpp"

#include <json.hpp>

#include <cmath>
#include <stdexcept>

namespace distnav::noise {
namespace {

constexpr std::array<char, 4> kMagic{'G', 'N', 'Z', '1'};

ad::Mat feature_rows(const std::vector<NoisePair>& pairs, const std::vector<std::size_t>& idx) {
  ad::Mat m(static_cast<Eigen::Index>(idx.size()), geo::kOverlapFeatureDim);
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (int c = 0; c < geo::kOverlapFeatureDim; ++c) m(static_cast<Eigen::Index>(r), c) = pairs[idx[r]].feats[c];
  return m;
}

std::vector<double> softmax_row(const ad::Mat& logits) {
  double m = logits.maxCoeff();
  std::vector<double> p(static_cast<std::size_t>(logits.cols()));
  double s = 0.0;
  for (Eigen::Index c = 0; c < logits.cols(); ++c) s += p[c] = std::exp(logits(0, c) - m);
  for (double& v : p) v /= s;
  return p;
}

}  // namespace

BinSpec BinSpec::uniform(int dist_bins, double td_max, int conf_bins) {
  if (dist_bins < 1 || conf_bins < 1 || !(td_max > 0)) throw std::invalid_argument("invalid bin layout");
  BinSpec b;
  for (int i = 0; i <= dist_bins; ++i) b.dist_edges.push_back(td_max * i / dist_bins);
  for (int i = 0; i <= conf_bins; ++i) b.conf_edges.push_back(static_cast<double>(i) / conf_bins);
  return b;
}

int BinSpec::bin_of(const std::vector<double>& edges, double x) {
  if (edges.size() < 2 || !(x >= edges.front()) || !(x <= edges.back())) return -1;
  auto it = std::upper_bound(edges.begin(), edges.end(), x);
  int i = static_cast<int>(it - edges.begin()) - 1;
  return std::min(i, static_cast<int>(edges.size()) - 2);
}

void BinSpec::validate() const {
  auto ascending = [](const std::vector<double>& e) {
    if (e.size() < 2) return false;
    for (std::size_t i = 1; i < e.size(); ++i)
      if (!(e[i] > e[i - 1])) return false;
    return true;
  };
  if (!ascending(dist_edges) || !ascending(conf_edges)) throw std::invalid_argument("bin edges must strictly ascend");
  if (dist_edges.front() != 0.0) throw std::invalid_argument("distance bins must start at 0");
  if (conf_edges.front() != 0.0 || conf_edges.back() != 1.0)
    throw std::invalid_argument("confidence bins must cover [0, 1]");
}

GeoNoiseParams init_geonoise(const BinSpec& bins, int hidden, std::uint64_t seed) {
  bins.validate();
  if (hidden < 1) throw std::invalid_argument("hidden size must be positive");
  GeoNoiseParams g;
  g.bins = bins;
  g.hidden = hidden;
  Rng rng = make_rng(seed, "init/geonoise");
  const int F = geo::kOverlapFeatureDim;
  g.w1 = g.params.add_uniform("w1", F, hidden, F, rng);
  g.b1 = g.params.add_constant("b1", 1, hidden, 0.0);
  g.w2 = g.params.add_uniform("w2", hidden, hidden, hidden, rng);
  g.b2 = g.params.add_constant("b2", 1, hidden, 0.0);
  g.wd = g.params.add_uniform("head_d.w", hidden, bins.dist_bins(), hidden, rng);
  g.bd = g.params.add_constant("head_d.b", 1, bins.dist_bins(), 0.0);
  g.wc = g.params.add_uniform("head_c.w", hidden, bins.conf_bins(), hidden, rng);
  g.bc = g.params.add_constant("head_c.b", 1, bins.conf_bins(), 0.0);
  return g;
}

HeadLogits geonoise_graph(ad::Tape& tape, const GeoNoiseParams& p, const std::vector<ad::Var>& l,
                          const ad::Mat& feats) {
  ad::Var x = tape.constant(feats);
  ad::Var h = ad::gelu(ad::linear(x, l[p.w1], l[p.b1]));
  h = ad::gelu(ad::linear(h, l[p.w2], l[p.b2]));
  return {ad::linear(h, l[p.wd], l[p.bd]), ad::linear(h, l[p.wc], l[p.bc])};
}

ad::Var geonoise_loss(const HeadLogits& logits, const std::vector<int>& dist_labels,
                      const std::vector<int>& conf_labels) {
  ad::Var ld = ad::mean(ad::pick_cols(ad::log_softmax_rows(logits.dist), dist_labels));
  ad::Var lc = ad::mean(ad::pick_cols(ad::log_softmax_rows(logits.conf), conf_labels));
  return ad::scale(ad::add(ld, lc), -1.0);
}

std::pair<std::vector<int>, std::vector<int>> bin_labels(const std::vector<NoisePair>& pairs, const BinSpec& bins) {
  std::vector<int> d, c;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    int bd = BinSpec::bin_of(bins.dist_edges, pairs[i].teacher.t_hat);
    int bc = BinSpec::bin_of(bins.conf_edges, pairs[i].teacher.c_hat);
    if (bd < 0 || bc < 0)
      throw std::invalid_argument("teacher label (" + std::to_string(pairs[i].teacher.t_hat) + ", " +
                                  std::to_string(pairs[i].teacher.c_hat) + ") of pair " + std::to_string(i) +
                                  " lies outside the bin coverage");
    d.push_back(bd);
    c.push_back(bc);
  }
  return {d, c};
}

GeoNoiseParams train_geonoise(const std::vector<NoisePair>& pairs, const BinSpec& bins, const GeoNoiseConfig& cfg) {
  if (pairs.empty()) throw std::invalid_argument("train_geonoise: no training pairs");
  auto [dl, cl] = bin_labels(pairs, bins);
  GeoNoiseParams g = init_geonoise(bins, cfg.hidden, cfg.seed);
  nn::Adam adam(g.params);
  Rng rng = make_rng(cfg.seed, "geonoise/sampler");
  const std::size_t B = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), pairs.size());
  for (long step = 0; step < cfg.steps; ++step) {
    std::vector<std::size_t> idx(B);
    std::vector<int> bd(B), bc(B);
    for (std::size_t i = 0; i < B; ++i) {
      idx[i] = B == pairs.size() ? i : uniform_index(rng, pairs.size());
      bd[i] = dl[idx[i]];
      bc[i] = cl[idx[i]];
    }
    ad::Tape tape;
    auto leaves = g.params.bind(tape);
    ad::Var loss = geonoise_loss(geonoise_graph(tape, g, leaves, feature_rows(pairs, idx)), bd, bc);
    if (!std::isfinite(loss.scalar()))
      throw DivergenceError("non-finite GeoNoise loss at step " + std::to_string(step), step);
    tape.backward(loss);
    auto grads = g.params.gradients(tape, leaves);
    nn::clip_global_norm(grads, 5.0);
    adam.step(g.params, grads, nn::warmup_cosine(step, cfg.steps, cfg.warmup, cfg.lr));
  }
  g.params.round_to_float();
  return g;
}

HeadProbs geonoise_probs(const GeoNoiseParams& p, const geo::OverlapFeatures& feats) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (int i = 0; i < p.params.size(); ++i) leaves.push_back(tape.constant_ref(p.params[i]));
  ad::Mat x(1, geo::kOverlapFeatureDim);
  for (int c = 0; c < geo::kOverlapFeatureDim; ++c) x(0, c) = feats[c];
  HeadLogits lg = geonoise_graph(tape, p, leaves, x);
  return {softmax_row(lg.dist.value()), softmax_row(lg.conf.value())};
}

int draw_bin(const std::vector<double>& probs, Rng& rng) {
  double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

double sample_in_bin(double lo, double hi, Rng& rng) {
  return 0.5 * (lo + hi) + (hi - lo) / 6.0 * standard_normal(rng);
}

dm::DistPrediction sample_from_probs(const HeadProbs& probs, const BinSpec& bins, Rng& rng) {
  int bd = draw_bin(probs.dist, rng);
  double d = sample_in_bin(bins.dist_edges[bd], bins.dist_edges[bd + 1], rng);
  int bc = draw_bin(probs.conf, rng);
  double c = sample_in_bin(bins.conf_edges[bc], bins.conf_edges[bc + 1], rng);
  return {std::max(0.0, d), std::clamp(c, 0.0, 1.0)};
}

dm::DistPrediction sample_geonoise(const GeoNoiseParams& p, const geo::OverlapFeatures& feats, Rng& rng) {
  return sample_from_probs(geonoise_probs(p, feats), p.bins, rng);
}

double dist_bin_accuracy(const GeoNoiseParams& p, const std::vector<NoisePair>& pairs) {
  if (pairs.empty()) return 0.0;
  auto [dl, cl] = bin_labels(pairs, p.bins);
  long ok = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    HeadProbs hp = geonoise_probs(p, pairs[i].feats);
    int arg = static_cast<int>(std::max_element(hp.dist.begin(), hp.dist.end()) - hp.dist.begin());
    if (arg == dl[i]) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(pairs.size());
}

void save_geonoise(const GeoNoiseParams& p, const std::filesystem::path& path) {
  nlohmann::ordered_json meta;
  meta["hidden"] = p.hidden;
  meta["dist_edges"] = p.bins.dist_edges;
  meta["conf_edges"] = p.bins.conf_edges;
  TensorFile f;
  f.magic = kMagic;
  f.metadata = meta.dump();
  f.tensors = p.params.to_tensors();
  write_tensor_file(path, f);
}

GeoNoiseParams load_geonoise(const std::filesystem::path& path) {
  TensorFile f = read_tensor_file(path, kMagic);
  try {
    nlohmann::json meta = nlohmann::json::parse(f.metadata);
    BinSpec bins;
    bins.dist_edges = meta.at("dist_edges").get<std::vector<double>>();
    bins.conf_edges = meta.at("conf_edges").get<std::vector<double>>();
    GeoNoiseParams g = init_geonoise(bins, meta.at("hidden").get<int>(), 0);
    g.params.assign(f.tensors);
    return g;
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError("bad GeoNoise checkpoint " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

double ou_bound(double d) { return std::expm1(std::sqrt(std::max(0.0, d))); }

dm::DistPrediction ou_step(OuState& state, double d, const OuConfig& cfg, const OuDraws& draws) {
  if (!(d >= 0)) throw std::invalid_argument("ou_apply: distance must be non-negative");
  state.eps = cfg.alpha * state.eps + cfg.sigma * draws.xi;
  const double bound = ou_bound(d);
  double e = state.eps + (draws.spike ? draws.psi : 0.0);
  e = std::clamp(e, -bound, bound);
  double d_hat = std::max(0.0, d + e);
  // Rounding in d + e can overshoot the bound by an ulp; pull back toward d.
  while (std::abs(d_hat - d) > bound) d_hat = std::nextafter(d_hat, d);
  state.phi = cfg.conf_alpha * state.phi + cfg.conf_sigma * draws.zeta;
  double c = std::exp(-cfg.kappa * std::abs(e));
  return {d_hat, std::clamp(c + state.phi, 0.0, 1.0)};
}

dm::DistPrediction ou_apply(OuState& state, double d, const OuConfig& cfg) {
  OuDraws dr;
  dr.xi = standard_normal(state.rng);
  dr.spike = uniform01(state.rng) < cfg.p_spike;
  dr.psi = std::sqrt(cfg.spike_var) * standard_normal(state.rng);
  dr.zeta = standard_normal(state.rng);
  return ou_step(state, d, cfg, dr);
}

OuProbe ou_autocorrelation_probe(const OuConfig& cfg, long n, std::uint64_t seed) {
  if (n < 10000) throw std::invalid_argument("ou_autocorrelation_probe: n must be >= 10^4");
  OuState st(derive_seed(seed, "ou/probe"));
  const long burn = 1000;
  std::vector<double> xs;
  xs.reserve(static_cast<std::size_t>(n));
  for (long t = 0; t < burn + n; ++t) {
    ou_apply(st, 100.0, cfg);
    if (t >= burn) xs.push_back(st.eps);
  }
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(n);
  double var = 0.0, cov = 0.0;
  for (long t = 0; t < n; ++t) {
    double a = xs[t] - mean;
    var += a * a;
    if (t + 1 < n) cov += a * (xs[t + 1] - mean);
  }
  return {var > 0 ? cov / var : 0.0, var / static_cast<double>(n)};
}

}  // namespace distnav::noise
