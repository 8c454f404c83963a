#pragma once

// Noise sources that imitate learned-predictor error during policy
// training: the overlap-conditioned GeoNoise classifier-sampler and an
// Ornstein-Uhlenbeck process with spikes.

#include "distnav/distmodel.hpp"
#include "distnav/geometry.hpp"
#include "distnav/nn.hpp"

#include <filesystem>
#include <vector>

namespace distnav::noise {

struct BinSpec {
  std::vector<double> dist_edges;  // steps
  std::vector<double> conf_edges;  // [0, 1]

  static BinSpec uniform(int dist_bins, double td_max, int conf_bins);
  int dist_bins() const { return static_cast<int>(dist_edges.size()) - 1; }
  int conf_bins() const { return static_cast<int>(conf_edges.size()) - 1; }
  /// Bin containing x (upper edge belongs to the last bin); -1 outside coverage.
  static int bin_of(const std::vector<double>& edges, double x);
  void validate() const;
  friend bool operator==(const BinSpec&, const BinSpec&) = default;
};

struct GeoNoiseConfig {
  int hidden = 64;
  long steps = 4000;
  int batch_size = 256;
  double lr = 3e-3;
  long warmup = 100;
  std::uint64_t seed = 0;
};

struct GeoNoiseParams {
  BinSpec bins;
  int hidden = 64;
  nn::ParamSet params;
  int w1 = -1, b1 = -1, w2 = -1, b2 = -1, wd = -1, bd = -1, wc = -1, bc = -1;
};

struct NoisePair {
  geo::OverlapFeatures feats;
  dm::DistPrediction teacher;  // t_hat in steps
};

GeoNoiseParams init_geonoise(const BinSpec& bins, int hidden, std::uint64_t seed);

/// Logits of both heads for a batch of feature rows (B x 13).
struct HeadLogits {
  ad::Var dist;  // B x dist_bins
  ad::Var conf;  // B x conf_bins
};
HeadLogits geonoise_graph(ad::Tape& tape, const GeoNoiseParams& p, const std::vector<ad::Var>& leaves,
                          const ad::Mat& feats);

/// Summed mean cross-entropy of both heads. Labels are bin indices.
ad::Var geonoise_loss(const HeadLogits& logits, const std::vector<int>& dist_labels,
                      const std::vector<int>& conf_labels);

/// Labels: bin of each teacher prediction. Throws std::invalid_argument when
/// a teacher value lies outside the bin coverage.
std::pair<std::vector<int>, std::vector<int>> bin_labels(const std::vector<NoisePair>& pairs, const BinSpec& bins);

GeoNoiseParams train_geonoise(const std::vector<NoisePair>& pairs, const BinSpec& bins, const GeoNoiseConfig& cfg);

struct HeadProbs {
  std::vector<double> dist;
  std::vector<double> conf;
};
HeadProbs geonoise_probs(const GeoNoiseParams& p, const geo::OverlapFeatures& feats);

/// Draws a bin index from a categorical distribution.
int draw_bin(const std::vector<double>& probs, Rng& rng);
/// N((lo + hi) / 2, ((hi - lo) / 6)^2).
double sample_in_bin(double lo, double hi, Rng& rng);
/// Per head: multinomial bin, then bin Gaussian; distance clamped at 0,
/// confidence clipped to [0, 1]. Distances are in steps.
dm::DistPrediction sample_geonoise(const GeoNoiseParams& p, const geo::OverlapFeatures& feats, Rng& rng);
dm::DistPrediction sample_from_probs(const HeadProbs& probs, const BinSpec& bins, Rng& rng);

/// Top-1 distance-bin accuracy.
double dist_bin_accuracy(const GeoNoiseParams& p, const std::vector<NoisePair>& pairs);

void save_geonoise(const GeoNoiseParams& p, const std::filesystem::path& path);
GeoNoiseParams load_geonoise(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

struct OuConfig {
  double alpha = 0.9;
  double sigma = 0.1;
  double p_spike = 0.05;
  double spike_var = 4.0;
  double kappa = 0.5;  // per meter
  double conf_alpha = 0.9;
  double conf_sigma = 0.05;
};

struct OuState {
  double eps = 0.0;  // distance noise before spikes and clamping
  double phi = 0.0;  // confidence noise
  Rng rng;
  explicit OuState(std::uint64_t seed = 0) : rng(seed) {}
};

/// Explicit random inputs of one OU step.
struct OuDraws {
  double xi = 0.0;
  bool spike = false;
  double psi = 0.0;  // spike magnitude, N(0, spike_var)
  double zeta = 0.0;
};

/// Admissible noise magnitude exp(sqrt(d)) - 1.
double ou_bound(double d);

/// Deterministic step given the draws; updates eps and phi in `state`.
dm::DistPrediction ou_step(OuState& state, double d, const OuConfig& cfg, const OuDraws& draws);
/// Draws from the state's stream and steps. d and the result are in meters.
dm::DistPrediction ou_apply(OuState& state, double d, const OuConfig& cfg);

struct OuProbe {
  double lag1 = 0.0;
  double variance = 0.0;
};
/// Lag-1 autocorrelation and variance of the unclamped eps stream after a
/// burn-in. Requires n >= 10^4.
OuProbe ou_autocorrelation_probe(const OuConfig& cfg, long n, std::uint64_t seed = 0);

}  // namespace distnav::noise
