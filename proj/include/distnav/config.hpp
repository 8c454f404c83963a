#pragma once

// Run configuration: a flat, typed key-value file with [section] headers.
//
//   # comment
//   [dist]
//   steps = 20000
//   objective = mixture-nll
//
// Unknown sections or keys and values of the wrong type are rejected. All
// component seeds are derived from the single [run] seed.

#include "distnav/objectives.hpp"
#include "distnav/pipeline.hpp"
#include "distnav/rltrain.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>

namespace distnav::cfg {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EvalConfig {
  int episodes = 200;
  int trajectories = 250;   // validation trajectories for ordinal consistency
  int accuracy_goals = 10;
  int accuracy_n_in = 20;
  int accuracy_n_out = 20;
  int probe_pairs = 500;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  int workers = 1;
  bool strict = false;

  pipe::CorpusConfig corpus;
  double fov_deg = 90.0;

  obj::TrainConfig dist;
  std::string objective = "mixture-nll";
  std::string goal_mode = "view";
  std::string family = "decoder";

  int dist_bins = 20;
  int conf_bins = 10;
  noise::GeoNoiseConfig noise;
  int noise_train_pairs = 20000;
  int noise_val_pairs = 2000;
  int noise_near_steps = 30;
  noise::OuConfig ou;

  std::string source = "gt";
  rl::PolicyConfig policy;
  rl::PpoConfig ppo;
  pipe::EpisodeDefaults episode;

  EvalConfig eval;

  /// Converts enum strings, propagates shared sizes and derives seeds.
  void finalize();
  noise::BinSpec bins() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Every key with its resolved value; parse_config(to_text(c)) == c.
std::string to_text(const RunConfig& c);
void write_resolved(const RunConfig& c, const std::filesystem::path& path);

}  // namespace distnav::cfg
