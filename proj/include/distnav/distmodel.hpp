#pragma once

// Temporal distance model: sector encoder, modality-masked goal memory,
// decoder heads for distance and confidence, and two alternative families.

#include "distnav/autodiff.hpp"
#include "distnav/nn.hpp"
#include "distnav/simworld.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace distnav::dm {

using ad::Mat;
using ad::Var;

enum class Family { Decoder, PooledEncoder, EmbeddingDistance, Quasimetric };

std::string to_string(Family f);
Family family_from_string(const std::string& s);

struct Descriptor {
  int room_class = 0;
  int object_class = 0;
  friend bool operator==(const Descriptor&, const Descriptor&) = default;
};

struct GoalSpec {
  std::optional<sim::Observation> view;
  std::optional<Descriptor> descriptor;
  bool use_view = false;
  bool use_descriptor = false;

  static GoalSpec from_view(sim::Observation v);
  static GoalSpec from_descriptor(Descriptor d);
  static GoalSpec joint(sim::Observation v, Descriptor d);
  /// Throws std::invalid_argument when no modality is present or a mask
  /// refers to a missing field.
  void validate() const;
};

struct DistPrediction {
  double t_hat = 0.0;  // steps
  double c_hat = 1.0;
};

struct DistModelConfig {
  Family family = Family::Decoder;
  int ray_count = 64;
  int sectors = 8;
  int token_dim = 32;
  int layers = 2;
  int heads = 4;
  int ffn_dim = 64;
  int head_hidden = 32;
  int num_semantic = 33;  // semantic ids 0..num_semantic-1
  int room_vocab = 32;
  int embed_dim = 32;     // embedding-distance family
  double out_scale = 25.0;
  std::uint64_t seed = 0;

  int rays_per_sector() const { return ray_count / sectors; }
  int sector_features() const { return rays_per_sector() * (1 + num_semantic); }
  void validate() const;
  std::string to_json() const;
  static DistModelConfig from_json(const std::string& text);
  friend bool operator==(const DistModelConfig&, const DistModelConfig&) = default;
};

struct LayerIndex {
  int ln1_g, ln1_b, sq, sk, sv, so;   // self-attention
  int ln2_g, ln2_b, cq, ck, cv, co;   // cross-attention (decoder only)
  int ln3_g, ln3_b, f1w, f1b, f2w, f2b;
};

struct DistModel {
  DistModelConfig cfg;
  nn::ParamSet params;

  // Parameter indices; -1 when the family lacks the group.
  int enc_w = -1, enc_b = -1;
  int room_emb = -1, obj_emb = -1, mod_emb = -1, pos_obs = -1, pos_mem = -1, cls = -1;
  int mem_ln_g = -1, mem_ln_b = -1, out_ln_g = -1, out_ln_b = -1;
  std::vector<LayerIndex> layer;
  int tw1 = -1, tb1 = -1, tw2 = -1, tb2 = -1, cw1 = -1, cb1 = -1, cw2 = -1, cb2 = -1;
  int emb_w = -1, emb_b = -1;
};

/// Builds and initializes a model. The quasimetric family is declared but
/// not implemented and throws std::logic_error.
DistModel init_model(const DistModelConfig& cfg);

/// Per-sector raw features (sectors x sector_features): depth / max_range and
/// a one-hot semantic id for each ray of the sector.
Mat sector_features(const DistModelConfig& cfg, const sim::Observation& obs);

/// Observation tokens (sectors x token_dim).
Mat encode_observation(const DistModel& m, const sim::Observation& obs);

/// Goal memory rows before normalization: descriptor block (room, object)
/// first, then view tokens, with modality and positional embeddings added.
Mat build_goal_tokens(const DistModel& m, const GoalSpec& goal);

struct BatchOutput {
  Var t_hat;  // B x 1
  Var c_hat;  // B x 1
  Var z;      // decoder: full output sequence; other families: pooled state
};

/// Graph for a batch of (observation, goal) pairs on `tape`, using leaves from
/// m.params.bind(tape). Throws DivergenceError naming the first layer that
/// produced a non-finite activation.
BatchOutput forward_batch(ad::Tape& tape, const DistModel& m, const std::vector<Var>& leaves,
                          std::span<const sim::Observation* const> obs, std::span<const GoalSpec* const> goals);

/// Embedding-distance family: per-observation embedding (B x embed_dim).
Var embed_batch(ad::Tape& tape, const DistModel& m, const std::vector<Var>& leaves,
                std::span<const sim::Observation* const> obs);

struct ForwardResult {
  DistPrediction pred;
  Mat z;
};

ForwardResult forward(const DistModel& m, const sim::Observation& obs, const GoalSpec& goal);
std::vector<DistPrediction> predict(const DistModel& m, std::span<const sim::Observation* const> obs,
                                    std::span<const GoalSpec* const> goals);

void save_checkpoint(const DistModel& m, const std::filesystem::path& path);
DistModel load_checkpoint(const std::filesystem::path& path);
/// Also requires the stored configuration to equal `expected`.
DistModel load_checkpoint(const std::filesystem::path& path, const DistModelConfig& expected);

}  // namespace distnav::dm
