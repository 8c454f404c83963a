#include "distnav/distmodel.hpp"

#include "distnav/errors.hpp"
#include "distnav/tensor_io.hpp"

#include <json.hpp>

#include <stdexcept>

namespace distnav::dm {
namespace {

constexpr std::array<char, 4> kMagic{'V', 'L', 'D', '1'};

void check_finite(Var v, const std::string& where) {
  if (!v.value().allFinite()) throw DivergenceError("non-finite activation in " + where);
}

Var obs_tokens(ad::Tape& tape, const DistModel& m, const std::vector<Var>& p,
               std::span<const sim::Observation* const> obs) {
  const int S = m.cfg.sectors, F = m.cfg.sector_features();
  Mat feats(static_cast<Eigen::Index>(obs.size()) * S, F);
  for (std::size_t b = 0; b < obs.size(); ++b) feats.middleRows(static_cast<Eigen::Index>(b) * S, S) = sector_features(m.cfg, *obs[b]);
  return ad::linear(tape.constant(std::move(feats)), p[m.enc_w], p[m.enc_b]);
}

Var attn_block(const DistModel& m, const std::vector<Var>& p, Var x_norm, Var mem, int wq, int wk, int wv, int wo,
               const ad::Segments& qs, const ad::Segments& ks) {
  Var q = ad::matmul(x_norm, p[wq]);
  Var k = ad::matmul(mem, p[wk]);
  Var v = ad::matmul(mem, p[wv]);
  return ad::matmul(ad::attention(q, k, v, qs, ks, m.cfg.heads), p[wo]);
}

Var ffn_block(const std::vector<Var>& p, const LayerIndex& L, Var x) {
  Var h = ad::layer_norm(x, p[L.ln3_g], p[L.ln3_b]);
  return ad::add(x, nn::mlp2(p, L.f1w, L.f1b, L.f2w, L.f2b, h));
}

void heads(const DistModel& m, const std::vector<Var>& p, Var pooled, BatchOutput& out) {
  Var t = nn::mlp2(p, m.tw1, m.tb1, m.tw2, m.tb2, pooled);
  out.t_hat = ad::relu(ad::scale(t, m.cfg.out_scale));
  out.c_hat = ad::sigmoid(nn::mlp2(p, m.cw1, m.cb1, m.cw2, m.cb2, pooled));
}

void add_heads(DistModel& m, Rng& rng) {
  const int D = m.cfg.token_dim, H = m.cfg.head_hidden;
  m.tw1 = m.params.add_uniform("head_t.w1", D, H, D, rng);
  m.tb1 = m.params.add_constant("head_t.b1", 1, H, 0.0);
  m.tw2 = m.params.add_uniform("head_t.w2", H, 1, H, rng);
  m.tb2 = m.params.add_constant("head_t.b2", 1, 1, 1.0);
  m.cw1 = m.params.add_uniform("head_c.w1", D, H, D, rng);
  m.cb1 = m.params.add_constant("head_c.b1", 1, H, 0.0);
  m.cw2 = m.params.add_uniform("head_c.w2", H, 1, H, rng);
  m.cb2 = m.params.add_constant("head_c.b2", 1, 1, 0.0);
}

LayerIndex add_layer(DistModel& m, int l, bool cross, Rng& rng) {
  const int D = m.cfg.token_dim, Fd = m.cfg.ffn_dim;
  const std::string pre = "layer" + std::to_string(l) + ".";
  LayerIndex L{};
  auto& P = m.params;
  L.ln1_g = P.add_constant(pre + "ln1.g", 1, D, 1.0);
  L.ln1_b = P.add_constant(pre + "ln1.b", 1, D, 0.0);
  L.sq = P.add_uniform(pre + "self.q", D, D, D, rng);
  L.sk = P.add_uniform(pre + "self.k", D, D, D, rng);
  L.sv = P.add_uniform(pre + "self.v", D, D, D, rng);
  L.so = P.add_uniform(pre + "self.o", D, D, D, rng);
  if (cross) {
    L.ln2_g = P.add_constant(pre + "ln2.g", 1, D, 1.0);
    L.ln2_b = P.add_constant(pre + "ln2.b", 1, D, 0.0);
    L.cq = P.add_uniform(pre + "cross.q", D, D, D, rng);
    L.ck = P.add_uniform(pre + "cross.k", D, D, D, rng);
    L.cv = P.add_uniform(pre + "cross.v", D, D, D, rng);
    L.co = P.add_uniform(pre + "cross.o", D, D, D, rng);
  } else {
    L.ln2_g = L.ln2_b = L.cq = L.ck = L.cv = L.co = -1;
  }
  L.ln3_g = P.add_constant(pre + "ln3.g", 1, D, 1.0);
  L.ln3_b = P.add_constant(pre + "ln3.b", 1, D, 0.0);
  L.f1w = P.add_uniform(pre + "ffn.w1", D, Fd, D, rng);
  L.f1b = P.add_constant(pre + "ffn.b1", 1, Fd, 0.0);
  L.f2w = P.add_uniform(pre + "ffn.w2", Fd, D, Fd, rng);
  L.f2b = P.add_constant(pre + "ffn.b2", 1, D, 0.0);
  return L;
}

void check_inputs(const DistModel& m, std::span<const sim::Observation* const> obs,
                  std::span<const GoalSpec* const> goals) {
  if (obs.size() != goals.size()) throw std::invalid_argument("forward_batch: obs/goal count mismatch");
  if (obs.empty()) throw std::invalid_argument("forward_batch: empty batch");
  for (const GoalSpec* g : goals) {
    g->validate();
    if (g->use_descriptor) {
      const Descriptor& d = *g->descriptor;
      if (d.room_class < 0 || d.room_class >= m.cfg.room_vocab || d.object_class < 0 ||
          d.object_class >= m.cfg.num_semantic)
        throw std::invalid_argument("descriptor out of vocabulary");
    }
  }
}

// Goal memory of the decoder family. Each sample owns a block of rows:
// [room, object] when the descriptor is used, then one row per sector.
Var goal_memory(ad::Tape& tape, const DistModel& m, const std::vector<Var>& p,
                std::span<const GoalSpec* const> goals, ad::Segments& segs) {
  const int S = m.cfg.sectors;
  std::vector<const sim::Observation*> views;
  std::vector<int> rooms, objs;
  for (const GoalSpec* g : goals) {
    if (g->use_view) views.push_back(&*g->view);
    if (g->use_descriptor) {
      rooms.push_back(g->descriptor->room_class);
      objs.push_back(g->descriptor->object_class);
    }
  }
  std::vector<Var> sources;
  int room_src = -1, obj_src = -1, view_src = -1;
  if (!rooms.empty()) {
    room_src = static_cast<int>(sources.size());
    sources.push_back(ad::gather_rows(p[m.room_emb], rooms));
    obj_src = static_cast<int>(sources.size());
    sources.push_back(ad::gather_rows(p[m.obj_emb], objs));
  }
  if (!views.empty()) {
    view_src = static_cast<int>(sources.size());
    sources.push_back(obs_tokens(tape, m, p, views));
  }
  std::vector<std::pair<int, int>> map;
  std::vector<int> pos_idx, mod_idx;
  int d_at = 0, v_at = 0;
  for (const GoalSpec* g : goals) {
    int len = 0;
    if (g->use_descriptor) {
      map.push_back({room_src, d_at});
      map.push_back({obj_src, d_at});
      ++d_at;
      pos_idx.insert(pos_idx.end(), {0, 1});
      mod_idx.insert(mod_idx.end(), {0, 0});
      len += 2;
    }
    if (g->use_view) {
      for (int s = 0; s < S; ++s) {
        map.push_back({view_src, v_at * S + s});
        pos_idx.push_back(2 + s);
        mod_idx.push_back(1);
      }
      ++v_at;
      len += S;
    }
    segs.push(len);
  }
  Var mem = ad::assemble_rows(sources, std::move(map));
  mem = ad::add(mem, ad::add(ad::gather_rows(p[m.pos_mem], pos_idx), ad::gather_rows(p[m.mod_emb], mod_idx)));
  return mem;
}

BatchOutput decoder_forward(ad::Tape& tape, const DistModel& m, const std::vector<Var>& p,
                            std::span<const sim::Observation* const> obs, std::span<const GoalSpec* const> goals) {
  const int S = m.cfg.sectors;
  const int B = static_cast<int>(obs.size());
  ad::Segments ks;
  Var mem = goal_memory(tape, m, p, goals, ks);
  mem = ad::layer_norm(mem, p[m.mem_ln_g], p[m.mem_ln_b]);
  check_finite(mem, "goal memory");

  Var x = obs_tokens(tape, m, p, obs);
  std::vector<int> pos_idx(static_cast<std::size_t>(B) * S);
  for (int i = 0; i < B * S; ++i) pos_idx[i] = i % S;
  x = ad::add(x, ad::gather_rows(p[m.pos_obs], pos_idx));
  Var cls = ad::gather_rows(p[m.cls], std::vector<int>(static_cast<std::size_t>(B), 0));
  std::vector<std::pair<int, int>> qmap;
  for (int b = 0; b < B; ++b) {
    for (int s = 0; s < S; ++s) qmap.push_back({0, b * S + s});
    qmap.push_back({1, b});
  }
  Var h = ad::assemble_rows({x, cls}, std::move(qmap));
  check_finite(h, "observation encoder");

  ad::Segments qs = ad::Segments::uniform(B, S + 1);
  for (std::size_t l = 0; l < m.layer.size(); ++l) {
    const LayerIndex& L = m.layer[l];
    Var n1 = ad::layer_norm(h, p[L.ln1_g], p[L.ln1_b]);
    h = ad::add(h, attn_block(m, p, n1, n1, L.sq, L.sk, L.sv, L.so, qs, qs));
    Var n2 = ad::layer_norm(h, p[L.ln2_g], p[L.ln2_b]);
    h = ad::add(h, attn_block(m, p, n2, mem, L.cq, L.ck, L.cv, L.co, qs, ks));
    h = ffn_block(p, L, h);
    check_finite(h, "decoder layer " + std::to_string(l));
  }
  h = ad::layer_norm(h, p[m.out_ln_g], p[m.out_ln_b]);
  std::vector<int> cls_rows(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) cls_rows[b] = b * (S + 1) + S;
  BatchOutput out;
  out.z = h;
  heads(m, p, ad::gather_rows(h, cls_rows), out);
  check_finite(out.t_hat, "distance head");
  check_finite(out.c_hat, "confidence head");
  return out;
}

BatchOutput pooled_forward(ad::Tape& tape, const DistModel& m, const std::vector<Var>& p,
                           std::span<const sim::Observation* const> obs, std::span<const GoalSpec* const> goals) {
  const int S = m.cfg.sectors;
  const int B = static_cast<int>(obs.size());
  Var po = ad::segment_mean(obs_tokens(tape, m, p, obs), ad::Segments::uniform(B, S));

  std::vector<const sim::Observation*> views;
  std::vector<int> desc_rows;
  for (const GoalSpec* g : goals) {
    if (g->use_view) views.push_back(&*g->view);
    if (g->use_descriptor) {
      desc_rows.push_back(g->descriptor->room_class);
      desc_rows.push_back(g->descriptor->object_class);
    }
  }
  std::vector<Var> sources{po};
  int desc_src = -1, view_src = -1;
  if (!desc_rows.empty()) {
    // Room and object embeddings averaged into one pooled descriptor token.
    std::vector<int> rooms, objs;
    for (std::size_t i = 0; i < desc_rows.size(); i += 2) {
      rooms.push_back(desc_rows[i]);
      objs.push_back(desc_rows[i + 1]);
    }
    desc_src = static_cast<int>(sources.size());
    sources.push_back(ad::scale(ad::add(ad::gather_rows(p[m.room_emb], rooms), ad::gather_rows(p[m.obj_emb], objs)), 0.5));
  }
  if (!views.empty()) {
    view_src = static_cast<int>(sources.size());
    sources.push_back(ad::segment_mean(obs_tokens(tape, m, p, views),
                                       ad::Segments::uniform(static_cast<int>(views.size()), S)));
  }
  std::vector<std::pair<int, int>> map;
  std::vector<int> type_idx;
  ad::Segments segs;
  int d_at = 0, v_at = 0;
  for (int b = 0; b < B; ++b) {
    const GoalSpec* g = goals[b];
    map.push_back({0, b});
    type_idx.push_back(0);
    int len = 1;
    if (g->use_descriptor) {
      map.push_back({desc_src, d_at++});
      type_idx.push_back(1);
      ++len;
    }
    if (g->use_view) {
      map.push_back({view_src, v_at++});
      type_idx.push_back(2);
      ++len;
    }
    segs.push(len);
  }
  Var h = ad::add(ad::assemble_rows(sources, std::move(map)), ad::gather_rows(p[m.mod_emb], type_idx));
  for (std::size_t l = 0; l < m.layer.size(); ++l) {
    const LayerIndex& L = m.layer[l];
    Var n1 = ad::layer_norm(h, p[L.ln1_g], p[L.ln1_b]);
    h = ad::add(h, attn_block(m, p, n1, n1, L.sq, L.sk, L.sv, L.so, segs, segs));
    h = ffn_block(p, L, h);
    check_finite(h, "encoder layer " + std::to_string(l));
  }
  Var pooled = ad::layer_norm(ad::segment_mean(h, segs), p[m.out_ln_g], p[m.out_ln_b]);
  BatchOutput out;
  out.z = pooled;
  heads(m, p, pooled, out);
  check_finite(out.t_hat, "distance head");
  check_finite(out.c_hat, "confidence head");
  return out;
}

BatchOutput embedding_forward(ad::Tape& tape, const DistModel& m, const std::vector<Var>& p,
                              std::span<const sim::Observation* const> obs, std::span<const GoalSpec* const> goals) {
  std::vector<const sim::Observation*> all(obs.begin(), obs.end());
  for (const GoalSpec* g : goals) {
    if (!g->use_view) throw std::invalid_argument("embedding-distance family requires a view goal");
    all.push_back(&*g->view);
  }
  const int B = static_cast<int>(obs.size());
  Var e = embed_batch(tape, m, p, all);
  Var diff = ad::sub(ad::slice_rows(e, 0, B), ad::slice_rows(e, B, B));
  BatchOutput out;
  out.z = e;
  out.t_hat = ad::row_norm(diff);
  out.c_hat = tape.constant(Mat::Ones(B, 1));
  check_finite(out.t_hat, "embedding distance");
  return out;
}

}  // namespace

std::string to_string(Family f) {
  switch (f) {
    case Family::Decoder: return "decoder";
    case Family::PooledEncoder: return "pooled-encoder";
    case Family::EmbeddingDistance: return "embedding-distance";
    case Family::Quasimetric: return "quasimetric";
  }
  return "unknown";
}

Family family_from_string(const std::string& s) {
  if (s == "decoder") return Family::Decoder;
  if (s == "pooled-encoder") return Family::PooledEncoder;
  if (s == "embedding-distance") return Family::EmbeddingDistance;
  if (s == "quasimetric") return Family::Quasimetric;
  throw std::invalid_argument("unknown model family '" + s + "'");
}

GoalSpec GoalSpec::from_view(sim::Observation v) {
  GoalSpec g;
  g.view = std::move(v);
  g.use_view = true;
  return g;
}

GoalSpec GoalSpec::from_descriptor(Descriptor d) {
  GoalSpec g;
  g.descriptor = d;
  g.use_descriptor = true;
  return g;
}

GoalSpec GoalSpec::joint(sim::Observation v, Descriptor d) {
  GoalSpec g = from_view(std::move(v));
  g.descriptor = d;
  g.use_descriptor = true;
  return g;
}

void GoalSpec::validate() const {
  if (!use_view && !use_descriptor) throw std::invalid_argument("goal has no modality");
  if (use_view && !view) throw std::invalid_argument("goal view is masked in but missing");
  if (use_descriptor && !descriptor) throw std::invalid_argument("goal descriptor is masked in but missing");
}

void DistModelConfig::validate() const {
  if (ray_count < 8 || sectors < 1 || ray_count % sectors != 0)
    throw std::invalid_argument("ray_count must be >= 8 and divisible by sectors");
  if (token_dim < 1 || heads < 1 || token_dim % heads != 0)
    throw std::invalid_argument("token_dim must be divisible by heads");
  if (layers < 0 || ffn_dim < 1 || head_hidden < 1 || num_semantic < 1 || room_vocab < 1 || embed_dim < 1)
    throw std::invalid_argument("invalid model dimensions");
  if (!(out_scale > 0)) throw std::invalid_argument("out_scale must be positive");
}

std::string DistModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["family"] = to_string(family);
  j["ray_count"] = ray_count;
  j["sectors"] = sectors;
  j["token_dim"] = token_dim;
  j["layers"] = layers;
  j["heads"] = heads;
  j["ffn_dim"] = ffn_dim;
  j["head_hidden"] = head_hidden;
  j["num_semantic"] = num_semantic;
  j["room_vocab"] = room_vocab;
  j["embed_dim"] = embed_dim;
  j["out_scale"] = out_scale;
  j["seed"] = seed;
  return j.dump();
}

DistModelConfig DistModelConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  DistModelConfig c;
  c.family = family_from_string(j.at("family").get<std::string>());
  c.ray_count = j.at("ray_count").get<int>();
  c.sectors = j.at("sectors").get<int>();
  c.token_dim = j.at("token_dim").get<int>();
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.head_hidden = j.at("head_hidden").get<int>();
  c.num_semantic = j.at("num_semantic").get<int>();
  c.room_vocab = j.at("room_vocab").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.out_scale = j.at("out_scale").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

DistModel init_model(const DistModelConfig& cfg) {
  cfg.validate();
  if (cfg.family == Family::Quasimetric)
    throw std::logic_error("quasimetric (IQE) head is not implemented; use embedding-distance with the qrl objective");
  DistModel m;
  m.cfg = cfg;
  Rng rng = make_rng(cfg.seed, "init/" + to_string(cfg.family));
  const int D = cfg.token_dim, S = cfg.sectors, F = cfg.sector_features();
  auto& P = m.params;
  m.enc_w = P.add_uniform("enc.w", F, D, cfg.rays_per_sector() * 2, rng);
  m.enc_b = P.add_constant("enc.b", 1, D, 0.0);
  switch (cfg.family) {
    case Family::Decoder:
      m.room_emb = P.add_uniform("desc.room", cfg.room_vocab, D, 1, rng);
      m.obj_emb = P.add_uniform("desc.object", cfg.num_semantic, D, 1, rng);
      m.mod_emb = P.add_uniform("modality", 2, D, D, rng);
      m.pos_obs = P.add_uniform("pos.obs", S, D, D, rng);
      m.pos_mem = P.add_uniform("pos.goal", S + 2, D, D, rng);
      m.cls = P.add_uniform("cls", 1, D, 1, rng);
      m.mem_ln_g = P.add_constant("mem_ln.g", 1, D, 1.0);
      m.mem_ln_b = P.add_constant("mem_ln.b", 1, D, 0.0);
      for (int l = 0; l < cfg.layers; ++l) m.layer.push_back(add_layer(m, l, true, rng));
      m.out_ln_g = P.add_constant("out_ln.g", 1, D, 1.0);
      m.out_ln_b = P.add_constant("out_ln.b", 1, D, 0.0);
      add_heads(m, rng);
      break;
    case Family::PooledEncoder:
      m.room_emb = P.add_uniform("desc.room", cfg.room_vocab, D, 1, rng);
      m.obj_emb = P.add_uniform("desc.object", cfg.num_semantic, D, 1, rng);
      m.mod_emb = P.add_uniform("token_type", 3, D, 1, rng);
      for (int l = 0; l < cfg.layers; ++l) m.layer.push_back(add_layer(m, l, false, rng));
      m.out_ln_g = P.add_constant("out_ln.g", 1, D, 1.0);
      m.out_ln_b = P.add_constant("out_ln.b", 1, D, 0.0);
      add_heads(m, rng);
      break;
    case Family::EmbeddingDistance:
      m.emb_w = P.add_uniform("embed.w", S * D, cfg.embed_dim, S * D, rng);
      m.emb_b = P.add_constant("embed.b", 1, cfg.embed_dim, 0.0);
      break;
    case Family::Quasimetric:
      break;
  }
  return m;
}

Mat sector_features(const DistModelConfig& cfg, const sim::Observation& obs) {
  if (obs.ray_count() != cfg.ray_count || static_cast<int>(obs.semantic.size()) != cfg.ray_count)
    throw std::invalid_argument("observation has " + std::to_string(obs.ray_count()) + " rays, model expects " +
                                std::to_string(cfg.ray_count));
  const int S = cfg.sectors, rps = cfg.rays_per_sector(), C = cfg.num_semantic;
  Mat f = Mat::Zero(S, cfg.sector_features());
  for (int s = 0; s < S; ++s) {
    for (int k = 0; k < rps; ++k) {
      int i = s * rps + k;
      int sem = obs.semantic[i];
      if (sem >= C) throw std::invalid_argument("semantic id " + std::to_string(sem) + " outside vocabulary");
      f(s, k * (1 + C)) = obs.depth[i] / obs.max_range;
      f(s, k * (1 + C) + 1 + sem) = 1.0;
    }
  }
  return f;
}

Mat encode_observation(const DistModel& m, const sim::Observation& obs) {
  ad::Tape tape;
  auto p = m.params.bind(tape);
  const sim::Observation* o = &obs;
  return obs_tokens(tape, m, p, std::span<const sim::Observation* const>(&o, 1)).value();
}

Mat build_goal_tokens(const DistModel& m, const GoalSpec& goal) {
  goal.validate();
  if (m.cfg.family != Family::Decoder) throw std::invalid_argument("goal tokens exist only in the decoder family");
  ad::Tape tape;
  auto p = m.params.bind(tape);
  const GoalSpec* g = &goal;
  ad::Segments segs;
  return goal_memory(tape, m, p, std::span<const GoalSpec* const>(&g, 1), segs).value();
}

BatchOutput forward_batch(ad::Tape& tape, const DistModel& m, const std::vector<Var>& leaves,
                          std::span<const sim::Observation* const> obs, std::span<const GoalSpec* const> goals) {
  check_inputs(m, obs, goals);
  switch (m.cfg.family) {
    case Family::Decoder: return decoder_forward(tape, m, leaves, obs, goals);
    case Family::PooledEncoder: return pooled_forward(tape, m, leaves, obs, goals);
    case Family::EmbeddingDistance: return embedding_forward(tape, m, leaves, obs, goals);
    case Family::Quasimetric: break;
  }
  throw std::logic_error("quasimetric family is not implemented");
}

Var embed_batch(ad::Tape& tape, const DistModel& m, const std::vector<Var>& leaves,
                std::span<const sim::Observation* const> obs) {
  if (m.cfg.family != Family::EmbeddingDistance) throw std::invalid_argument("embed_batch: wrong model family");
  if (obs.empty()) throw std::invalid_argument("embed_batch: empty batch");
  Var tok = ad::gelu(obs_tokens(tape, m, leaves, obs));
  Var e = ad::linear(ad::group_flatten(tok, m.cfg.sectors), leaves[m.emb_w], leaves[m.emb_b]);
  check_finite(e, "embedding head");
  return e;
}

ForwardResult forward(const DistModel& m, const sim::Observation& obs, const GoalSpec& goal) {
  ad::Tape tape;
  auto p = m.params.bind(tape);
  const sim::Observation* o = &obs;
  const GoalSpec* g = &goal;
  BatchOutput out = forward_batch(tape, m, p, std::span<const sim::Observation* const>(&o, 1),
                                  std::span<const GoalSpec* const>(&g, 1));
  return {DistPrediction{out.t_hat.scalar(), out.c_hat.scalar()}, out.z.value()};
}

std::vector<DistPrediction> predict(const DistModel& m, std::span<const sim::Observation* const> obs,
                                    std::span<const GoalSpec* const> goals) {
  std::vector<DistPrediction> res;
  res.reserve(obs.size());
  constexpr std::size_t kChunk = 128;
  for (std::size_t at = 0; at < obs.size(); at += kChunk) {
    std::size_t n = std::min(kChunk, obs.size() - at);
    ad::Tape tape;
    auto p = m.params.bind(tape);
    BatchOutput out = forward_batch(tape, m, p, obs.subspan(at, n), goals.subspan(at, n));
    for (std::size_t i = 0; i < n; ++i)
      res.push_back({out.t_hat.value()(static_cast<Eigen::Index>(i), 0), out.c_hat.value()(static_cast<Eigen::Index>(i), 0)});
  }
  return res;
}

void save_checkpoint(const DistModel& m, const std::filesystem::path& path) {
  TensorFile f;
  f.magic = kMagic;
  f.metadata = m.cfg.to_json();
  f.tensors = m.params.to_tensors();
  write_tensor_file(path, f);
}

DistModel load_checkpoint(const std::filesystem::path& path) {
  TensorFile f = read_tensor_file(path, kMagic);
  DistModelConfig cfg;
  try {
    cfg = DistModelConfig::from_json(f.metadata);
  } catch (const std::exception& e) {
    throw DataError("bad checkpoint metadata in " + path.string() + ": " + e.what());
  }
  DistModel m = init_model(cfg);
  try {
    m.params.assign(f.tensors);
  } catch (const std::invalid_argument& e) {
    throw DataError("checkpoint shape table mismatch in " + path.string() + ": " + e.what());
  }
  return m;
}

DistModel load_checkpoint(const std::filesystem::path& path, const DistModelConfig& expected) {
  DistModel m = load_checkpoint(path);
  if (!(m.cfg == expected))
    throw DataError("checkpoint configuration " + m.cfg.to_json() + " does not match expected " + expected.to_json());
  return m;
}

}  // namespace distnav::dm
