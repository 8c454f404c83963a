#include "distnav/distmodel.hpp"
#include "distnav/errors.hpp"
#include "support.hpp"

#include <doctest.h>

#include <fstream>

using namespace distnav;
using namespace distnav::dm;

namespace {

DistModelConfig small(Family f = Family::Decoder) {
  DistModelConfig c;
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
  c.seed = 3;
  return c;
}

struct Fixture {
  sim::GridWorld world = sim::generate_world(21, {});
  sim::RenderParams rp{16, std::numbers::pi / 2, 5.0};
  std::vector<sim::Observation> obs;
  Fixture() {
    auto cells = world.traversable_cells();
    for (int k = 0; k < 6; ++k) obs.push_back(sim::render_observation(world, sim::cell_pose(cells[k * 31], 0.9 * k), rp));
  }
};

std::filesystem::path tmp(const std::string& n) { return std::filesystem::temp_directory_path() / ("distnav_dm_" + n); }

}  // namespace

TEST_CASE("encoder: shape, constant panorama and zero weights") {
  DistModelConfig c;
  DistModel m = init_model(c);
  sim::Observation o;
  o.depth.assign(64, 2.0f);
  o.semantic.assign(64, 0);
  Mat t = encode_observation(m, o);
  CHECK(t.rows() == 8);
  CHECK(t.cols() == 32);
  for (int r = 1; r < 8; ++r) CHECK(t.row(r) == t.row(0));
  m.params[m.enc_w].setZero();
  m.params[m.enc_b].setZero();
  CHECK(encode_observation(m, o).isZero());
  o.depth.assign(32, 2.0f);
  o.semantic.assign(32, 0);
  CHECK_THROWS_AS(encode_observation(m, o), std::invalid_argument);
}

TEST_CASE("encoder: rotating the panorama by one sector permutes tokens") {
  Fixture f;
  DistModel m = init_model(small());
  const sim::Observation& o = f.obs[2];
  sim::Observation r = o;
  const int per = m.cfg.rays_per_sector();
  std::rotate(r.depth.begin(), r.depth.begin() + per, r.depth.end());
  std::rotate(r.semantic.begin(), r.semantic.begin() + per, r.semantic.end());
  Mat a = encode_observation(m, o), b = encode_observation(m, r);
  for (int s = 0; s < m.cfg.sectors; ++s) CHECK(b.row(s) == a.row((s + 1) % m.cfg.sectors));
}

TEST_CASE("goal tokens: masking contract and ordering") {
  Fixture f;
  DistModel m = init_model(small());
  Descriptor d{1, 5};
  CHECK(build_goal_tokens(m, GoalSpec::from_view(f.obs[0])).rows() == m.cfg.sectors);
  CHECK(build_goal_tokens(m, GoalSpec::from_descriptor(d)).rows() == 2);
  Mat joint = build_goal_tokens(m, GoalSpec::joint(f.obs[0], d));
  CHECK(joint.rows() == m.cfg.sectors + 2);
  CHECK(joint.topRows(2) == build_goal_tokens(m, GoalSpec::from_descriptor(d)));
  GoalSpec empty;
  CHECK_THROWS_AS(empty.validate(), std::invalid_argument);
  GoalSpec bad;
  bad.use_view = true;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("forward: output contracts, determinism and view masking") {
  Fixture f;
  for (Family fam : {Family::Decoder, Family::PooledEncoder, Family::EmbeddingDistance}) {
    DistModel m = init_model(small(fam));
    for (int i = 0; i < static_cast<int>(f.obs.size()); ++i) {
      for (int j = 0; j < static_cast<int>(f.obs.size()); ++j) {
        GoalSpec g = GoalSpec::joint(f.obs[j], {j % 3, 1 + j});
        DistPrediction p = forward(m, f.obs[i], g).pred;
        CHECK(p.t_hat >= 0.0);
        CHECK(p.c_hat >= 0.0);
        CHECK(p.c_hat <= 1.0);
        DistPrediction q = forward(m, f.obs[i], g).pred;
        CHECK(p.t_hat == q.t_hat);
        CHECK(p.c_hat == q.c_hat);
      }
    }
    if (fam == Family::EmbeddingDistance) {
      CHECK(forward(m, f.obs[0], GoalSpec::from_view(f.obs[1])).pred.c_hat == 1.0);
      continue;
    }
    GoalSpec masked = GoalSpec::joint(f.obs[3], {2, 7});
    masked.use_view = false;
    DistPrediction a = forward(m, f.obs[1], masked).pred;
    DistPrediction b = forward(m, f.obs[1], GoalSpec::from_descriptor({2, 7})).pred;
    CHECK(a.t_hat == b.t_hat);
    CHECK(a.c_hat == b.c_hat);
  }
}

TEST_CASE("forward: batched prediction equals single forward") {
  Fixture f;
  DistModel m = init_model(small());
  std::vector<GoalSpec> goals;
  for (std::size_t k = 0; k < f.obs.size(); ++k) goals.push_back(GoalSpec::from_view(f.obs[(k + 1) % f.obs.size()]));
  std::vector<const sim::Observation*> op;
  std::vector<const GoalSpec*> gp;
  for (std::size_t k = 0; k < f.obs.size(); ++k) {
    op.push_back(&f.obs[k]);
    gp.push_back(&goals[k]);
  }
  auto batch = predict(m, op, gp);
  for (std::size_t k = 0; k < f.obs.size(); ++k) {
    auto s = forward(m, f.obs[k], goals[k]).pred;
    CHECK(batch[k].t_hat == doctest::Approx(s.t_hat).epsilon(1e-12));
    CHECK(batch[k].c_hat == doctest::Approx(s.c_hat).epsilon(1e-12));
  }
}

TEST_CASE("forward: non-finite activation names the layer") {
  Fixture f;
  DistModel m = init_model(small());
  m.params[m.enc_w](0, 0) = std::numeric_limits<double>::infinity();
  try {
    forward(m, f.obs[0], GoalSpec::from_view(f.obs[1]));
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("non-finite activation in") != std::string::npos);
  }
}

TEST_CASE("quasimetric family is a declared stub") {
  CHECK_THROWS_AS(init_model(small(Family::Quasimetric)), std::logic_error);
}

TEST_CASE("checkpoint: round trip, corruption and cross-family load") {
  Fixture f;
  DistModel m = init_model(small());
  auto path = tmp("model.vld");
  save_checkpoint(m, path);
  DistModel back = load_checkpoint(path);
  CHECK(back.cfg == m.cfg);
  CHECK(back.params == m.params);
  GoalSpec g = GoalSpec::from_view(f.obs[4]);
  auto a = forward(m, f.obs[0], g).pred, b = forward(back, f.obs[0], g).pred;
  CHECK(a.t_hat == b.t_hat);
  CHECK(a.c_hat == b.c_hat);

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (std::size_t pos : {std::size_t{0}, std::size_t{2}, std::size_t{5}, std::size_t{9}, bytes.size() / 2}) {
    std::string broken = bytes;
    broken[pos] = static_cast<char>(broken[pos] ^ 0x5a);
    auto p = tmp("broken.vld");
    std::ofstream(p, std::ios::binary) << broken;
    CHECK_THROWS_AS(load_checkpoint(p), DataError);
  }
  CHECK_THROWS_AS(load_checkpoint(path, small(Family::EmbeddingDistance)), DataError);
}
