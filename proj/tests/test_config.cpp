#include "distnav/config.hpp"
#include "distnav/errors.hpp"
#include "fixtures.hpp"

#include <doctest.h>

using namespace distnav;
using namespace distnav::cfg;

TEST_CASE("config: defaults resolve and round trip through text") {
  RunConfig c = parse_config("");
  CHECK(c.dist.model.ray_count == c.corpus.render.ray_count);
  CHECK(c.dist.model.num_semantic == c.corpus.world.num_classes + 1);
  CHECK(c.corpus.render.fov == doctest::Approx(std::numbers::pi / 2));
  std::string text = to_text(c);
  CHECK(to_text(parse_config(text)) == text);
}

TEST_CASE("config: typed values, comments and seed derivation") {
  RunConfig c = parse_config(
      "# comment\n[run]\nseed = 9\n\n[dist]\nsteps = 50\nobjective = mse\n[policy]\nuse_confidence = false\n");
  CHECK(c.seed == 9);
  CHECK(c.dist.steps == 50);
  CHECK(c.dist.objective == obj::Objective::Mse);
  CHECK(!c.policy.use_confidence);
  RunConfig d = parse_config("[run]\nseed = 10\n");
  CHECK(c.corpus.seed != d.corpus.seed);
  CHECK(c.dist.seed != c.ppo.seed);
  CHECK(parse_config("[run]\nseed = 9\n").dist.model.seed == c.dist.model.seed);
}

TEST_CASE("config: malformed input is rejected with a line number") {
  auto fails_with = [](const std::string& text, const std::string& fragment) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      INFO(e.what());
      CHECK(std::string(e.what()).find(fragment) != std::string::npos);
      return;
    }
    FAIL("accepted: " << text);
  };
  fails_with("[dist]\nstepz = 5\n", "line 2");
  fails_with("[nope]\n", "line 1");
  fails_with("[dist]\nsteps = many\n", "line 2");
  fails_with("steps = 5\n", "line 1");
  fails_with("[dist]\nobjective = sgd\n", "sgd");
  fails_with("[run]\nworkers = 0\n", "workers");
}

TEST_CASE("pipeline: corpus seeds, descriptors and episode sampler") {
  pipe::CorpusConfig cc;
  cc.world = {24, 24, 3, 2};
  cc.render = fixture::small_render();
  cc.train_worlds = 2;
  cc.val_worlds = 1;
  cc.trajectories_per_world = 3;
  cc.val_trajectories_per_world = 2;
  cc.seed = 4;
  pipe::Corpus a = pipe::generate_corpus(cc), b = pipe::generate_corpus(cc);
  CHECK(a.train.size() == 6);
  CHECK(a.val.size() == 2);
  CHECK(a.train == b.train);
  for (const auto& t : a.val)
    for (const auto& w : a.train_worlds) CHECK(t.world_seed != w->seed);
  for (const auto& t : a.train) CHECK(static_cast<int>(t.observations.size()) >= cc.min_length);
  CHECK(pipe::descriptors_for(a.train, a.train_worlds) == a.train_desc);
  CHECK_THROWS_AS(pipe::descriptors_for(a.val, a.train_worlds), DataError);

  pipe::EpisodeSampler s(a.train_worlds, {}, cc.render);
  Rng rng = make_rng(1, "episodes");
  for (int k = 0; k < 50; ++k) {
    env::EpisodeSpec e = s.sample(rng);
    int steps = e.goal->steps_to_goal(e.goal->world().cell_of(e.start.x, e.start.y));
    CHECK(steps >= 5);
    CHECK(steps <= 24);
  }
  auto f1 = s.fixed_set(5, 3), f2 = s.fixed_set(5, 3);
  for (int k = 0; k < 5; ++k) {
    CHECK(f1[k].start.x == f2[k].start.x);
    CHECK(f1[k].seed == f2[k].seed);
  }
}
