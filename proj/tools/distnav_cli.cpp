#include "distnav/config.hpp"
#include "distnav/errors.hpp"
#include "distnav/evalsuite.hpp"
#include "distnav/objectives.hpp"
#include "distnav/pipeline.hpp"
#include "distnav/rltrain.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <zlib.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace distnav;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = 1;
};

cfg::RunConfig resolve(const Common& c) {
  cfg::RunConfig rc = c.config.empty() ? cfg::parse_config("") : cfg::load_config(c.config);
  if (c.seed_set) rc.seed = c.seed;
  rc.workers = c.workers;
  if (!c.out.empty()) rc.out_dir = c.out;
  rc.finalize();
  return rc;
}

fs::path prepare_out(const cfg::RunConfig& rc) {
  fs::path out(rc.out_dir);
  fs::create_directories(out);
  cfg::write_resolved(rc, out / "config.resolved.ini");
  return out;
}

std::string file_crc(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  uLong crc = crc32(0L, Z_NULL, 0);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(in.gcount()));
  }
  std::ostringstream s;
  s << std::hex << std::setw(8) << std::setfill('0') << crc;
  return s.str();
}

std::string timestamp() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_json(const json& j, const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

json seeds_json(const std::vector<std::shared_ptr<const sim::GridWorld>>& worlds) {
  json a = json::array();
  for (const auto& w : worlds) a.push_back(w->seed);
  return a;
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

int cmd_gen_data(const Common& c) {
  cfg::RunConfig rc = resolve(c);
  fs::path out = prepare_out(rc);
  pipe::Corpus corpus = pipe::generate_corpus(rc.corpus);
  sim::write_dataset(corpus.train, rc.corpus.render, out / "train.jsonl");
  sim::write_dataset(corpus.val, rc.corpus.render, out / "val.jsonl");
  json m;
  m["command"] = "gen-data";
  m["seed"] = rc.seed;
  m["train"] = {{"worlds", rc.corpus.train_worlds},
                {"trajectories_per_world", rc.corpus.trajectories_per_world},
                {"trajectories", corpus.train.size()},
                {"world_seeds", seeds_json(corpus.train_worlds)},
                {"file", "train.jsonl"},
                {"crc32", file_crc(out / "train.jsonl")}};
  m["val"] = {{"worlds", rc.corpus.val_worlds},
              {"trajectories_per_world", rc.corpus.val_trajectories_per_world},
              {"trajectories", corpus.val.size()},
              {"world_seeds", seeds_json(corpus.val_worlds)},
              {"file", "val.jsonl"},
              {"crc32", file_crc(out / "val.jsonl")}};
  m["created"] = timestamp();
  write_json(m, out / "manifest.json");
  log_line("wrote " + std::to_string(corpus.train.size()) + " train and " + std::to_string(corpus.val.size()) +
           " validation trajectories to " + out.string());
  return 0;
}

sim::Dataset load_split(const fs::path& data, const char* name, const cfg::RunConfig& rc) {
  sim::Dataset d = sim::read_dataset(data / name);
  if (d.render.ray_count != rc.corpus.render.ray_count) throw DataError(std::string(name) + ": ray_count differs from config");
  return d;
}

int cmd_train_dist(const Common& c, const std::string& data) {
  cfg::RunConfig rc = resolve(c);
  fs::path out = prepare_out(rc);
  sim::Dataset train = load_split(data, "train.jsonl", rc), val = load_split(data, "val.jsonl", rc);
  auto worlds = pipe::worlds_of(train.trajectories, rc.corpus.world);
  std::vector<dm::Descriptor> desc = pipe::descriptors_for(train.trajectories, worlds);
  obj::TrainResult res = obj::train_distance_model(train.trajectories, rc.dist, val.trajectories, &desc,
                                                   [](const obj::LogRow& r) {
                                                     if (!std::isnan(r.val_tau_20))
                                                       log_line("step " + std::to_string(r.step) + " loss " +
                                                                std::to_string(r.loss) + " tau20 " +
                                                                std::to_string(r.val_tau_20));
                                                   });
  dm::save_checkpoint(res.model, out / "model.vld");
  obj::write_train_log(res.log, rc.dist, out / "train_log.csv");
  json m;
  m["command"] = "train-dist";
  m["seed"] = rc.seed;
  m["objective"] = obj::to_string(rc.dist.objective);
  m["family"] = dm::to_string(rc.dist.model.family);
  m["steps"] = rc.dist.steps;
  m["train_world_seeds"] = seeds_json(worlds);
  m["checkpoint"] = "model.vld";
  m["created"] = timestamp();
  write_json(m, out / "manifest.json");
  return 0;
}

std::vector<std::uint64_t> manifest_seeds(const fs::path& manifest, const char* key1, const char* key2 = nullptr) {
  json j = read_json(manifest);
  const json& node = key2 ? j.at(key1).at(key2) : j.at(key1);
  return node.get<std::vector<std::uint64_t>>();
}

int cmd_train_noise(const Common& c, const std::string& model_path, const std::string& data, bool strict) {
  cfg::RunConfig rc = resolve(c);
  if (strict) rc.strict = true;
  fs::path out = prepare_out(rc);
  sim::Dataset train = load_split(data, "train.jsonl", rc), val = load_split(data, "val.jsonl", rc);
  auto train_worlds = pipe::worlds_of(train.trajectories, rc.corpus.world);
  auto val_worlds = pipe::worlds_of(val.trajectories, rc.corpus.world);
  if (rc.strict) {
    fs::path mf = fs::path(model_path).parent_path() / "manifest.json";
    std::vector<std::uint64_t> used = manifest_seeds(mf, "train_world_seeds");
    for (const auto& w : val_worlds)
      if (std::find(used.begin(), used.end(), w->seed) != used.end())
        throw DataError("distance checkpoint was trained on validation world " + std::to_string(w->seed));
  }
  dm::DistModel model = dm::load_checkpoint(model_path);
  auto pairs = pipe::make_noise_pairs(model, train_worlds, rc.noise_train_pairs, rc.dist.td_max, rc.noise_near_steps,
                                      rc.corpus.render, derive_seed(rc.seed, "noise/train-pairs"));
  auto held = pipe::make_noise_pairs(model, val_worlds, rc.noise_val_pairs, rc.dist.td_max, rc.noise_near_steps,
                                     rc.corpus.render, derive_seed(rc.seed, "noise/val-pairs"));
  noise::BinSpec bins = rc.bins();
  noise::GeoNoiseParams p = noise::train_geonoise(pairs, bins, rc.noise);
  noise::save_geonoise(p, out / "geonoise.gnz");
  auto [labels, conf_labels] = noise::bin_labels(pairs, bins);
  auto [held_labels, held_conf] = noise::bin_labels(held, bins);
  std::vector<int> counts(static_cast<std::size_t>(bins.dist_bins()), 0);
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];
  int majority = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  double maj_acc = held.empty() ? 0.0
                                : static_cast<double>(std::count(held_labels.begin(), held_labels.end(), majority)) /
                                      static_cast<double>(held.size());
  json r;
  r["held_out_pairs"] = held.size();
  r["dist_bin_accuracy"] = held.empty() ? 0.0 : noise::dist_bin_accuracy(p, held);
  r["majority_baseline"] = maj_acc;
  write_json(r, out / "noise_report.json");
  json m;
  m["command"] = "train-noise";
  m["seed"] = rc.seed;
  m["distance_checkpoint"] = model_path;
  m["train_world_seeds"] = seeds_json(train_worlds);
  m["held_out_world_seeds"] = seeds_json(val_worlds);
  m["checkpoint"] = "geonoise.gnz";
  m["created"] = timestamp();
  write_json(m, out / "manifest.json");
  log_line("held-out bin accuracy " + std::to_string(r["dist_bin_accuracy"].get<double>()) + " (majority " +
           std::to_string(maj_acc) + ")");
  return 0;
}

env::DistanceSource make_source(const std::string& name, const cfg::RunConfig& rc, const std::string& noise_path,
                                const std::string& model_path) {
  switch (env::source_from_string(name)) {
    case env::SourceKind::GroundTruth: return env::DistanceSource::ground_truth();
    case env::SourceKind::Ou: return env::DistanceSource::ou_noise(rc.ou);
    case env::SourceKind::GeoNoise:
      if (noise_path.empty()) throw std::invalid_argument("source geonoise needs --noise");
      return env::DistanceSource::geo(std::make_shared<const noise::GeoNoiseParams>(noise::load_geonoise(noise_path)));
    case env::SourceKind::Learned:
      if (model_path.empty()) throw std::invalid_argument("source learned needs --model");
      return env::DistanceSource::learned(std::make_shared<const dm::DistModel>(dm::load_checkpoint(model_path)));
  }
  throw std::logic_error("unreachable");
}

int cmd_train_policy(const Common& c, const std::string& source, const std::string& noise_path,
                     const std::string& model_path) {
  cfg::RunConfig rc = resolve(c);
  if (!source.empty()) {
    rc.source = source;
    rc.finalize();
  }
  fs::path out = prepare_out(rc);
  env::DistanceSource src = make_source(rc.source, rc, noise_path, model_path);
  auto train_worlds = pipe::make_worlds(rc.corpus, false);
  auto val_worlds = pipe::make_worlds(rc.corpus, true);
  pipe::EpisodeSampler train_sampler(train_worlds, rc.episode, rc.corpus.render);
  pipe::EpisodeSampler val_sampler(val_worlds, rc.episode, rc.corpus.render);
  auto eval_specs = val_sampler.fixed_set(std::min(rc.eval.episodes, 64), derive_seed(rc.seed, "eval/policy-log"));
  rl::PpoResult res = rl::ppo_train([&](Rng& r) { return train_sampler.sample(r); }, src, rc.policy, rc.ppo, eval_specs,
                                    [](const rl::PpoLogRow& r) {
                                      if (!std::isnan(r.sr_eval))
                                        log_line("step " + std::to_string(r.step) + " SR " + std::to_string(r.sr_eval) +
                                                 " SPL " + std::to_string(r.spl_eval));
                                    });
  std::string variant = rc.source + (rc.policy.use_confidence ? "+confidence" : "");
  rl::save_policy(res.policy, out / "policy.pol");
  rl::write_ppo_log(res.log, variant, out / "policy_log.csv");
  json m;
  m["command"] = "train-policy";
  m["seed"] = rc.seed;
  m["source"] = rc.source;
  m["use_confidence"] = rc.policy.use_confidence;
  m["variant"] = variant;
  m["total_steps"] = rc.ppo.total_steps;
  m["checkpoint"] = "policy.pol";
  m["created"] = timestamp();
  write_json(m, out / "manifest.json");
  return 0;
}

json tau_json(const eval::OrdinalResult& r) {
  return {{"mean_tau", r.mean_tau}, {"trajectories", r.per_trajectory.size()}, {"degenerate", r.degenerate}};
}

json pair_json(const eval::PairAccuracy& p) {
  return {{"correct", p.correct}, {"total", p.total}, {"excluded_ties", p.excluded_ties}, {"accuracy", p.accuracy()}};
}

int cmd_eval(const Common& c, const std::string& model_path, const std::string& noise_path, const std::string& data,
             const std::vector<std::string>& policies) {
  cfg::RunConfig rc = resolve(c);
  fs::path out = prepare_out(rc);
  json report;
  report["tau_convention"] = "Kendall tau-b between predicted distance and remaining ground-truth steps";
  std::shared_ptr<const dm::DistModel> model;
  if (!model_path.empty()) model = std::make_shared<const dm::DistModel>(dm::load_checkpoint(model_path));

  if (model && !data.empty()) {
    sim::Dataset val = load_split(data, "val.jsonl", rc);
    std::vector<sim::Trajectory> trajs(val.trajectories.begin(),
                                       val.trajectories.begin() +
                                           std::min<std::size_t>(val.trajectories.size(), rc.eval.trajectories));
    auto worlds = pipe::worlds_of(val.trajectories, rc.corpus.world);
    auto desc = pipe::descriptors_for(trajs, worlds);
    eval::DistanceFn fn = eval::model_fn(*model);
    json ord;
    std::ofstream csv(out / "tau_per_trajectory.csv");
    csv << "goal,horizon,trajectory,tau,degenerate\n";
    std::vector<std::pair<std::string, eval::EvalGoal>> kinds{{"view", eval::EvalGoal::View}};
    if (rc.dist.goal_mode == obj::GoalMode::Joint) {
      kinds.emplace_back("descriptor", eval::EvalGoal::Descriptor);
      kinds.emplace_back("joint", eval::EvalGoal::Joint);
    }
    for (const auto& [name, kind] : kinds) {
      json g;
      for (auto [label, spec] : std::vector<std::pair<std::string, eval::HorizonSpec>>{
               {"20", {20, 0}}, {"50", {50, 0}}, {"100", {100, 0}}, {"100-20", {100, 20}}}) {
        eval::OrdinalResult r = eval::ordinal_consistency(fn, trajs, spec, kind, &desc);
        g[label] = tau_json(r);
        for (std::size_t i = 0; i < r.per_trajectory.size(); ++i)
          csv << name << ',' << label << ',' << r.trajectory_index[i] << ',' << r.per_trajectory[i].tau << ','
              << (r.per_trajectory[i].degenerate ? 1 : 0) << '\n';
      }
      ord[name] = g;
    }
    report["ordinal_consistency"] = ord;

    eval::AccuracyResult acc;
    Rng rng = make_rng(rc.seed, "eval/accuracy-goals");
    for (int k = 0; k < rc.eval.accuracy_goals; ++k) {
      const sim::GridWorld& w = *worlds[uniform_index(rng, worlds.size())];
      int obj = static_cast<int>(uniform_index(rng, w.objects.size()));
      sim::Observation g = sim::render_observation(w, pipe::goal_pose(w, obj), rc.corpus.render);
      eval::AccuracyGoal ag{dm::GoalSpec::from_view(g), g};
      eval::accumulate(acc, eval::distance_accuracy(fn, w, ag, rc.eval.accuracy_n_in, rc.eval.accuracy_n_out,
                                                    derive_seed(rc.seed, "eval/accuracy/" + std::to_string(k))));
    }
    report["distance_accuracy"] = {
        {"in_in", pair_json(acc.in_in)}, {"out_in", pair_json(acc.out_in)}, {"out_out", pair_json(acc.out_out)}};
    eval::ProbeResult pr = eval::negative_pair_probe(fn, trajs, rc.eval.probe_pairs, rc.dist.td_max,
                                                     derive_seed(rc.seed, "eval/probe"));
    report["negative_probe"] = {{"pairs", pr.n},
                                {"mean_ratio", pr.mean_ratio},
                                {"mean_conf", pr.mean_conf},
                                {"frac_calibrated", pr.frac_calibrated}};
  }

  if (!policies.empty()) {
    auto val_worlds = pipe::make_worlds(rc.corpus, true);
    pipe::EpisodeSampler sampler(val_worlds, rc.episode, rc.corpus.render);
    auto specs = sampler.fixed_set(rc.eval.episodes, derive_seed(rc.seed, "eval/episodes"));
    json rows = json::array();
    std::map<std::string, double> swap_sr;
    std::ofstream csv(out / "swap_matrix.csv");
    csv << "policy,trained_on,deployed_on,episodes,SR,SPL,scan_fraction\n";
    for (const std::string& path : policies) {
      rl::RecurrentPolicy pol = rl::load_policy(path);
      fs::path mf = fs::path(path).parent_path() / "manifest.json";
      std::string trained_on = fs::exists(mf) ? read_json(mf).at("source").get<std::string>() : std::string("gt");
      std::vector<std::string> deploy{trained_on};
      if (model && trained_on != "learned") deploy.push_back("learned");
      for (const std::string& d : deploy) {
        env::DistanceSource src = make_source(d, rc, noise_path, model_path);
        rl::EvalReport rep = rl::swap_evaluate(pol, trained_on, src, specs, true, derive_seed(rc.seed, "eval/swap"));
        double scan = rl::scan_fraction(rep);
        rows.push_back({{"policy", path},
                        {"trained_on", rep.trained_on},
                        {"deployed_on", rep.deployed_on},
                        {"episodes", rep.episodes},
                        {"SR", rep.sr},
                        {"SPL", rep.spl},
                        {"scan_fraction", scan}});
        csv << path << ',' << rep.trained_on << ',' << rep.deployed_on << ',' << rep.episodes << ',' << rep.sr << ','
            << rep.spl << ',' << scan << '\n';
        if (d == "learned") swap_sr[trained_on] = rep.sr;
      }
    }
    report["swap_matrix"] = rows;
    if (swap_sr.count("geonoise") && swap_sr.count("ou"))
      report["geonoise_swap_exceeds_ou_swap"] = swap_sr["geonoise"] > swap_sr["ou"];
  }
  write_json(report, out / "eval_report.json");
  json m;
  m["command"] = "eval";
  m["seed"] = rc.seed;
  m["created"] = timestamp();
  write_json(m, out / "manifest.json");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal distance models, noise models and navigation policies on procedural grid worlds"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "Run configuration file")->check(CLI::ExistingFile);
    sub->add_option("--out", common.out, "Output directory");
    sub->add_option("--seed", common.seed, "Root seed")->each([&](const std::string&) { common.seed_set = true; });
    sub->add_option("--workers", common.workers, "Upper bound on worker threads")->check(CLI::PositiveNumber);
  };
  std::string data, model, noise_path, source;
  std::vector<std::string> policies;
  bool strict = false;

  auto* gen = app.add_subcommand("gen-data", "Generate worlds and follower trajectories");
  add_common(gen);
  auto* td = app.add_subcommand("train-dist", "Train a temporal distance model");
  add_common(td);
  td->add_option("--data", data, "Dataset directory from gen-data")->required();
  auto* tn = app.add_subcommand("train-noise", "Fit GeoNoise to a distance model");
  add_common(tn);
  tn->add_option("--model", model, "Distance checkpoint")->required();
  tn->add_option("--data", data, "Dataset directory from gen-data")->required();
  tn->add_flag("--strict", strict, "Refuse checkpoints trained on validation worlds");
  auto* tp = app.add_subcommand("train-policy", "Train a navigation policy with PPO");
  add_common(tp);
  tp->add_option("--source", source, "gt, geonoise, ou or learned (overrides the config)");
  tp->add_option("--noise", noise_path, "GeoNoise checkpoint");
  tp->add_option("--model", model, "Distance checkpoint for the learned source");
  auto* ev = app.add_subcommand("eval", "Evaluate distance models and policies");
  add_common(ev);
  ev->add_option("--model", model, "Distance checkpoint");
  ev->add_option("--noise", noise_path, "GeoNoise checkpoint");
  ev->add_option("--data", data, "Dataset directory from gen-data");
  ev->add_option("--policy", policies, "Policy checkpoints (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  try {
    if (*gen) return cmd_gen_data(common);
    if (*td) return cmd_train_dist(common, data);
    if (*tn) return cmd_train_noise(common, model, data, strict);
    if (*tp) return cmd_train_policy(common, source, noise_path, model);
    if (*ev) return cmd_eval(common, model, noise_path, data, policies);
  } catch (const cfg::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence at step " << e.step() << ": " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
