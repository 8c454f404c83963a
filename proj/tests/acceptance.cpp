// Acceptance suite: one PASS/FAIL line per criterion.
//
// Criteria 1-4 run in-process. Criteria 5-12 drive distnav_cli through the
// full pipeline inside a work directory; finished stages are reused, so
// delete the work directory to retrain from scratch.

#include "distnav/config.hpp"
#include "distnav/evalsuite.hpp"
#include "distnav/noisemodel.hpp"
#include "fixtures.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

using namespace distnav;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------------------
// In-process criteria

Outcome gradient_oracle() {
  auto t0 = Clock::now();
  std::ostringstream d;
  double worst = 0;
  for (obj::Objective o : {obj::Objective::MixtureNll, obj::Objective::Mse, obj::Objective::Vip, obj::Objective::Qrl}) {
    double e = fixture::objective_fd_error(o);
    worst = std::max(worst, e);
    d << obj::to_string(o) << " " << fmt(e, 3) << ", ";
  }
  double p = fixture::ppo_fd_error();
  worst = std::max(worst, p);
  double secs = seconds_since(t0);
  d << "ppo " << fmt(p, 3) << "; " << fmt(secs, 3) << " s";
  return {worst < 1e-4 && secs < 60, d.str()};
}

Outcome tau_oracle() {
  Rng rng = make_rng(2, "acceptance/tau");
  int mismatches = 0, variance = 0;
  for (int k = 0; k < 1000; ++k) {
    std::size_t n = 2 + uniform_index(rng, 60);
    std::vector<double> a(n), b(n);
    bool ties = k % 2 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = ties ? static_cast<double>(uniform_index(rng, 6)) : standard_normal(rng);
      b[i] = ties ? static_cast<double>(uniform_index(rng, 6)) : standard_normal(rng);
    }
    b[0] = 100.0;  // ground truth never constant
    if (std::all_of(a.begin(), a.end(), [&](double x) { return x == a[0]; })) a[0] += 1;
    double t = eval::kendall_tau(a, b).tau;
    mismatches += t != oracle::tau_b(a, b);
    std::vector<double> f1(a), f2(a), f3(a);
    for (std::size_t i = 0; i < n; ++i) {
      f1[i] = 2.5 * a[i] + 1;
      f2[i] = std::exp(a[i]);
      f3[i] = a[i] * a[i] * a[i];
    }
    variance += eval::kendall_tau(f1, b).tau != t || eval::kendall_tau(f2, b).tau != t ||
                eval::kendall_tau(f3, b).tau != t;
  }
  return {mismatches == 0 && variance == 0,
          "oracle mismatches " + std::to_string(mismatches) + ", transform changes " + std::to_string(variance)};
}

Outcome psr_oracle() {
  int mismatches = 0;
  double min_self = 1.0;
  for (int k = 0; k < 200; ++k) {
    sim::GridWorld w = sim::generate_world(1000 + static_cast<std::uint64_t>(k) / 20, {});
    Rng rng = make_rng(static_cast<std::uint64_t>(k), "acceptance/psr");
    auto cells = w.traversable_cells();
    sim::Cell a = cells[uniform_index(rng, cells.size())];
    sim::Cell b = uniform01(rng) < 0.5 ? a : cells[uniform_index(rng, cells.size())];
    auto g = sim::render_observation(w, sim::cell_pose(a, uniform01(rng) * 6.283), {});
    auto c = sim::render_observation(w, sim::cell_pose(b, uniform01(rng) * 6.283), {});
    mismatches += geo::psr(g, c, w) != oracle::psr(g, c);
    min_self = std::min(min_self, geo::psr(g, g, w));
  }
  // Two rooms separated by a solid wall.
  sim::GridWorld two = oracle::open_box(21, 10);
  for (int y = 0; y < 10; ++y) two.occupancy[two.index(10, y)] = 1;
  for (int y = 1; y < 9; ++y)
    for (int x = 11; x < 20; ++x) two.room_id[two.index(x, y)] = 1;
  two.room_count = 2;
  two.rebuild_object_grid();
  double occluded = 0.0;
  for (int k = 0; k < 8; ++k) {
    auto g = sim::render_observation(two, sim::cell_pose({5, 5}, k * 0.785), {});
    for (int j = 0; j < 8; ++j) {
      auto c = sim::render_observation(two, sim::cell_pose({15, 4}, j * 0.785), {});
      occluded = std::max(occluded, geo::psr(g, c, two));
    }
  }
  return {mismatches == 0 && min_self >= 0.99 && occluded == 0.0,
          "oracle mismatches " + std::to_string(mismatches) + ", min self " + fmt(min_self) + ", occluded max " +
              fmt(occluded)};
}

Outcome noise_statistics() {
  auto t0 = Clock::now();
  Rng rng = make_rng(4, "acceptance/bins");
  noise::BinSpec bins = noise::BinSpec::uniform(20, 100, 10);
  const long n = 100000;
  long inside = 0;
  for (long i = 0; i < n; ++i) {
    int b = static_cast<int>(uniform_index(rng, 20));
    double lo = bins.dist_edges[b], hi = bins.dist_edges[b + 1];
    double x = noise::sample_in_bin(lo, hi, rng);
    inside += x >= lo && x <= hi;
  }
  double frac = static_cast<double>(inside) / n;
  noise::OuConfig cfg;
  double lag1 = noise::ou_autocorrelation_probe(cfg, n, 4).lag1;
  noise::OuState st(derive_seed(4, "acceptance/ou"));
  long violations = 0;
  double d = 6.0;
  for (long t = 0; t < n; ++t) {
    d = std::clamp(d + 0.25 * (static_cast<double>(uniform_index(rng, 3)) - 1.0), 0.0, 25.0);
    auto p = noise::ou_apply(st, d, cfg);
    violations += std::abs(p.t_hat - d) > std::exp(std::sqrt(d)) - 1.0;
  }
  double secs = seconds_since(t0);
  return {frac >= 0.995 && lag1 >= 0.88 && lag1 <= 0.92 && violations == 0 && secs < 60,
          "in-bin " + fmt(frac) + ", lag-1 " + fmt(lag1) + ", clamp violations " + std::to_string(violations) + "; " +
              fmt(secs, 3) + " s"};
}

// ---------------------------------------------------------------------------
// Pipeline stages

struct Pipeline {
  fs::path work, cli, base_config;
  bool ok = true;
  std::string error;

  fs::path config_with(const std::string& name, const std::string& extra) {
    fs::path p = work / (name + ".ini");
    std::ifstream in(base_config);
    std::stringstream ss;
    ss << in.rdbuf() << "\n" << extra;
    std::ofstream(p) << ss.str();
    return p;
  }

  // Runs a CLI stage unless its manifest already exists; returns the elapsed
  // seconds of the run that produced it.
  double stage(const std::string& name, const std::string& args) {
    fs::path dir = work / name;
    fs::path timing = work / (name + ".seconds");
    if (fs::exists(dir / "manifest.json") && fs::exists(timing)) {
      double s = 0;
      std::ifstream(timing) >> s;
      return s;
    }
    if (!ok) return 0;
    std::cout << "[stage] " << name << std::endl;
    auto t0 = Clock::now();
    std::string cmd = "\"" + cli.string() + "\" " + args + " --out \"" + dir.string() + "\" > \"" +
                      (work / (name + ".log")).string() + "\" 2>&1";
    int rc = std::system(cmd.c_str());
    double secs = seconds_since(t0);
    if (rc != 0) {
      ok = false;
      error = name + " failed (see " + (work / (name + ".log")).string() + ")";
      return secs;
    }
    std::ofstream(timing) << secs;
    return secs;
  }

  json report(const std::string& name) {
    std::ifstream in(work / name / "eval_report.json");
    if (!in) return json::object();
    return json::parse(in);
  }
};

double tau_of(const json& r, const std::string& h) {
  return r.at("ordinal_consistency").at("view").at(h).at("mean_tau").get<double>();
}

const json* swap_row(const json& r, const std::string& trained, const std::string& deployed) {
  for (const auto& row : r.at("swap_matrix"))
    if (row.at("trained_on") == trained && row.at("deployed_on") == deployed) return &row;
  return nullptr;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::string work = "acceptance_work", cli, config;
  std::vector<int> only;
  app.add_option("--work", work, "Work directory for trained artifacts");
  app.add_option("--cli", cli, "Path to distnav_cli")->required();
  app.add_option("--config", config, "Base run configuration")->required()->check(CLI::ExistingFile);
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);

  auto wanted = [&](int k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };
  std::map<int, Outcome> results;
  auto report = [&](int k, Outcome o) {
    results[k] = o;
    std::cout << "criterion " << k << ": " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail << std::endl;
  };
  auto guarded = [&](int k, const std::function<Outcome()>& f) {
    if (!wanted(k)) return;
    try {
      report(k, f());
    } catch (const std::exception& e) {
      report(k, {false, std::string("exception: ") + e.what()});
    }
  };

  guarded(1, gradient_oracle);
  guarded(2, tau_oracle);
  guarded(3, psr_oracle);
  guarded(4, noise_statistics);

  bool need_pipeline = false;
  for (int k = 5; k <= 12; ++k) need_pipeline = need_pipeline || wanted(k);
  if (!need_pipeline) {
    int failed = 0;
    for (const auto& [k, o] : results) failed += !o.pass;
    return failed == 0 ? 0 : 1;
  }

  Pipeline p;
  p.work = fs::absolute(work);
  p.cli = fs::absolute(cli);
  p.base_config = fs::absolute(config);
  fs::create_directories(p.work);
  const std::string base = "--config \"" + p.config_with("base", "").string() + "\"";
  const fs::path W = p.work;
  auto q = [](const fs::path& x) { return "\"" + x.string() + "\""; };

  p.stage("data", "gen-data " + base);
  const std::string data = " --data " + q(W / "data");
  double dist_secs = p.stage("dist_nll", "train-dist " + base + data);
  std::map<std::string, std::string> variants{
      {"mse", "[dist]\nobjective = mse\n"},
      {"qrl", "[dist]\nobjective = qrl\n[model]\nfamily = embedding-distance\n"},
      {"noneg", "[dist]\np_neg = 0\n"}};
  bool need_variants = wanted(6) || wanted(7);
  if (need_variants)
    for (const auto& [name, extra] : variants)
      p.stage("dist_" + name, "train-dist --config " + q(p.config_with(name, extra)) + data);
  p.stage("eval_nll", "eval " + base + " --model " + q(W / "dist_nll" / "model.vld") + data);
  if (need_variants)
    for (const auto& [name, extra] : variants)
      p.stage("eval_" + name, "eval --config " + q(p.config_with(name, extra)) + " --model " +
                                  q(W / ("dist_" + name) / "model.vld") + data);

  bool need_policies = wanted(8) || wanted(9) || wanted(10) || wanted(12);
  double gt_secs = 0;
  if (need_policies) {
    const std::string model = " --model " + q(W / "dist_nll" / "model.vld");
    const std::string noise = " --noise " + q(W / "noise" / "geonoise.gnz");
    p.stage("noise", "train-noise " + base + model + data);
    gt_secs = p.stage("pol_gt", "train-policy " + base + " --source gt");
    p.stage("pol_geonoise", "train-policy " + base + " --source geonoise" + noise);
    p.stage("pol_ou", "train-policy " + base + " --source ou");
    p.stage("eval_policies", "eval " + base + model + noise + " --policy " + q(W / "pol_gt" / "policy.pol") +
                                 " --policy " + q(W / "pol_geonoise" / "policy.pol") + " --policy " +
                                 q(W / "pol_ou" / "policy.pol"));
  }
  if (!p.ok) std::cout << "pipeline error: " << p.error << std::endl;

  guarded(5, [&] {
    json r = p.report("eval_nll");
    double t20 = tau_of(r, "20"), t50 = tau_of(r, "50"), t100 = tau_of(r, "100"), tr = tau_of(r, "100-20");
    bool pass = t20 >= 0.6 && t20 + 0.05 >= t50 && t50 + 0.05 >= t100 && tr > 0.15 && dist_secs <= 1800;
    return Outcome{pass, "tau(20) " + fmt(t20) + ", tau(50) " + fmt(t50) + ", tau(100) " + fmt(t100) +
                             ", tau(100-20) " + fmt(tr) + "; training " + fmt(dist_secs, 4) + " s"};
  });
  guarded(6, [&] {
    double nll = tau_of(p.report("eval_nll"), "20"), mse = tau_of(p.report("eval_mse"), "20"),
           qrl = tau_of(p.report("eval_qrl"), "20");
    return Outcome{nll >= mse && qrl < mse && qrl < nll,
                   "tau(20) mixture-nll " + fmt(nll) + ", mse " + fmt(mse) + ", qrl " + fmt(qrl)};
  });
  guarded(7, [&] {
    json a = p.report("eval_nll").at("negative_probe"), b = p.report("eval_noneg").at("negative_probe");
    double ratio = a.at("mean_ratio"), conf = a.at("mean_conf"), conf0 = b.at("mean_conf");
    return Outcome{ratio >= 0.9 && conf >= 0.8 && conf0 <= conf - 0.3,
                   "p_neg=0.05 ratio " + fmt(ratio) + " conf " + fmt(conf) + "; p_neg=0 conf " + fmt(conf0)};
  });
  guarded(8, [&] {
    json r = p.report("eval_policies");
    const json* row = swap_row(r, "gt", "gt");
    if (!row) throw std::runtime_error("missing gt row");
    bool spl_ok = true;
    for (const auto& x : r.at("swap_matrix")) spl_ok = spl_ok && x.at("SPL").get<double>() <= x.at("SR").get<double>();
    double sr = row->at("SR");
    int n = row->at("episodes");
    return Outcome{sr >= 0.9 && n == 200 && spl_ok && gt_secs <= 7200,
                   "SR " + fmt(sr) + " on " + std::to_string(n) + " episodes, SPL<=SR on every row " +
                       (spl_ok ? "yes" : "no") + "; training " + fmt(gt_secs, 4) + " s"};
  });
  guarded(9, [&] {
    json r = p.report("eval_policies");
    double own = swap_row(r, "geonoise", "geonoise")->at("SR"), swap = swap_row(r, "geonoise", "learned")->at("SR");
    return Outcome{swap >= 0.6 * own && own > 0,
                   "geonoise-trained SR on geonoise " + fmt(own) + ", on learned " + fmt(swap) + " (ratio " +
                       fmt(own > 0 ? swap / own : 0.0) + ")"};
  });
  guarded(10, [&] {
    json r = p.report("eval_policies");
    double g = swap_row(r, "geonoise", "learned")->at("SR"), o = swap_row(r, "ou", "learned")->at("SR");
    return Outcome{g > o, "swap SR geonoise-trained " + fmt(g) + ", ou-trained " + fmt(o)};
  });
  guarded(11, [&] {
    json a = p.report("eval_nll").at("distance_accuracy").at("out_in");
    double acc = a.at("accuracy"), n = a.at("total");
    double sd = std::sqrt(0.25 / n);
    // Oracle model on the held-out worlds.
    auto cfg = cfg::load_config(p.work / "base.ini");
    auto worlds = pipe::make_worlds(cfg.corpus, true);
    eval::AccuracyResult o;
    for (std::size_t k = 0; k < worlds.size(); ++k) {
      const sim::GridWorld& w = *worlds[k];
      sim::Observation g = sim::render_observation(w, pipe::goal_pose(w, 0), cfg.corpus.render);
      eval::accumulate(o, eval::distance_accuracy(oracle::geodesic_fn(w), w, {dm::GoalSpec::from_view(g), g}, 20, 20,
                                                  derive_seed(11, std::to_string(k))));
    }
    bool oracle_ok = o.in_in.accuracy() == 1.0 && o.out_in.accuracy() == 1.0 && o.out_out.accuracy() == 1.0;
    return Outcome{acc > 0.5 + 3 * sd && oracle_ok,
                   "out-in " + fmt(acc) + " over " + fmt(n, 6) + " pairs (threshold " + fmt(0.5 + 3 * sd) +
                       "); oracle " + (oracle_ok ? "1.0 in all categories" : "imperfect")};
  });
  guarded(12, [&] {
    json r = p.report("eval_policies");
    double g = swap_row(r, "geonoise", "geonoise")->at("scan_fraction"), t = swap_row(r, "gt", "gt")->at("scan_fraction");
    return Outcome{g >= 0.5 && t < 0.2, "scan fraction geonoise-trained " + fmt(g) + ", gt-trained " + fmt(t)};
  });

  int failed = 0;
  for (const auto& [k, o] : results) failed += !o.pass;
  std::cout << results.size() - failed << "/" << results.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
