// End-to-end checks of the distnav_cli binary on a tiny budget.
#include <doctest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kWork = DISTNAV_CLI_WORK;
const std::string kSmoke = DISTNAV_CLI_SMOKE;

int run(const std::string& args, const std::string& log = "cli.log") {
  fs::create_directories(kWork);
  std::string cmd = "cd '" + kWork.string() + "' && '" DISTNAV_CLI_PATH "' " + args + " >>" + log + " 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE_MESSAGE(in, "cannot read " << p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json load(const fs::path& p) { return json::parse(slurp(p)); }

std::string without_out_dir(const fs::path& ini) {
  std::istringstream in(slurp(ini));
  std::string line, out;
  while (std::getline(in, line))
    if (line.rfind("out_dir", 0) != 0) out += line + '\n';
  return out;
}

std::vector<std::vector<std::string>> csv_rows(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

std::string config_with(const std::string& name, const std::string& extra) {
  fs::create_directories(kWork);
  fs::path p = kWork / name;
  std::ofstream out(p);
  out << slurp(kSmoke) << '\n' << extra;
  return p.string();
}

// Data, distance model and noise model shared by the later checks.
struct Artifacts {
  Artifacts() {
    fs::remove_all(kWork);
    REQUIRE(run("gen-data --config " + kSmoke + " --out data") == 0);
    REQUIRE(run("train-dist --config " + kSmoke + " --data data --out dist") == 0);
    REQUIRE(run("train-noise --config " + kSmoke + " --data data --model dist/model.vld --out noise --strict") == 0);
  }
};

const Artifacts& artifacts() {
  static Artifacts a;
  return a;
}

void check_number(const json& j, const char* key) {
  INFO(key);
  REQUIRE(j.contains(key));
  CHECK(j.at(key).is_number());
}

void check_pair_accuracy(const json& j) {
  for (const char* k : {"correct", "total", "excluded_ties"}) {
    INFO(k);
    REQUIRE(j.contains(k));
    CHECK(j.at(k).is_number_integer());
  }
  check_number(j, "accuracy");
}

// Mirrors the eval_report.json schema documented in the README.
void check_report_schema(const json& r, bool with_model, bool with_policies) {
  REQUIRE(r.at("tau_convention").is_string());
  if (with_model) {
    const json& view = r.at("ordinal_consistency").at("view");
    for (const char* h : {"20", "50", "100", "100-20"}) {
      INFO(h);
      check_number(view.at(h), "mean_tau");
      CHECK(view.at(h).at("trajectories").is_number_integer());
      CHECK(view.at(h).at("degenerate").is_number_integer());
    }
    for (const char* k : {"in_in", "out_in", "out_out"}) check_pair_accuracy(r.at("distance_accuracy").at(k));
    const json& probe = r.at("negative_probe");
    CHECK(probe.at("pairs").is_number_integer());
    for (const char* k : {"mean_ratio", "mean_conf", "frac_calibrated"}) check_number(probe, k);
  }
  if (with_policies) {
    REQUIRE(r.at("swap_matrix").is_array());
    for (const json& row : r.at("swap_matrix")) {
      for (const char* k : {"policy", "trained_on", "deployed_on"}) CHECK(row.at(k).is_string());
      CHECK(row.at("episodes").is_number_integer());
      for (const char* k : {"SR", "SPL", "scan_fraction"}) check_number(row, k);
      CHECK(row.at("SPL").get<double>() <= row.at("SR").get<double>() + 1e-12);
    }
  }
}

}  // namespace

TEST_CASE("gen-data writes the configured counts with disjoint splits") {
  artifacts();
  json m = load(kWork / "data/manifest.json");
  CHECK(m.at("train").at("trajectories").get<int>() == 3 * 6);
  CHECK(m.at("val").at("trajectories").get<int>() == 2 * 4);
  auto train = m.at("train").at("world_seeds").get<std::vector<std::uint64_t>>();
  auto val = m.at("val").at("world_seeds").get<std::vector<std::uint64_t>>();
  CHECK(train.size() == 3);
  CHECK(val.size() == 2);
  std::set<std::uint64_t> both(train.begin(), train.end());
  for (auto s : val) CHECK(both.insert(s).second);
  CHECK(fs::exists(kWork / "data/config.resolved.ini"));
}

TEST_CASE("gen-data rerun is byte identical") {
  artifacts();
  REQUIRE(run("gen-data --config " + kSmoke + " --out data2") == 0);
  for (const char* f : {"train.jsonl", "val.jsonl"}) {
    INFO(f);
    CHECK(slurp(kWork / "data" / f) == slurp(kWork / "data2" / f));
  }
  CHECK(without_out_dir(kWork / "data/config.resolved.ini") == without_out_dir(kWork / "data2/config.resolved.ini"));
  json a = load(kWork / "data/manifest.json"), b = load(kWork / "data2/manifest.json");
  a.erase("created");
  b.erase("created");
  CHECK(a == b);
}

TEST_CASE("a different seed changes the dataset") {
  artifacts();
  REQUIRE(run("gen-data --config " + kSmoke + " --seed 7 --out data_seed7") == 0);
  CHECK(slurp(kWork / "data/train.jsonl") != slurp(kWork / "data_seed7/train.jsonl"));
}

TEST_CASE("train-dist smoke run writes a checkpoint and tau columns at each eval interval") {
  artifacts();
  CHECK(fs::file_size(kWork / "dist/model.vld") > 0);
  auto rows = csv_rows(kWork / "dist/train_log.csv");
  REQUIRE(rows.size() == 101);
  CHECK(rows[0] == std::vector<std::string>{"step", "objective", "loss", "lr", "val_tau_20", "val_tau_50", "val_tau_100"});
  for (std::size_t i = 1; i < rows.size(); ++i) {
    INFO("row " << i);
    REQUIRE(rows[i].size() == 7);
    int step = std::stoi(rows[i][0]);
    CHECK(step == static_cast<int>(i));
    bool eval_row = step % 50 == 0;
    for (int c = 4; c < 7; ++c) CHECK(rows[i][c].empty() == !eval_row);
  }
  json m = load(kWork / "dist/manifest.json");
  CHECK(m.at("train_world_seeds") == load(kWork / "data/manifest.json").at("train").at("world_seeds"));
}

TEST_CASE("train-dist is byte reproducible, also from its resolved config") {
  artifacts();
  REQUIRE(run("train-dist --config " + kSmoke + " --data data --out dist2") == 0);
  CHECK(slurp(kWork / "dist/model.vld") == slurp(kWork / "dist2/model.vld"));
  CHECK(slurp(kWork / "dist/train_log.csv") == slurp(kWork / "dist2/train_log.csv"));
  REQUIRE(run("train-dist --config dist/config.resolved.ini --data data --out dist3") == 0);
  CHECK(slurp(kWork / "dist/model.vld") == slurp(kWork / "dist3/model.vld"));
  CHECK(without_out_dir(kWork / "dist/config.resolved.ini") == without_out_dir(kWork / "dist3/config.resolved.ini"));
}

TEST_CASE("train-noise reports held-out accuracy against the majority baseline") {
  artifacts();
  CHECK(fs::exists(kWork / "noise/geonoise.gnz"));
  json r = load(kWork / "noise/noise_report.json");
  CHECK(r.at("held_out_pairs").get<int>() == 100);
  double acc = r.at("dist_bin_accuracy").get<double>(), maj = r.at("majority_baseline").get<double>();
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  CHECK(maj >= 0.0);
  CHECK(maj <= 1.0);
  json m = load(kWork / "noise/manifest.json");
  CHECK(m.at("held_out_world_seeds") == load(kWork / "data/manifest.json").at("val").at("world_seeds"));
}

TEST_CASE("strict train-noise refuses a checkpoint trained on validation worlds") {
  artifacts();
  // A dataset whose training split is the validation split.
  fs::create_directories(kWork / "leaky");
  fs::copy_file(kWork / "data/val.jsonl", kWork / "leaky/train.jsonl", fs::copy_options::overwrite_existing);
  fs::copy_file(kWork / "data/val.jsonl", kWork / "leaky/val.jsonl", fs::copy_options::overwrite_existing);
  REQUIRE(run("train-dist --config " + kSmoke + " --data leaky --out dist_leaky") == 0);
  CHECK(run("train-noise --config " + kSmoke + " --data data --model dist_leaky/model.vld --out noise_leaky --strict") ==
        2);
  CHECK_FALSE(fs::exists(kWork / "noise_leaky/geonoise.gnz"));
  CHECK(run("train-noise --config " + kSmoke + " --data data --model dist_leaky/model.vld --out noise_loose") == 0);
}

TEST_CASE("each policy source configuration trains on a smoke budget") {
  artifacts();
  struct Variant {
    const char* name;
    const char* source;
    bool confidence;
  };
  const Variant variants[] = {{"gt", "gt", false},
                              {"geonoise", "geonoise", false},
                              {"geonoise_conf", "geonoise", true},
                              {"ou", "ou", false},
                              {"ou_conf", "ou", true},
                              {"learned", "learned", false}};
  for (const Variant& v : variants) {
    INFO(v.name);
    std::string cfg = v.confidence ? config_with("conf.ini", "[policy]\nuse_confidence = true\n")
                                   : config_with("noconf.ini", "[policy]\nuse_confidence = false\n");
    REQUIRE(run(std::string("train-policy --config ") + cfg + " --source " + v.source +
                " --noise noise/geonoise.gnz --model dist/model.vld --out pol_" + v.name) == 0);
    fs::path dir = kWork / (std::string("pol_") + v.name);
    CHECK(fs::exists(dir / "policy.pol"));
    std::string variant = std::string(v.source) + (v.confidence ? "+confidence" : "");
    std::string log = slurp(dir / "policy_log.csv");
    CHECK(log.rfind("# source=" + variant + "\n", 0) == 0);
    json m = load(dir / "manifest.json");
    CHECK(m.at("source") == v.source);
    CHECK(m.at("variant") == variant);
    CHECK(m.at("use_confidence").get<bool>() == v.confidence);
  }
}

TEST_CASE("train-policy is byte reproducible") {
  artifacts();
  REQUIRE(run("train-policy --config " + kSmoke + " --source gt --out pol_gt_a") == 0);
  REQUIRE(run("train-policy --config " + kSmoke + " --source gt --out pol_gt_b") == 0);
  CHECK(slurp(kWork / "pol_gt_a/policy.pol") == slurp(kWork / "pol_gt_b/policy.pol"));
  CHECK(slurp(kWork / "pol_gt_a/policy_log.csv") == slurp(kWork / "pol_gt_b/policy_log.csv"));
}

TEST_CASE("eval emits the 2x2 swap matrix and a schema-conforming report") {
  artifacts();
  for (const char* s : {"geonoise", "ou"})
    REQUIRE(run(std::string("train-policy --config ") + kSmoke + " --source " + s +
                " --noise noise/geonoise.gnz --out swap_" + s) == 0);
  REQUIRE(run("eval --config " + kSmoke +
              " --model dist/model.vld --noise noise/geonoise.gnz --data data"
              " --policy swap_geonoise/policy.pol --policy swap_ou/policy.pol --out eval") == 0);
  json r = load(kWork / "eval/eval_report.json");
  check_report_schema(r, true, true);
  std::set<std::pair<std::string, std::string>> cells;
  for (const json& row : r.at("swap_matrix")) {
    cells.emplace(row.at("trained_on").get<std::string>(), row.at("deployed_on").get<std::string>());
    CHECK(row.at("episodes").get<int>() == 4);
  }
  CHECK(r.at("swap_matrix").size() == 4);
  CHECK(cells == std::set<std::pair<std::string, std::string>>{
                     {"geonoise", "geonoise"}, {"geonoise", "learned"}, {"ou", "ou"}, {"ou", "learned"}});
  REQUIRE(r.contains("geonoise_swap_exceeds_ou_swap"));
  CHECK(r.at("geonoise_swap_exceeds_ou_swap").is_boolean());
  auto rows = csv_rows(kWork / "eval/swap_matrix.csv");
  CHECK(rows.size() == 5);
  CHECK(rows[0] ==
        std::vector<std::string>{"policy", "trained_on", "deployed_on", "episodes", "SR", "SPL", "scan_fraction"});
  CHECK(fs::exists(kWork / "eval/tau_per_trajectory.csv"));

  REQUIRE(run("eval --config " + kSmoke +
              " --model dist/model.vld --noise noise/geonoise.gnz --data data"
              " --policy swap_geonoise/policy.pol --policy swap_ou/policy.pol --out eval2") == 0);
  CHECK(slurp(kWork / "eval/eval_report.json") == slurp(kWork / "eval2/eval_report.json"));
}

TEST_CASE("eval of a distance model alone omits the policy sections") {
  artifacts();
  REQUIRE(run("eval --config " + kSmoke + " --model dist/model.vld --data data --out eval_model") == 0);
  json r = load(kWork / "eval_model/eval_report.json");
  check_report_schema(r, true, false);
  CHECK_FALSE(r.contains("swap_matrix"));
}

TEST_CASE("exit codes") {
  artifacts();
  SUBCASE("unknown config key is a usage error") {
    std::string cfg = config_with("bad_key.ini", "[dist]\nno_such_key = 1\n");
    CHECK(run("gen-data --config " + cfg + " --out bad") == 1);
  }
  SUBCASE("unknown flag is a usage error") { CHECK(run("gen-data --config " + kSmoke + " --bogus") == 1); }
  SUBCASE("missing subcommand is a usage error") { CHECK(run("") == 1); }
  SUBCASE("missing config file is a usage error") { CHECK(run("gen-data --config does_not_exist.ini") == 1); }
  SUBCASE("missing dataset is a data error") {
    CHECK(run("train-dist --config " + kSmoke + " --data no_data --out d") == 2);
  }
  SUBCASE("geonoise source without a checkpoint is a usage error") {
    CHECK(run("train-policy --config " + kSmoke + " --source geonoise --out p") == 1);
  }
  SUBCASE("numerical divergence") {
    std::string cfg = config_with("diverge.ini", "[dist]\nlr = 1e30\ngrad_clip = 1e30\n");
    CHECK(run("train-dist --config " + cfg + " --data data --out diverged") == 3);
  }
  SUBCASE("help succeeds") { CHECK(run("--help") == 0); }
}
