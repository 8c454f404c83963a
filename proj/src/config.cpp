#include "distnav/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <variant>

namespace distnav::cfg {

namespace {

using Slot = std::variant<int*, long*, double*, bool*, std::string*, std::uint64_t*>;

struct Binding {
  const char* section;
  const char* key;
  Slot slot;
};

std::vector<Binding> bindings(RunConfig& c) {
  auto& w = c.corpus.world;
  auto& d = c.dist;
  auto& m = c.dist.model;
  return {
      {"run", "seed", &c.seed},
      {"run", "out_dir", &c.out_dir},
      {"run", "workers", &c.workers},
      {"run", "strict", &c.strict},
      {"world", "width", &w.width},
      {"world", "height", &w.height},
      {"world", "room_count", &w.room_count},
      {"world", "objects_per_room", &w.objects_per_room},
      {"world", "num_classes", &w.num_classes},
      {"world", "palette_size", &w.palette_size},
      {"world", "min_room_size", &w.min_room_size},
      {"world", "door_width", &w.door_width},
      {"world", "max_retries", &w.max_retries},
      {"render", "ray_count", &c.corpus.render.ray_count},
      {"render", "fov_deg", &c.fov_deg},
      {"render", "max_range", &c.corpus.render.max_range},
      {"corpus", "train_worlds", &c.corpus.train_worlds},
      {"corpus", "trajectories_per_world", &c.corpus.trajectories_per_world},
      {"corpus", "val_worlds", &c.corpus.val_worlds},
      {"corpus", "val_trajectories_per_world", &c.corpus.val_trajectories_per_world},
      {"corpus", "min_length", &c.corpus.min_length},
      {"dist", "objective", &c.objective},
      {"dist", "goal_mode", &c.goal_mode},
      {"dist", "td_max", &d.td_max},
      {"dist", "p_neg", &d.p_neg},
      {"dist", "var_reliable", &d.var_reliable},
      {"dist", "var_outlier", &d.var_outlier},
      {"dist", "steps", &d.steps},
      {"dist", "batch_size", &d.batch_size},
      {"dist", "lr", &d.lr},
      {"dist", "warmup", &d.warmup},
      {"dist", "grad_clip", &d.grad_clip},
      {"dist", "vip_gamma", &d.vip_gamma},
      {"dist", "eval_interval", &d.eval_interval},
      {"dist", "eval_trajectories", &d.eval_trajectories},
      {"dist", "qrl_d_max", &d.qrl.d_max},
      {"dist", "qrl_epsilon", &d.qrl.epsilon},
      {"dist", "qrl_lambda_clamp", &d.qrl.lambda_clamp},
      {"dist", "qrl_local_gap", &d.qrl.local_gap},
      {"dist", "qrl_rho_lr", &d.qrl.rho_lr},
      {"model", "family", &c.family},
      {"model", "sectors", &m.sectors},
      {"model", "token_dim", &m.token_dim},
      {"model", "layers", &m.layers},
      {"model", "heads", &m.heads},
      {"model", "ffn_dim", &m.ffn_dim},
      {"model", "head_hidden", &m.head_hidden},
      {"model", "room_vocab", &m.room_vocab},
      {"model", "embed_dim", &m.embed_dim},
      {"model", "out_scale", &m.out_scale},
      {"noise", "dist_bins", &c.dist_bins},
      {"noise", "conf_bins", &c.conf_bins},
      {"noise", "hidden", &c.noise.hidden},
      {"noise", "steps", &c.noise.steps},
      {"noise", "batch_size", &c.noise.batch_size},
      {"noise", "lr", &c.noise.lr},
      {"noise", "warmup", &c.noise.warmup},
      {"noise", "train_pairs", &c.noise_train_pairs},
      {"noise", "val_pairs", &c.noise_val_pairs},
      {"noise", "near_steps", &c.noise_near_steps},
      {"ou", "alpha", &c.ou.alpha},
      {"ou", "sigma", &c.ou.sigma},
      {"ou", "p_spike", &c.ou.p_spike},
      {"ou", "spike_var", &c.ou.spike_var},
      {"ou", "kappa", &c.ou.kappa},
      {"ou", "conf_alpha", &c.ou.conf_alpha},
      {"ou", "conf_sigma", &c.ou.conf_sigma},
      {"policy", "source", &c.source},
      {"policy", "use_confidence", &c.policy.use_confidence},
      {"policy", "hidden", &c.policy.hidden},
      {"policy", "input_proj", &c.policy.input_proj},
      {"policy", "head_hidden", &c.policy.head_hidden},
      {"policy", "gamma", &c.ppo.gamma},
      {"policy", "gae_lambda", &c.ppo.gae_lambda},
      {"policy", "clip", &c.ppo.clip},
      {"policy", "epochs", &c.ppo.epochs},
      {"policy", "minibatches", &c.ppo.minibatches},
      {"policy", "entropy_coef", &c.ppo.entropy_coef},
      {"policy", "value_coef", &c.ppo.value_coef},
      {"policy", "lr", &c.ppo.lr},
      {"policy", "max_grad_norm", &c.ppo.max_grad_norm},
      {"policy", "rollout", &c.ppo.rollout},
      {"policy", "envs", &c.ppo.envs},
      {"policy", "total_steps", &c.ppo.total_steps},
      {"policy", "eval_interval", &c.ppo.eval_interval},
      {"episode", "max_steps", &c.episode.max_steps},
      {"episode", "d_s", &c.episode.d_s},
      {"episode", "psr_s", &c.episode.psr_s},
      {"episode", "gamma_pen", &c.episode.gamma_pen},
      {"episode", "R_s", &c.episode.R_s},
      {"episode", "auto_success", &c.episode.auto_success},
      {"episode", "min_start_steps", &c.episode.min_start_steps},
      {"episode", "max_start_steps", &c.episode.max_start_steps},
      {"eval", "episodes", &c.eval.episodes},
      {"eval", "trajectories", &c.eval.trajectories},
      {"eval", "accuracy_goals", &c.eval.accuracy_goals},
      {"eval", "accuracy_n_in", &c.eval.accuracy_n_in},
      {"eval", "accuracy_n_out", &c.eval.accuracy_n_out},
      {"eval", "probe_pairs", &c.eval.probe_pairs},
  };
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& v, const std::string& where) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(where + ": invalid number '" + v + "'");
  return out;
}

void assign(Slot slot, const std::string& v, const std::string& where) {
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, std::string>) {
          *p = v;
        } else if constexpr (std::is_same_v<T, bool>) {
          if (v == "true")
            *p = true;
          else if (v == "false")
            *p = false;
          else
            throw ConfigError(where + ": expected true or false, got '" + v + "'");
        } else if constexpr (std::is_same_v<T, double>) {
          *p = parse_number<double>(v, where);
          if (!std::isfinite(*p)) throw ConfigError(where + ": non-finite value");
        } else {
          *p = parse_number<T>(v, where);
        }
      },
      slot);
}

std::string render(Slot slot) {
  return std::visit(
      [](auto* p) -> std::string {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, std::string>)
          return *p;
        else if constexpr (std::is_same_v<T, bool>)
          return *p ? "true" : "false";
        else if constexpr (std::is_same_v<T, double>) {
          char buf[64];
          auto r = std::to_chars(buf, buf + sizeof buf, *p);
          return std::string(buf, r.ptr);
        } else
          return std::to_string(*p);
      },
      slot);
}

}  // namespace

void RunConfig::finalize() {
  try {
    dist.objective = obj::objective_from_string(objective);
    dist.model.family = dm::family_from_string(family);
    env::source_from_string(source);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (goal_mode == "view")
    dist.goal_mode = obj::GoalMode::View;
  else if (goal_mode == "joint")
    dist.goal_mode = obj::GoalMode::Joint;
  else
    throw ConfigError("unknown goal_mode '" + goal_mode + "'");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (!(fov_deg > 0 && fov_deg < 180)) throw ConfigError("fov_deg must lie in (0, 180)");
  if (corpus.world.room_count > dist.model.room_vocab) throw ConfigError("room_count exceeds model.room_vocab");
  corpus.render.fov = fov_deg * std::numbers::pi / 180.0;
  dist.model.ray_count = corpus.render.ray_count;
  dist.model.num_semantic = corpus.world.num_classes + 1;
  corpus.seed = derive_seed(seed, "world");
  dist.seed = derive_seed(seed, "sampler");
  dist.model.seed = derive_seed(seed, "init");
  noise.seed = derive_seed(seed, "noise");
  policy.seed = derive_seed(seed, "policy-init");
  ppo.seed = derive_seed(seed, "rollout");
  try {
    dist.validate();
    dist.model.validate();
    ppo.validate();
    bins().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

noise::BinSpec RunConfig::bins() const { return noise::BinSpec::uniform(dist_bins, dist.td_max, conf_bins); }

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  auto table = bindings(c);
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const auto& b : table) known = known || section == b.section;
      if (!known) throw ConfigError(where + ": unknown section [" + section + "]");
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError(where + ": key outside any section");
    auto it = std::find_if(table.begin(), table.end(),
                           [&](const Binding& b) { return section == b.section && key == b.key; });
    if (it == table.end()) throw ConfigError(where + ": unknown key '" + key + "' in [" + section + "]");
    assign(it->slot, value, where + " (" + section + "." + key + ")");
  }
  c.finalize();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const RunConfig& c) {
  RunConfig copy = c;
  std::ostringstream out;
  std::string section;
  for (const auto& b : bindings(copy)) {
    if (section != b.section) {
      if (!section.empty()) out << '\n';
      section = b.section;
      out << '[' << section << "]\n";
    }
    out << b.key << " = " << render(b.slot) << '\n';
  }
  return out.str();
}

void write_resolved(const RunConfig& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_text(c);
}

}  // namespace distnav::cfg
