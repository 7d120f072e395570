#include "fllab/config.h"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fllab/errors.h"

namespace fllab {

const std::vector<ConfigKey>& config_vocabulary() {
  static const std::vector<ConfigKey> keys = {
      {"scenario", "", "scenario id; defaults to the config file stem"},
      {"seed", "", "master seed (mandatory)"},
      {"output.dir", "", "output directory; defaults to <root>/<scenario>"},
      {"output.images", "true", "leak: dump targets and reconstructions as IDX"},

      {"data.source", "synth", "synth | idx"},
      {"data.images", "", "IDX image file"},
      {"data.labels", "", "IDX label file"},
      {"data.classes", "10", "class count"},
      {"data.side", "8", "synthetic image side"},
      {"data.per_class", "100", "synthetic samples per class"},
      {"data.separation", "1.0", "synthetic center half-width"},
      {"data.spread", "0.1", "synthetic per-pixel standard deviation"},
      {"data.grid", "0", "synthetic block-constant centers (0 = per pixel)"},
      {"data.seed", "7", "synthetic data seed"},
      {"data.test_fraction", "0.25", "held-out share"},
      {"data.split_seed", "11", "train/test split seed"},

      {"partition.clients", "100", "N"},
      {"partition.per_client", "50", "n_k"},
      {"partition.classes_per_client", "2", "c"},

      {"model.hidden", "16", "hidden widths, comma separated (empty: softmax regression)"},
      {"model.activation", "sigmoid", "sigmoid | tanh"},
      {"model.init_gain", "1.0", "initialization gain"},

      {"train.participants", "10", "K_t"},
      {"train.rounds", "60", "T"},
      {"train.local_iters", "5", "L"},
      {"train.batch", "10", "B"},
      {"train.local_lr", "0.5", "local learning rate"},
      {"train.rule", "fedavg", "fedsgd | fedavg | delta"},
      {"train.global_lr", "1.0", "server learning rate (fedsgd)"},
      {"train.victim_class", "1", "class reported as victim_f1"},

      {"privacy.kind", "none", "none | compression | gaussian | fixed_dp | dynamic_dp"},
      {"privacy.compression_ratio", "0", "share of coordinates zeroed"},
      {"privacy.gaussian_variance", "0", "additive noise variance"},
      {"privacy.clip", "4", "C"},
      {"privacy.sigma0", "6", "initial (or fixed) noise scale"},
      {"privacy.sigma_final", "3", "sigma_T"},
      {"privacy.decay", "exponential", "linear | staircase | exponential | cyclic"},
      {"privacy.stages", "4", "staircase stages"},
      {"privacy.period", "0", "cyclic period (0: T/5)"},
      {"privacy.site", "per_example", "per_example | per_client_update"},
      {"privacy.reference_sigma", "0", "dynamic_dp: sigma0 = ceil(C * this / S1) when positive"},

      {"poison.kind", "none", "none | dirty_label | backdoor | clean_label"},
      {"poison.source", "1", "source class"},
      {"poison.target", "9", "target class"},
      {"poison.compromised_fraction", "0.1", "lambda"},
      {"poison.availability", "0.9", "alpha"},
      {"poison.window", "late", "early | middle | late | all | custom"},
      {"poison.window_start", "0", "custom window start round"},
      {"poison.window_end", "0", "custom window end round (exclusive)"},
      {"poison.poisoned_fraction", "0.5", "backdoor / clean-label shard share"},
      {"poison.blend", "0.3", "clean-label beta"},
      {"poison.trigger_size", "2", "backdoor square trigger side"},

      {"attack.targets", "10", "attacked examples"},
      {"attack.init", "random", "random | patterned4 | patterned16 | binary | color | exemplar"},
      {"attack.optimizer", "gd", "gd | adam"},
      {"attack.iters", "1000", "maximum attack iterations"},
      {"attack.lr", "1.0", "attack step size"},
      {"attack.threshold", "1e-10", "stop once D falls below this"},
      {"attack.clamp", "true", "project reconstructions onto [0,1]"},
      {"attack.success_mse", "0.4", "leak counts as successful below this MSE"},
      {"attack.batch", "1", "victim batch size"},
      {"attack.local_iters", "1", "victim local iterations before the update is shared"},
      {"attack.local_lr", "0.1", "victim local learning rate"},

      {"forensics.class", "1", "class slice"},
      {"forensics.window", "10", "temporal window W in rounds"},
      {"forensics.threshold", "0.5", "temporal flag threshold"},
      {"forensics.norm_rule", "false", "suspect cluster must carry the larger norms"},
      {"forensics.q", "0.1", "density filter band"},
      {"forensics.min_silhouette", "0", "withhold flags below this separation"},
      {"forensics.history", "0", "online history in rounds (0: all)"},
      {"forensics.removal", "false", "drop flagged updates during training"},
      {"forensics.trace", "", "detect: trace CSV (default <output>/trace.csv)"},

      {"sweep.key", "", "key iterated by sweep"},
      {"sweep.values", "", "comma-separated values"},
      {"sweep.command", "train", "train | leak | poison"},
  };
  return keys;
}

bool is_config_key(const std::string& key) {
  const auto& keys = config_vocabulary();
  return std::any_of(keys.begin(), keys.end(), [&](const ConfigKey& k) { return k.name == key; });
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

Config::Config() {
  for (const auto& k : config_vocabulary()) {
    if (k.name != "seed") values_[k.name] = k.default_value;
  }
}

Config Config::parse(const std::string& text, const std::string& origin) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq));
    if (!is_config_key(key)) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    cfg.values_[key] = trim(t.substr(eq + 1));
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  Config cfg = parse(buf.str(), path.string());
  if (cfg.raw("scenario").empty()) cfg.values_["scenario"] = path.stem().string();
  return cfg;
}

void Config::set(const std::string& key, const std::string& value) {
  if (!is_config_key(key)) throw ConfigError("unknown key '" + key + "'");
  values_[key] = trim(value);
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

bool Config::has(const std::string& key) const { return values_.count(key) != 0; }

const std::string& Config::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) {
    if (!is_config_key(key)) throw ConfigError("unknown key '" + key + "'");
    throw ConfigError("missing value for '" + key + "'");
  }
  return it->second;
}

std::string Config::str(const std::string& key) const { return raw(key); }

double Config::real(const std::string& key) const {
  const std::string& v = raw(key);
  char* end = nullptr;
  errno = 0;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno == ERANGE || !std::isfinite(d)) {
    throw ConfigError("invalid number for '" + key + "': '" + v + "'");
  }
  return d;
}

std::uint64_t Config::u64(const std::string& key) const {
  const std::string& v = raw(key);
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("invalid non-negative integer for '" + key + "': '" + v + "'");
  }
  errno = 0;
  const unsigned long long x = std::strtoull(v.c_str(), nullptr, 10);
  if (errno == ERANGE) throw ConfigError("integer out of range for '" + key + "'");
  return x;
}

std::size_t Config::count(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }

bool Config::flag(const std::string& key) const {
  const std::string& v = raw(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("invalid boolean for '" + key + "': '" + v + "'");
}

std::vector<std::string> Config::list(const std::string& key) const { return split(raw(key), ','); }

std::vector<std::size_t> Config::count_list(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& item : list(key)) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("invalid integer list for '" + key + "': '" + raw(key) + "'");
    }
    out.push_back(static_cast<std::size_t>(std::stoull(item)));
  }
  return out;
}

std::string Config::dump() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace fllab
