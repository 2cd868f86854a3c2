#include "hvi/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hvi/error.hpp"

namespace hvi {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return x;
}

int to_int32(const std::string& key, const std::string& v) { return static_cast<int>(to_int(key, v)); }

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& item : split(v, ',')) out.push_back(to_int32(key, item));
  return out;
}

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& source) {
  KeyValues kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, trim(t.substr(eq + 1))).second)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": repeated key '" + key + "'");
  }
  return kv;
}

KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path);
}

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"toy-laplace", "snr",           "vae-train",
                                              "vae-eval",    "bounds-check", "jackknife-study"};
  return names;
}

ExperimentConfig ExperimentConfig::defaults(const std::string& experiment) {
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), experiment) == names.end())
    throw ConfigError("unknown experiment '" + experiment + "'");
  ExperimentConfig c;
  c.experiment = experiment;
  if (experiment == "toy-laplace") {
    c.K = 10;
    c.k_list = {10};
    c.dim = 50;
    c.hidden = {128, 128, 128};
    c.steps = 2000;
    c.batch_size = 16;
    c.learning_rate = 1e-3;
    c.replicates = 10;
    c.eval_every = 500;
    c.eval_batch = 1000;
  } else if (experiment == "snr") {
    c.K = 0;
    c.k_list = {1, 8, 64};
    c.dim = 10;
    c.steps = 1000;
    c.batch_size = 100;
    c.learning_rate = 1e-2;
    c.amsgrad = true;
    c.replicates = 1000;
  } else if (experiment == "vae-train") {
    c.k_schedule = {{0, 0}, {10, 2}, {25, 5}};
    c.hidden = {64, 64};
    c.epochs = 50;
    c.batch_size = 100;
    c.learning_rate = 1e-3;
    c.subset_size = 2000;
  } else if (experiment == "vae-eval") {
    c.hidden = {64, 64};
    c.k_list = {0, 4, 16};
    c.m_list = {100};
    c.eval_runs = 10;
    c.eval_subset = 100;
    c.subset_size = 2000;
    c.variants = {"DIWHVI_EVAL"};
    c.batch_size = 100;
  } else if (experiment == "bounds-check") {
    c.k_list = {0, 1, 2, 3, 4};
    c.models = 50;
    c.replicates = 20000;
  } else if (experiment == "jackknife-study") {
    c.k_list = {3, 4, 5};
    c.J = 1;
    c.models = 50;
  }
  return c;
}

void ExperimentConfig::apply(const KeyValues& kv) {
  for (const auto& [key, v] : kv) {
    if (key == "experiment") {
      if (v != experiment) throw ConfigError("config is for '" + v + "', running '" + experiment + "'");
    } else if (key == "seed") {
      const long long s = to_int(key, v);
      if (s < 0) throw ConfigError("seed must be nonnegative");
      seed = static_cast<std::uint64_t>(s);
    } else if (key == "K") {
      K = to_int32(key, v);
      k_list = {K};
    } else if (key == "M") {
      M = to_int32(key, v);
      m_list = {M};
    } else if (key == "L") L = to_int32(key, v);
    else if (key == "J") J = to_int32(key, v);
    else if (key == "replicates") replicates = to_int32(key, v);
    else if (key == "k_list") k_list = to_int_list(key, v);
    else if (key == "m_list") m_list = to_int_list(key, v);
    else if (key == "learning_rate") learning_rate = to_double(key, v);
    else if (key == "beta1") beta1 = to_double(key, v);
    else if (key == "beta2") beta2 = to_double(key, v);
    else if (key == "amsgrad") amsgrad = to_bool(key, v);
    else if (key == "batch_size") batch_size = to_int32(key, v);
    else if (key == "epochs") epochs = to_int32(key, v);
    else if (key == "steps") steps = to_int32(key, v);
    else if (key == "lr_anneal_factor") lr_anneal_factor = to_double(key, v);
    else if (key == "lr_anneal_period") lr_anneal_period = to_int32(key, v);
    else if (key == "k_schedule") {
      // "0:0, 10:2, 25:5"
      k_schedule.clear();
      for (const auto& item : split(v, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw ConfigError("k_schedule: expected epoch:K pairs, got '" + item + "'");
        k_schedule.emplace_back(to_int32(key, trim(item.substr(0, colon))), to_int32(key, trim(item.substr(colon + 1))));
      }
    } else if (key == "warmup_inner") warmup_inner = to_int32(key, v);
    else if (key == "warmup_outer") warmup_outer = to_int32(key, v);
    else if (key == "estimator") estimator = v;
    else if (key == "data_path") data_path = v;
    else if (key == "subset_size") subset_size = to_int32(key, v);
    else if (key == "binarization") binarization = v;
    else if (key == "output") output = v;
    else if (key == "checkpoint") checkpoint = v;
    else if (key == "dim") dim = to_int32(key, v);
    else if (key == "hidden") hidden = to_int_list(key, v);
    else if (key == "eval_every") eval_every = to_int32(key, v);
    else if (key == "eval_batch") eval_batch = to_int32(key, v);
    else if (key == "eval_runs") eval_runs = to_int32(key, v);
    else if (key == "eval_subset") eval_subset = to_int32(key, v);
    else if (key == "tau_refit_epochs") tau_refit_epochs = to_int32(key, v);
    else if (key == "psi_gate") psi_gate = to_bool(key, v);
    else if (key == "tau_gate") tau_gate = to_bool(key, v);
    else if (key == "bootstrap") bootstrap = to_int32(key, v);
    else if (key == "models") models = to_int32(key, v);
    else if (key == "variants") variants = split(v, ',');
    else throw ConfigError("unknown config key '" + key + "'");
  }
}

void ExperimentConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(K >= 0, "K must be nonnegative");
  need(M >= 1, "M must be at least 1");
  need(L >= 1, "L must be at least 1");
  need(J >= 0, "J must be nonnegative");
  need(replicates >= 1, "replicates must be positive");
  for (int k : k_list) need(k >= 0, "k_list entries must be nonnegative");
  for (int m : m_list) need(m >= 1, "m_list entries must be at least 1");
  need(learning_rate > 0.0, "learning_rate must be positive");
  need(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "Adam betas must lie in [0, 1)");
  need(batch_size >= 1, "batch_size must be positive");
  need(epochs >= 0 && steps >= 0, "epochs and steps must be nonnegative");
  need(lr_anneal_factor >= 0.0 && lr_anneal_period > 0, "bad learning-rate annealing");
  for (std::size_t i = 1; i < k_schedule.size(); ++i)
    need(k_schedule[i].first > k_schedule[i - 1].first, "k_schedule epochs must be strictly increasing");
  for (const auto& [e, k] : k_schedule) need(e >= 0 && k >= 0, "k_schedule entries must be nonnegative");
  need(warmup_inner >= 0 && warmup_outer >= 0, "warm-up spans must be nonnegative");
  need(estimator == "autodiff" || estimator == "dreg", "estimator must be autodiff or dreg");
  need(binarization == "dynamic" || binarization == "fixed", "binarization must be dynamic or fixed");
  need(subset_size >= 10, "subset_size must be at least 10");
  need(dim >= 1, "dim must be positive");
  for (int h : hidden) need(h >= 1, "hidden sizes must be positive");
  need(eval_every >= 1 && eval_batch >= 1 && eval_runs >= 1 && eval_subset >= 1, "evaluation sizes must be positive");
  need(tau_refit_epochs >= 0, "tau_refit_epochs must be nonnegative");
  need(bootstrap >= 0 && models >= 1, "bootstrap and models must be positive");
}

int ExperimentConfig::k_at_epoch(int epoch) const {
  int k = K;
  for (const auto& [start, kk] : k_schedule)
    if (epoch >= start) k = kk;
  return k;
}

double ExperimentConfig::lr_at_epoch(int epoch) const {
  if (lr_anneal_factor <= 0.0) return learning_rate;
  return learning_rate * std::pow(lr_anneal_factor, static_cast<double>(epoch) / lr_anneal_period);
}

double warmup_weight(int epoch, int span) {
  if (span <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(epoch) / static_cast<double>(span));
}

}  // namespace hvi
