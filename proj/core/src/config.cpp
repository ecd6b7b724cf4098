#include "badiff/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "badiff/errors.hpp"

namespace badiff {

namespace {

std::vector<int> parse_int_list(const std::string& s, const char* key) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw format_error(std::string("config: bad integer list for ") + key);
    }
  }
  if (out.empty()) throw format_error(std::string("config: empty list for ") + key);
  return out;
}

std::vector<bool> parse_bool_list(const std::string& s, const char* key) {
  std::vector<bool> out;
  for (int v : parse_int_list(s, key)) out.push_back(v != 0);
  return out;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

const std::map<std::string, std::string>& Config::default_keys() {
  static const std::map<std::string, std::string> defaults = {
      // procedural dataset
      {"data.count", "128"},
      {"data.size", "16"},
      {"data.complexity", "0.5"},
      {"data.seed", "1"},
      // model: denoiser
      {"model.levels", "32,64"},
      {"model.blocks_per_level", "2"},
      {"model.time_embed_dim", "64"},
      {"model.entropy_embed_dim", "128"},
      {"model.groups", "8"},
      {"model.attention", "0,0"},
      {"model.image_size", "16"},
      {"model.init_seed", "1"},
      {"model.embed_hidden", "128"},
      // model: schedule and budget range
      {"model.steps", "200"},
      {"model.beta_start", "0.0005"},
      {"model.beta_end", "0.1"},
      {"model.budget_min", "0.2"},
      {"model.budget_max", "2.0"},
      // model: entropy predictor
      {"model.entropy.hyper_channels", "16"},
      {"model.entropy.hyper_latent_channels", "8"},
      {"model.entropy.context_channels", "16"},
      {"model.entropy.fuse_channels", "32"},
      {"model.entropy.soft_bin_tau", "0.05"},
      // model: stop policy head
      {"model.policy.hidden", "256,128"},
      // training
      {"train.iterations", "5000"},
      {"train.batch", "32"},
      {"train.lr", "0.0001"},
      {"train.beta1", "0.9"},
      {"train.beta2", "0.999"},
      {"train.adam_eps", "1e-08"},
      {"train.clip_norm", "1.0"},
      {"train.lambda_ent", "0.1"},
      {"train.lambda_cal", "0.001"},
      {"train.lambda_stop", "0.01"},
      {"train.seed", "1"},
      {"train.checkpoint_every", "1000"},
      {"train.refresh_labels", "0"},
      {"train.stop_budget", "label"},
      // offline teacher labels and adaptive sampling
      {"policy.label_beta", "1.0"},
      {"policy.label_gamma", "0.002"},
      {"policy.label_seed", "1000"},
      {"policy.threshold", "0.5"},
  };
  return defaults;
}

Config::Config() : values_(default_keys()) {}

Config Config::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw format_error("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

Config Config::from_text(const std::string& text) {
  Config cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw format_error("config line " + std::to_string(lineno) + ": expected key = value");
    }
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

void Config::set(const std::string& key, const std::string& value) {
  if (!default_keys().count(key)) {
    throw format_error("config: unknown key '" + key + "'");
  }
  values_[key] = value;
}

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw format_error("config: unknown key '" + key + "'");
  return it->second;
}

double Config::get_double(const std::string& key) const {
  try {
    return std::stod(get(key));
  } catch (const std::exception&) {
    throw format_error("config: bad number for '" + key + "'");
  }
}

int Config::get_int(const std::string& key) const {
  try {
    return std::stoi(get(key));
  } catch (const std::exception&) {
    throw format_error("config: bad integer for '" + key + "'");
  }
}

uint64_t Config::get_u64(const std::string& key) const {
  try {
    return std::stoull(get(key));
  } catch (const std::exception&) {
    throw format_error("config: bad integer for '" + key + "'");
  }
}

bool Config::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw format_error("config: bad boolean for '" + key + "'");
}

std::string Config::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) {  // std::map: sorted, stable
    out += k;
    out += " = ";
    out += v;
    out += "\n";
  }
  return out;
}

DatasetSpec Config::dataset_spec() const {
  DatasetSpec spec;
  spec.count = get_int("data.count");
  spec.size = get_int("data.size");
  spec.complexity = get_double("data.complexity");
  spec.seed = get_u64("data.seed");
  return spec;
}

ModelConfig Config::model_config() const {
  ModelConfig cfg;
  cfg.denoiser.levels = parse_int_list(get("model.levels"), "model.levels");
  cfg.denoiser.blocks_per_level = get_int("model.blocks_per_level");
  cfg.denoiser.time_embed_dim = get_int("model.time_embed_dim");
  cfg.denoiser.entropy_embed_dim = get_int("model.entropy_embed_dim");
  cfg.denoiser.groups = get_int("model.groups");
  cfg.denoiser.attention = parse_bool_list(get("model.attention"), "model.attention");
  cfg.entropy.hyper_channels = get_int("model.entropy.hyper_channels");
  cfg.entropy.hyper_latent_channels = get_int("model.entropy.hyper_latent_channels");
  cfg.entropy.context_channels = get_int("model.entropy.context_channels");
  cfg.entropy.fuse_channels = get_int("model.entropy.fuse_channels");
  cfg.entropy.soft_bin_tau = get_double("model.entropy.soft_bin_tau");
  cfg.policy.hidden = parse_int_list(get("model.policy.hidden"), "model.policy.hidden");
  cfg.schedule_steps = get_int("model.steps");
  cfg.beta_start = get_double("model.beta_start");
  cfg.beta_end = get_double("model.beta_end");
  cfg.budget.lo = get_double("model.budget_min");
  cfg.budget.hi = get_double("model.budget_max");
  cfg.embed_hidden = get_int("model.embed_hidden");
  cfg.image_size = get_int("model.image_size");
  cfg.init_seed = get_u64("model.init_seed");
  return cfg;
}

TrainConfig Config::train_config() const {
  TrainConfig cfg;
  cfg.iterations = get_int("train.iterations");
  cfg.batch_size = get_int("train.batch");
  cfg.adam.lr = get_double("train.lr");
  cfg.adam.beta1 = get_double("train.beta1");
  cfg.adam.beta2 = get_double("train.beta2");
  cfg.adam.eps = get_double("train.adam_eps");
  cfg.adam.clip_norm = get_double("train.clip_norm");
  cfg.weights.lambda_ent = get_double("train.lambda_ent");
  cfg.weights.lambda_cal = get_double("train.lambda_cal");
  cfg.weights.lambda_stop = get_double("train.lambda_stop");
  cfg.seed = get_u64("train.seed");
  cfg.checkpoint_every = get_int("train.checkpoint_every");
  cfg.refresh_labels = get_bool("train.refresh_labels");
  cfg.stop_budget = get("train.stop_budget");
  if (cfg.stop_budget != "label" && cfg.stop_budget != "target") {
    throw format_error("config: train.stop_budget must be 'label' or 'target'");
  }
  if (cfg.batch_size < 1) throw format_error("config: train.batch must be >= 1");
  if (cfg.weights.lambda_ent < 0 || cfg.weights.lambda_cal < 0 ||
      cfg.weights.lambda_stop < 0) {
    throw format_error("config: loss weights must be non-negative");
  }
  return cfg;
}

PolicyRunConfig Config::policy_run_config() const {
  PolicyRunConfig cfg;
  cfg.label_beta = get_double("policy.label_beta");
  cfg.label_gamma = get_double("policy.label_gamma");
  cfg.label_seed = get_u64("policy.label_seed");
  cfg.threshold = get_double("policy.threshold");
  return cfg;
}

}  // namespace badiff
