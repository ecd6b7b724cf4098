#pragma once
#include <map>
#include <string>
#include <vector>

#include "badiff/dataset.hpp"
#include "badiff/model.hpp"

namespace badiff {

struct LossWeights {
  double lambda_ent = 0.1;
  double lambda_cal = 1e-3;
  double lambda_stop = 1e-2;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;
};

struct TrainConfig {
  int iterations = 5000;
  int batch_size = 32;
  LossWeights weights;
  AdamConfig adam;
  uint64_t seed = 1;
  int checkpoint_every = 1000;
  bool refresh_labels = false;  // regenerate teacher labels halfway through
  // which budget the stop term is conditioned on: the label-cache budget
  // ("label") or the batch draw ("target")
  std::string stop_budget = "label";
};

struct PolicyRunConfig {
  double label_beta = 1.0;
  double label_gamma = 0.002;
  uint64_t label_seed = 1000;
  double threshold = 0.5;
};

// Flat key=value configuration with a fixed key set; every key has a
// documented default and unknown keys are rejected. Serialization is sorted,
// so parse -> serialize -> parse is stable.
class Config {
 public:
  Config();  // defaults

  static Config from_file(const std::string& path);
  static Config from_text(const std::string& text);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  int get_int(const std::string& key) const;
  uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  std::string serialize() const;

  DatasetSpec dataset_spec() const;
  ModelConfig model_config() const;
  TrainConfig train_config() const;
  PolicyRunConfig policy_run_config() const;

  static const std::map<std::string, std::string>& default_keys();

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace badiff
