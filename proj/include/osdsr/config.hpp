#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "osdsr/data.hpp"
#include "osdsr/dtsm.hpp"
#include "osdsr/losses.hpp"
#include "osdsr/owms.hpp"
#include "osdsr/pipeline.hpp"

namespace osdsr {

struct IniEntry {
  std::string key;
  std::string value;
  int line = 0;
};

struct IniSection {
  std::string name;
  int line = 0;
  std::vector<IniEntry> entries;
};

// `[section]` headers, `key = value` lines, full-line `#`/`;` comments. Keys
// outside a section are an error.
std::vector<IniSection> parse_ini(const std::string& text);

struct OptimConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
  std::optional<double> selector_lr;  // unset: shares run.lr
};

struct ModelConfig {
  std::string backbone = "toy";  // toy | identity
  std::uint64_t model_seed = 7;  // seeds the frozen "pretrained" weights
  ToyBackboneOptions toy;
  std::string provider = "toy";
  int provider_dim = 32;
  int provider_resolution = 32;
  std::string perceptual = "toy";  // toy | identity
};

struct LoraConfig {
  int rank = 16;
  double scaling = 1.0;
  std::vector<AdapterTarget> targets = {AdapterTarget::Encoder, AdapterTarget::Unet};
};

struct PathsConfig {
  std::string gt_dir;
  std::string manifest;
  std::string lr_dir;
  std::string sr_dir;
  std::string checkpoint;
  std::string out_dir = "out";
};

struct RunConfig {
  // [run]
  std::uint64_t seed = 0;
  int scale_factor = 4;
  double learning_rate = 5e-5;
  int batch_size = 2;
  long steps = 200;
  long checkpoint_every = 50;  // 0: final checkpoint only
  int synthetic_pairs = 16;    // used when no manifest is configured
  int eval_pairs = 4;          // held-out synthetic pairs for ablation metrics
  // [dtsm]
  CandidateSet candidates = CandidateSet::uniform_default();
  SelectorConfig selector;
  std::optional<int> fixed_t;  // t* when DTSM is disabled; unset means max(S)
  // [loss]
  LossWeights loss;
  // [attributes]: name = positive | negative, replacing or extending the defaults.
  std::vector<PerceptualAttribute> attribute_overrides;
  // [degrade]
  DegradationConfig degrade;
  int crop_size = 64;
  // [lora], [optim], [model], [paths]
  LoraConfig lora;
  OptimConfig optim;
  ModelConfig model;
  PathsConfig paths;

  void validate() const;
  int dtsm_fallback_t() const { return fixed_t.value_or(candidates.max()); }
};

// Throws Config naming the section and key for anything unknown or malformed.
void apply_setting(RunConfig& config, const std::string& section, const std::string& key, const std::string& value);
// "section.key=value".
void apply_override(RunConfig& config, const std::string& assignment);
RunConfig parse_run_config(const std::string& text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

// Canonical snapshot listing every key; parse_run_config(to_ini(c)) reproduces c.
std::string to_ini(const RunConfig& config);

AttributeRegistry make_registry(const RunConfig& config);
std::vector<AdapterSpec> adapter_specs(const RunConfig& config);

std::string trim(const std::string& s);
std::vector<std::string> split_list(const std::string& s, char sep = ',');

}  // namespace osdsr
