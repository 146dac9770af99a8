#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "osdsr/archive.hpp"
#include "osdsr/config.hpp"
#include "osdsr/data.hpp"
#include "osdsr/evalmetrics.hpp"
#include "osdsr/losses.hpp"
#include "osdsr/owms.hpp"
#include "osdsr/pipeline.hpp"

namespace osdsr {

// ------------------------------------------------------------------ optimizer

struct AdamWConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 0.0;  // global L2 norm over all parameters; 0 disables
};

// Decoupled weight decay: p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps).
// Parameters without a gradient are treated as having a zero gradient.
class AdamW {
 public:
  AdamW() = default;
  // `lr_scale[i]` multiplies the base lr for parameter i; empty means all 1.
  AdamW(nn::ParameterList params, AdamWConfig config, std::vector<double> lr_scale = {});

  void step();
  void zero_grad();
  long steps() const noexcept { return t_; }
  double last_grad_norm() const noexcept { return last_norm_; }
  const nn::ParameterList& parameters() const noexcept { return params_; }
  const AdamWConfig& config() const noexcept { return config_; }

  // "adamw/t", "adamw/m/<name>", "adamw/v/<name>".
  ArchiveEntries state_entries() const;
  void load_state(const ArchiveEntries& entries);

 private:
  nn::ParameterList params_;
  AdamWConfig config_;
  std::vector<double> lr_scale_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
  double last_norm_ = 0.0;
};

// ------------------------------------------------------------------ ablation

struct AblationSpec {
  std::string name = "Full";
  bool enable_dtsm = true;
  bool enable_id_sal = true;
  bool enable_td_pal = true;
  std::vector<std::string> excluded_attributes;
};

// w/o DTSM, w/o ID-SAL, w/o TD-PAL, Full.
std::vector<AblationSpec> component_ablation_variants();
// One "w/o <name>" per attribute, then "All".
std::vector<AblationSpec> attribute_ablation_variants(const AttributeRegistry& registry);

// `[variant <name>]` sections with keys dtsm, id_sal, td_pal (booleans) and
// exclude (comma-separated attribute names).
std::vector<AblationSpec> parse_variants(const std::string& text);
std::string format_variants(const std::vector<AblationSpec>& variants);
// A file path, or one of the presets "components" / "attributes".
std::vector<AblationSpec> load_variants(const std::string& path_or_preset, const RunConfig& config);

// ------------------------------------------------------------------ training

struct TrainModel {
  BackboneBundle bundle;
  TimestepSelector selector;
  DiffusionSchedule schedule;
  std::shared_ptr<const EmbeddingProvider> provider;
  std::shared_ptr<const FeatureExtractor> extractor;
  AttributeRegistry registry;  // exclusions applied
  std::shared_ptr<TextEmbeddingCache> cache;
};

// Seeded from model_seed, like the rest of the frozen stack.
std::shared_ptr<const FeatureExtractor> make_feature_extractor(const ModelConfig& model);

// Frozen backbone/provider/extractor from model_seed; adapters and selector
// from the run seed.
TrainModel build_model(const RunConfig& config, const AblationSpec& ablation = {});
// Adapter factors followed by selector parameters. Throws Config when any
// other backbone parameter is trainable.
nn::ParameterList trainable_parameters(const TrainModel& model);

struct TrainState {
  long step = 0;  // steps completed
  AdamW optimizer;
  std::vector<LossReport> history;
};

TrainState init_state(const TrainModel& model, const RunConfig& config);

// Batch for step k: a per-epoch permutation of the pairs, derived from the seed.
PairSample batch_for_step(const std::vector<PairSample>& pairs, long step, int batch_size, std::uint64_t seed);

struct Objective {
  ag::Var total;  // undefined when every weighted term is disabled
  LossReport report;
};

// Forward pass and weighted loss for training step `step`, without the update.
Objective training_objective(const TrainModel& model, const PairSample& batch, const RunConfig& config,
                             const AblationSpec& ablation, long step);

// One forward/backward/update. Randomness comes from a generator seeded with
// (seed, step), so no generator state needs saving. Throws Numeric with the
// per-term report when the loss is not finite.
LossReport train_step(TrainState& state, const TrainModel& model, const PairSample& batch, const RunConfig& config,
                      const AblationSpec& ablation);

struct TrainResult {
  std::filesystem::path checkpoint;  // <out>/final
  std::vector<LossReport> history;
  TrainModel model;
};

// Writes <out>/config.ini, <out>/loss.csv, <out>/checkpoints/step_<k>/ every
// checkpoint_every steps, and <out>/final/. A checkpoint directory holds the
// pipeline files plus optimizer.bin and ablation.ini. `resume_from` continues
// from such a directory up to config.steps.
TrainResult run_training(const RunConfig& config, const AblationSpec& ablation, const std::vector<PairSample>& pairs,
                         const std::filesystem::path& out_dir,
                         const std::optional<std::filesystem::path>& resume_from = std::nullopt);

// Training pairs named by config.paths.manifest, or synthetic ones otherwise.
std::vector<PairSample> training_pairs(const RunConfig& config);
std::vector<PairSample> held_out_pairs(const RunConfig& config);

std::string format_loss_csv(const std::vector<LossReport>& history);

// Rebuilds the model stored in a checkpoint directory.
TrainModel load_trained_model(const std::filesystem::path& checkpoint, RunConfig* config_out = nullptr,
                              AblationSpec* ablation_out = nullptr);

// Deterministic inference (argmax selection, or the fallback t* when DTSM is off).
SRResult infer(const TrainModel& model, const RunConfig& config, const AblationSpec& ablation, const ImageBatch& lr);

// ------------------------------------------------------------------ ablation suite

struct AblationRow {
  AblationSpec spec;
  bool ok = false;
  std::string error;
  double psnr_y = 0.0;
  double ssim_y = 0.0;
  double perceptual = 0.0;
  double final_total = 0.0;
};

struct AblationTable {
  std::vector<std::string> attribute_names;  // flag columns, base registry order
  std::vector<AblationRow> rows;
};

// Trains every variant with the same seed and data, evaluates on `eval_pairs`.
// A failing variant yields a row with ok == false; the others still run.
AblationTable run_ablation_suite(const RunConfig& base, const std::vector<AblationSpec>& variants,
                                 const std::vector<PairSample>& train_pairs, const std::vector<PairSample>& eval_pairs,
                                 const std::filesystem::path& out_dir);

// variant,dtsm,id_sal,td_pal,<attribute flags...>,psnr_y,ssim_y,perceptual,final_total,status
std::string format_ablation_csv(const AblationTable& table);

}  // namespace osdsr
