#include "osdsr/trainer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "osdsr/error.hpp"

namespace fs = std::filesystem;

namespace osdsr {

namespace {

// Independent streams derived from the run seed.
constexpr std::uint64_t kStepStream = 0x5354455053545245ULL;
constexpr std::uint64_t kShuffleStream = 0x53485546464C4531ULL;
constexpr std::uint64_t kAdapterStream = 0x41444150544F5231ULL;
constexpr std::uint64_t kSelectorStream = 0x53454C4543544F52ULL;
constexpr std::uint64_t kDataStream = 0x5452414944415441ULL;
constexpr std::uint64_t kEvalStream = 0x4556414C44415441ULL;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
}

}  // namespace

// ------------------------------------------------------------------ AdamW

AdamW::AdamW(nn::ParameterList params, AdamWConfig config, std::vector<double> lr_scale)
    : params_(std::move(params)), config_(config), lr_scale_(std::move(lr_scale)) {
  if (!(config_.lr > 0.0)) throw Error(ErrorKind::InvalidRange, "AdamW lr must be > 0");
  if (lr_scale_.empty()) lr_scale_.assign(params_.size(), 1.0);
  if (lr_scale_.size() != params_.size()) throw Error(ErrorKind::ShapeMismatch, "one lr scale per parameter");
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros_like(p.var.value()));
    v_.push_back(Tensor::zeros_like(p.var.value()));
  }
}

void AdamW::step() {
  ++t_;
  double sq = 0.0;
  for (const auto& p : params_) {
    if (!p.var.has_grad()) continue;
    for (double g : p.var.grad().data()) sq += g * g;
  }
  last_norm_ = std::sqrt(sq);
  const double clip = config_.grad_clip > 0.0 && last_norm_ > config_.grad_clip ? config_.grad_clip / last_norm_ : 1.0;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ag::Var var = params_[i].var;
    Tensor& w = var.mutable_value();
    const bool has = var.has_grad();
    const double lr = config_.lr * lr_scale_[i];
    double* m = m_[i].ptr();
    double* v = v_[i].ptr();
    for (std::size_t j = 0; j < w.numel(); ++j) {
      const double g = has ? var.grad()[j] * clip : 0.0;
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
      w[j] *= 1.0 - lr * config_.weight_decay;
      w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + config_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

ArchiveEntries AdamW::state_entries() const {
  ArchiveEntries out;
  out.emplace_back("adamw/t", Tensor::scalar(static_cast<double>(t_)));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back("adamw/m/" + params_[i].name, m_[i]);
    out.emplace_back("adamw/v/" + params_[i].name, v_[i]);
  }
  return out;
}

void AdamW::load_state(const ArchiveEntries& entries) {
  const Tensor* t = find_entry(entries, "adamw/t");
  if (!t) throw Error(ErrorKind::Missing, "optimizer state lacks adamw/t");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    for (auto [prefix, dst] : {std::pair{"adamw/m/", &m_[i]}, std::pair{"adamw/v/", &v_[i]}}) {
      const Tensor* src = find_entry(entries, prefix + params_[i].name);
      if (!src) throw Error(ErrorKind::Missing, std::string("optimizer state lacks ") + prefix + params_[i].name);
      if (!src->same_shape(*dst)) throw Error(ErrorKind::ShapeMismatch, "optimizer state shape for " + params_[i].name);
      *dst = *src;
    }
  }
  t_ = static_cast<long>((*t)[0]);
}

// ------------------------------------------------------------------ ablation specs

std::vector<AblationSpec> component_ablation_variants() {
  return {
      {"w/o DTSM", false, true, true, {}},
      {"w/o ID-SAL", true, false, true, {}},
      {"w/o TD-PAL", true, true, false, {}},
      {"Full", true, true, true, {}},
  };
}

std::vector<AblationSpec> attribute_ablation_variants(const AttributeRegistry& registry) {
  std::vector<AblationSpec> out;
  for (const auto& a : registry.attributes()) out.push_back({"w/o " + a.name, true, true, true, {a.name}});
  out.push_back({"All", true, true, true, {}});
  return out;
}

std::vector<AblationSpec> parse_variants(const std::string& text) {
  std::vector<AblationSpec> out;
  for (const auto& sec : parse_ini(text)) {
    if (sec.name.rfind("variant ", 0) != 0 || trim(sec.name.substr(8)).empty()) {
      throw Error(ErrorKind::Config, "line " + std::to_string(sec.line) + ": expected [variant <name>], got [" +
                                         sec.name + "]");
    }
    AblationSpec spec;
    spec.name = trim(sec.name.substr(8));
    for (const auto& v : out) {
      if (v.name == spec.name) throw Error(ErrorKind::Config, "duplicate variant '" + spec.name + "'");
    }
    for (const auto& e : sec.entries) {
      auto flag = [&](bool& dst) {
        if (e.value == "on" || e.value == "true" || e.value == "1") {
          dst = true;
        } else if (e.value == "off" || e.value == "false" || e.value == "0") {
          dst = false;
        } else {
          throw Error(ErrorKind::Config, "line " + std::to_string(e.line) + ": " + e.key + " expects on/off");
        }
      };
      if (e.key == "dtsm") {
        flag(spec.enable_dtsm);
      } else if (e.key == "id_sal") {
        flag(spec.enable_id_sal);
      } else if (e.key == "td_pal") {
        flag(spec.enable_td_pal);
      } else if (e.key == "exclude") {
        spec.excluded_attributes = split_list(e.value);
      } else {
        throw Error(ErrorKind::Config, "line " + std::to_string(e.line) + ": unknown key '" + e.key +
                                           "' in [variant " + spec.name + "]");
      }
    }
    out.push_back(std::move(spec));
  }
  if (out.empty()) throw Error(ErrorKind::Config, "no [variant ...] sections");
  return out;
}

std::string format_variants(const std::vector<AblationSpec>& variants) {
  std::string out;
  for (const auto& v : variants) {
    if (!out.empty()) out += "\n";
    out += "[variant " + v.name + "]\n";
    out += std::string("dtsm = ") + (v.enable_dtsm ? "on" : "off") + "\n";
    out += std::string("id_sal = ") + (v.enable_id_sal ? "on" : "off") + "\n";
    out += std::string("td_pal = ") + (v.enable_td_pal ? "on" : "off") + "\n";
    std::string ex;
    for (std::size_t i = 0; i < v.excluded_attributes.size(); ++i) ex += (i ? ", " : "") + v.excluded_attributes[i];
    out += "exclude = " + ex + "\n";
  }
  return out;
}

std::vector<AblationSpec> load_variants(const std::string& path_or_preset, const RunConfig& config) {
  if (path_or_preset == "components") return component_ablation_variants();
  if (path_or_preset == "attributes") return attribute_ablation_variants(make_registry(config));
  return parse_variants(read_text(path_or_preset));
}

// ------------------------------------------------------------------ model

std::shared_ptr<const FeatureExtractor> make_feature_extractor(const ModelConfig& model) {
  if (model.perceptual == "toy") return std::make_shared<ToyFeatureExtractor>(derive_sample_seed(model.model_seed, 2));
  return std::make_shared<IdentityFeatureExtractor>();
}

TrainModel build_model(const RunConfig& config, const AblationSpec& ablation) {
  config.validate();
  BackboneBundle base = config.model.backbone == "toy"
                            ? make_toy_backbone(config.model.model_seed, config.model.toy)
                            : make_identity_backbone(config.model.toy.identity_prior, config.model.toy.time_embedding_dim);
  return TrainModel{
      apply_adapters(base, adapter_specs(config), derive_sample_seed(config.seed ^ kAdapterStream, 0)),
      TimestepSelector(config.candidates, config.selector, derive_sample_seed(config.seed ^ kSelectorStream, 0)),
      default_schedule(),
      std::make_shared<ToyEmbeddingProvider>(derive_sample_seed(config.model.model_seed, 1), config.model.provider_dim,
                                             config.model.provider_resolution),
      make_feature_extractor(config.model),
      make_registry(config).without(ablation.excluded_attributes),
      std::make_shared<TextEmbeddingCache>(),
  };
}

nn::ParameterList trainable_parameters(const TrainModel& model) {
  const nn::ParameterList adapters = adapter_parameters(model.bundle);
  const nn::ParameterList trainable = nn::trainable_only(model.bundle.parameters());
  if (trainable.size() != adapters.size()) {
    throw Error(ErrorKind::Config, "backbone has trainable parameters other than adapter factors");
  }
  nn::ParameterList out = adapters;
  for (const auto& p : model.selector.parameters()) out.push_back(p);
  return out;
}

TrainState init_state(const TrainModel& model, const RunConfig& config) {
  AdamWConfig oc{config.learning_rate, config.optim.beta1, config.optim.beta2, config.optim.eps,
                 config.optim.weight_decay, config.optim.grad_clip};
  nn::ParameterList params = trainable_parameters(model);
  std::vector<double> scale(params.size(), 1.0);
  if (config.optim.selector_lr) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].name.rfind("selector", 0) == 0) scale[i] = *config.optim.selector_lr / config.learning_rate;
    }
  }
  TrainState st;
  st.optimizer = AdamW(std::move(params), oc, std::move(scale));
  return st;
}

PairSample batch_for_step(const std::vector<PairSample>& pairs, long step, int batch_size, std::uint64_t seed) {
  if (pairs.empty()) throw Error(ErrorKind::InvalidRange, "no training pairs");
  const std::size_t n = pairs.size();
  std::vector<PairSample> picked;
  long cached_epoch = -1;
  std::vector<std::size_t> perm;
  for (int j = 0; j < batch_size; ++j) {
    const std::size_t pos = static_cast<std::size_t>(step) * static_cast<std::size_t>(batch_size) + j;
    const long epoch = static_cast<long>(pos / n);
    if (epoch != cached_epoch) {
      perm.resize(n);
      for (std::size_t i = 0; i < n; ++i) perm[i] = i;
      Rng rng(derive_sample_seed(seed ^ kShuffleStream, static_cast<std::uint64_t>(epoch)));
      for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
      cached_epoch = epoch;
    }
    picked.push_back(pairs[perm[pos % n]]);
  }
  return stack_pairs(picked);
}

Objective training_objective(const TrainModel& model, const PairSample& batch, const RunConfig& config,
                             const AblationSpec& ablation, long step) {
  Rng rng(derive_sample_seed(config.seed ^ kStepStream, static_cast<std::uint64_t>(step)));
  std::optional<int> fixed;
  if (!ablation.enable_dtsm) fixed = config.dtsm_fallback_t();
  SRForward fwd = forward_super_resolve(model.bundle, model.schedule, model.selector, batch.lr, config.scale_factor,
                                        Mode::Train, &rng, fixed, model.selector.config().temperature_at(step));
  if (!fwd.image.value().same_shape(batch.gt.tensor())) {
    throw Error(ErrorKind::ShapeMismatch, "SR output " + shape_str(fwd.image.shape()) + " vs GT " +
                                              shape_str(batch.gt.tensor().shape()) +
                                              "; scale_factor must match the degradation downscale");
  }
  const ag::Var gt = ag::constant(batch.gt.tensor());

  LossWeights w = config.loss;
  if (!ablation.enable_td_pal) w.lambda3 = 0.0;
  if (!ablation.enable_id_sal) w.lambda4 = 0.0;

  const ag::Var mse = mse_loss(fwd.image, gt);
  const ag::Var perc = perceptual_distance(fwd.image, gt, *model.extractor);
  ag::Var td, id;
  if (ablation.enable_td_pal || ablation.enable_id_sal) {
    const ag::Var e_sr = embed_images(fwd.image, *model.provider);
    if (ablation.enable_td_pal) td = td_pal_from_embedding(e_sr, model.registry, *model.provider, model.cache.get());
    if (ablation.enable_id_sal) id = id_sal_from_embeddings(e_sr, embed_images(gt, *model.provider));
  }
  const LossTerms terms{mse.item(), perc.item(), td.defined() ? td.item() : 0.0, id.defined() ? id.item() : 0.0};
  Objective out;
  try {
    out.report = total_loss(terms, w);
  } catch (const Error& e) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "step %ld: %s (mse=%g perceptual=%g td_pal=%g id_sal=%g)", step + 1, e.what(),
                  terms.mse, terms.perceptual, terms.td_pal, terms.id_sal);
    throw Error(ErrorKind::Numeric, buf);
  }

  auto accumulate = [&](const ag::Var& term, double weight) {
    if (!term.defined() || weight == 0.0) return;
    ag::Var t = ag::scale(term, weight);
    out.total = out.total.defined() ? ag::add(out.total, t) : t;
  };
  accumulate(mse, w.lambda1);
  accumulate(perc, w.lambda2);
  accumulate(td, w.lambda3);
  accumulate(id, w.lambda4);
  return out;
}

LossReport train_step(TrainState& state, const TrainModel& model, const PairSample& batch, const RunConfig& config,
                      const AblationSpec& ablation) {
  const Objective obj = training_objective(model, batch, config, ablation, state.step);
  if (obj.total.defined() && obj.total.requires_grad()) ag::backward(obj.total);
  state.optimizer.step();
  state.optimizer.zero_grad();
  ++state.step;
  state.history.push_back(obj.report);
  return obj.report;
}

std::string format_loss_csv(const std::vector<LossReport>& history) {
  std::string out = loss_csv_header() + "\n";
  for (std::size_t i = 0; i < history.size(); ++i) out += format_loss_row(static_cast<long>(i + 1), history[i]) + "\n";
  return out;
}

namespace {

void save_training_checkpoint(const fs::path& dir, const TrainModel& model, const TrainState& state,
                              const RunConfig& config, const AblationSpec& ablation) {
  save_checkpoint(dir, model.bundle, model.selector, to_ini(config), model.schedule);
  ArchiveEntries entries = state.optimizer.state_entries();
  entries.emplace_back("train/step", Tensor::scalar(static_cast<double>(state.step)));
  Tensor hist({static_cast<int>(state.history.size()), 5});
  for (std::size_t i = 0; i < state.history.size(); ++i) {
    const auto& r = state.history[i];
    const double row[5] = {r.mse, r.perceptual, r.td_pal, r.id_sal, r.total};
    std::copy(row, row + 5, hist.ptr() + i * 5);
  }
  entries.emplace_back("train/history", std::move(hist));
  save_archive(dir / "optimizer.bin", entries);
  write_text(dir / "ablation.ini", format_variants({ablation}));
}

void restore_training_state(const fs::path& dir, const TrainModel& model, TrainState& state) {
  load_checkpoint_parameters(dir, model.bundle, model.selector);
  const ArchiveEntries entries = load_archive(dir / "optimizer.bin");
  state.optimizer.load_state(entries);
  const Tensor* step = find_entry(entries, "train/step");
  const Tensor* hist = find_entry(entries, "train/history");
  if (!step || !hist) throw Error(ErrorKind::Missing, "checkpoint " + dir.string() + " lacks trainer state");
  state.step = static_cast<long>((*step)[0]);
  state.history.clear();
  const int n = hist->rank() == 2 ? hist->dim(0) : 0;
  for (int i = 0; i < n; ++i) {
    const double* r = hist->ptr() + static_cast<std::size_t>(i) * 5;
    state.history.push_back({r[0], r[1], r[2], r[3], r[4]});
  }
}

}  // namespace

TrainResult run_training(const RunConfig& config, const AblationSpec& ablation, const std::vector<PairSample>& pairs,
                         const fs::path& out_dir, const std::optional<fs::path>& resume_from) {
  config.validate();
  if (pairs.empty()) throw Error(ErrorKind::InvalidRange, "training needs at least one pair");
  TrainModel model = build_model(config, ablation);
  TrainState state = init_state(model, config);
  if (resume_from) restore_training_state(*resume_from, model, state);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + out_dir.string() + ": " + ec.message());
  write_text(out_dir / "config.ini", to_ini(config));
  write_text(out_dir / "ablation.ini", format_variants({ablation}));

  while (state.step < config.steps) {
    const PairSample batch = batch_for_step(pairs, state.step, config.batch_size, config.seed);
    train_step(state, model, batch, config, ablation);
    if (config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0 && state.step < config.steps) {
      char name[32];
      std::snprintf(name, sizeof(name), "step_%06ld", state.step);
      save_training_checkpoint(out_dir / "checkpoints" / name, model, state, config, ablation);
      write_text(out_dir / "loss.csv", format_loss_csv(state.history));
    }
  }
  const fs::path final_dir = out_dir / "final";
  save_training_checkpoint(final_dir, model, state, config, ablation);
  write_text(out_dir / "loss.csv", format_loss_csv(state.history));
  return TrainResult{final_dir, state.history, std::move(model)};
}

std::vector<PairSample> training_pairs(const RunConfig& config) {
  if (!config.paths.manifest.empty()) return make_pairs(read_manifest(config.paths.manifest), config.degrade);
  if (!config.paths.gt_dir.empty()) {
    return make_pairs(build_manifest(config.paths.gt_dir, config.crop_size, config.degrade, config.seed),
                      config.degrade);
  }
  return make_synthetic_pairs(config.synthetic_pairs, config.crop_size, config.degrade,
                              derive_sample_seed(config.seed ^ kDataStream, 0));
}

std::vector<PairSample> held_out_pairs(const RunConfig& config) {
  if (config.eval_pairs == 0) return {};
  return make_synthetic_pairs(config.eval_pairs, config.crop_size, config.degrade,
                              derive_sample_seed(config.seed ^ kEvalStream, 0));
}

TrainModel load_trained_model(const fs::path& checkpoint, RunConfig* config_out, AblationSpec* ablation_out) {
  if (!fs::is_directory(checkpoint)) throw Error(ErrorKind::Io, "no checkpoint directory " + checkpoint.string());
  RunConfig config = load_run_config(checkpoint / "config.ini");
  AblationSpec ablation;
  if (fs::exists(checkpoint / "ablation.ini")) ablation = parse_variants(read_text(checkpoint / "ablation.ini")).at(0);
  TrainModel model = build_model(config, ablation);
  model.schedule = parse_schedule(trim(read_text(checkpoint / "schedule.txt")));
  load_checkpoint_parameters(checkpoint, model.bundle, model.selector);
  if (config_out) *config_out = config;
  if (ablation_out) *ablation_out = ablation;
  return model;
}

SRResult infer(const TrainModel& model, const RunConfig& config, const AblationSpec& ablation, const ImageBatch& lr) {
  std::optional<int> fixed;
  if (!ablation.enable_dtsm) fixed = config.dtsm_fallback_t();
  return super_resolve(model.bundle, model.schedule, model.selector, lr, config.scale_factor, Mode::Infer, nullptr,
                       fixed);
}

// ------------------------------------------------------------------ ablation suite

namespace {

std::string slug(std::size_t index, const std::string& name) {
  char prefix[8];
  std::snprintf(prefix, sizeof(prefix), "%02zu_", index);
  std::string s = prefix;
  for (unsigned char c : name) s += std::isalnum(c) ? static_cast<char>(std::tolower(c)) : '_';
  return s;
}

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

}  // namespace

AblationTable run_ablation_suite(const RunConfig& base, const std::vector<AblationSpec>& variants,
                                 const std::vector<PairSample>& train_pairs, const std::vector<PairSample>& eval_pairs,
                                 const fs::path& out_dir) {
  if (variants.empty()) throw Error(ErrorKind::InvalidRange, "ablation needs at least one variant");
  if (eval_pairs.empty()) throw Error(ErrorKind::InvalidRange, "ablation needs at least one evaluation pair");
  AblationTable table;
  const AttributeRegistry registry = make_registry(base);
  for (const auto& a : registry.attributes()) table.attribute_names.push_back(a.name);
  for (std::size_t i = 0; i < variants.size(); ++i) {
    AblationRow row;
    row.spec = variants[i];
    try {
      TrainResult res = run_training(base, variants[i], train_pairs, out_dir / slug(i, variants[i].name));
      std::vector<MetricRow> metrics;
      for (std::size_t j = 0; j < eval_pairs.size(); ++j) {
        const ImageBatch sr = infer(res.model, base, variants[i], eval_pairs[j].lr).image;
        metrics.push_back(evaluate_pair(std::to_string(j), sr, eval_pairs[j].gt, *res.model.extractor));
      }
      const EvalSummary summary = summarize(std::move(metrics));
      row.psnr_y = summary.mean.psnr_y;
      row.ssim_y = summary.mean.ssim_y;
      row.perceptual = summary.mean.perceptual;
      const std::size_t n = res.history.size(), tail = std::min<std::size_t>(10, n);
      for (std::size_t j = n - tail; j < n; ++j) row.final_total += res.history[j].total / static_cast<double>(tail);
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    table.rows.push_back(std::move(row));
  }
  write_text(out_dir / "ablation.csv", format_ablation_csv(table));
  return table;
}

std::string format_ablation_csv(const AblationTable& table) {
  std::string out = "variant,dtsm,id_sal,td_pal";
  for (const auto& a : table.attribute_names) out += "," + csv_cell(a);
  out += ",psnr_y,ssim_y,perceptual,final_total,status\n";
  char buf[160];
  for (const auto& r : table.rows) {
    out += csv_cell(r.spec.name);
    out += r.spec.enable_dtsm ? ",1" : ",0";
    out += r.spec.enable_id_sal ? ",1" : ",0";
    out += r.spec.enable_td_pal ? ",1" : ",0";
    for (const auto& a : table.attribute_names) {
      const auto& ex = r.spec.excluded_attributes;
      out += std::find(ex.begin(), ex.end(), a) == ex.end() ? ",1" : ",0";
    }
    if (r.ok) {
      std::snprintf(buf, sizeof(buf), ",%.10g,%.10g,%.10g,%.10g,ok\n", r.psnr_y, r.ssim_y, r.perceptual, r.final_total);
      out += buf;
    } else {
      out += ",,,,," + csv_cell("error: " + r.error) + "\n";
    }
  }
  return out;
}

}  // namespace osdsr
