#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "osdsr/commands.hpp"
#include "osdsr/config.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"One-step diffusion super-resolution toolkit (toy backbone)"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::vector<std::string> overrides, command_overrides;
  // Accepted before or after the command name; later --set values win.
  auto add_common = [&](CLI::App* a, std::vector<std::string>& sets) {
    a->add_option("--config", config_path, "INI configuration file; unset keys keep their defaults")
        ->default_str("none");
    a->add_option("--seed", seed, "overrides [run] seed")->default_str("0");
    a->add_option("--out", out_dir, "output directory; overrides [paths] out_dir")->default_str("out");
    a->add_option("--set", sets, "section.key=value, applied after the config file")->default_str("none");
  };
  add_common(&app, overrides);

  std::string gt_dir;
  auto* degrade = app.add_subcommand("degrade", "crop and degrade a GT directory into LR/GT pairs and a manifest");
  degrade->add_option("--gt-dir", gt_dir, "ground-truth images; overrides [paths] gt_dir")->default_str("none");

  std::string resume;
  auto* train = app.add_subcommand("train", "fine-tune adapters and the time-step selector");
  train->add_option("--resume", resume, "checkpoint directory to continue from")->default_str("none");

  std::string checkpoint, lr_dir;
  auto* infer = app.add_subcommand("infer", "super-resolve every image in a directory, logging t* per image");
  infer->add_option("--checkpoint", checkpoint, "checkpoint directory; overrides [paths] checkpoint")->default_str("none");
  infer->add_option("--lr-dir", lr_dir, "low-resolution inputs; overrides [paths] lr_dir")->default_str("none");

  std::string sr_dir, eval_gt, csv;
  std::vector<std::string> scores;
  auto* eval = app.add_subcommand("eval", "PSNR/SSIM on Y plus perceptual distance, per image and mean");
  eval->add_option("--sr-dir", sr_dir, "super-resolved images; overrides [paths] sr_dir")->default_str("none");
  eval->add_option("--gt-dir", eval_gt, "ground-truth images; overrides [paths] gt_dir")->default_str("none");
  eval->add_option("--csv", csv, "metrics CSV path")->default_str("<out>/metrics.csv");
  eval->add_option("--scores", scores, "external image_id,<metric>,... CSV files to merge")->default_str("none");

  std::string variants = "components";
  auto* ablate = app.add_subcommand("ablate", "train and evaluate each ablation variant");
  ablate->add_option("--variants", variants, "variants file, or preset 'components' / 'attributes'")
      ->capture_default_str();

  for (auto* sub : {degrade, train, infer, eval, ablate}) add_common(sub, command_overrides);

  CLI11_PARSE(app, argc, argv);

  osdsr::RunConfig config;
  try {
    if (!config_path.empty()) config = osdsr::load_run_config(config_path);
    for (const auto& o : overrides) osdsr::apply_override(config, o);
    for (const auto& o : command_overrides) osdsr::apply_override(config, o);
    if (seed) config.seed = *seed;
    if (!out_dir.empty()) config.paths.out_dir = out_dir;
    if (!gt_dir.empty()) config.paths.gt_dir = gt_dir;
    if (!eval_gt.empty()) config.paths.gt_dir = eval_gt;
    if (!checkpoint.empty()) config.paths.checkpoint = checkpoint;
    if (!lr_dir.empty()) config.paths.lr_dir = lr_dir;
    if (!sr_dir.empty()) config.paths.sr_dir = sr_dir;
    config.validate();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  auto need = [](const std::string& value, const char* what) {
    if (value.empty()) std::cerr << "error: " << what << " is required\n";
    return !value.empty();
  };
  const fs::path out = config.paths.out_dir;

  if (*degrade) {
    if (!need(config.paths.gt_dir, "--gt-dir or [paths] gt_dir")) return 2;
    return osdsr::cmd_degrade(config.paths.gt_dir, config, out, std::cout, std::cerr);
  }
  if (*train) {
    std::optional<fs::path> from;
    if (!resume.empty()) from = resume;
    return osdsr::cmd_train(config, out, from, std::cout, std::cerr);
  }
  if (*infer) {
    if (!need(config.paths.checkpoint, "--checkpoint or [paths] checkpoint")) return 2;
    if (!need(config.paths.lr_dir, "--lr-dir or [paths] lr_dir")) return 2;
    return osdsr::cmd_infer(config.paths.checkpoint, config.paths.lr_dir, out, std::cout, std::cerr);
  }
  if (*eval) {
    if (!need(config.paths.sr_dir, "--sr-dir or [paths] sr_dir")) return 2;
    if (!need(config.paths.gt_dir, "--gt-dir or [paths] gt_dir")) return 2;
    std::vector<fs::path> extra(scores.begin(), scores.end());
    const fs::path target = csv.empty() ? out / "metrics.csv" : fs::path(csv);
    return osdsr::cmd_eval(config.paths.sr_dir, config.paths.gt_dir, target, config, extra, std::cout, std::cerr);
  }
  return osdsr::cmd_ablate(config, variants, out, std::cout, std::cerr);
}
