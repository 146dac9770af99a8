#include "osdsr/commands.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <ostream>

#include "osdsr/data.hpp"
#include "osdsr/error.hpp"
#include "osdsr/evalmetrics.hpp"
#include "osdsr/trainer.hpp"

namespace osdsr {

namespace fs = std::filesystem;

namespace {

int guarded(std::ostream& err, const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create directory " + dir.string() + ": " + ec.message());
}

}  // namespace

int cmd_degrade(const fs::path& gt_dir, const RunConfig& config, const fs::path& out_dir, std::ostream& log,
                std::ostream& err) {
  return guarded(err, [&] {
    config.validate();
    const DatasetManifest manifest = build_manifest(gt_dir, config.crop_size, config.degrade, config.seed);
    if (manifest.surrogate_jpeg) log << "warning: JPEG codec unavailable, using the quantisation surrogate\n";
    ensure_dir(out_dir / "lr");
    ensure_dir(out_dir / "gt");
    const auto pairs = make_pairs(manifest, config.degrade);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const std::string stem = fs::path(manifest.entries[i].gt_path).stem().string();
      save_image(pairs[i].lr, out_dir / "lr" / (stem + ".png"));
      save_image(pairs[i].gt, out_dir / "gt" / (stem + ".png"));
    }
    write_manifest(manifest, out_dir / "manifest.txt");
    log << "degraded " << pairs.size() << " images into " << out_dir.string() << "\n";
  });
}

int cmd_train(const RunConfig& config, const fs::path& out_dir, const std::optional<fs::path>& resume_from,
              std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    const auto pairs = training_pairs(config);
    log << "training on " << pairs.size() << " pairs for " << config.steps << " steps\n";
    const TrainResult result = run_training(config, {}, pairs, out_dir, resume_from);
    if (!result.history.empty()) log << "final total loss " << result.history.back().total << "\n";
    log << "checkpoint " << result.checkpoint.string() << "\n";
  });
}

int cmd_infer(const fs::path& checkpoint, const fs::path& lr_dir, const fs::path& out_dir, std::ostream& log,
              std::ostream& err) {
  return guarded(err, [&] {
    RunConfig config;
    AblationSpec ablation;
    const TrainModel model = load_trained_model(checkpoint, &config, &ablation);
    const auto files = list_images(lr_dir);
    if (files.empty()) throw Error(ErrorKind::Missing, "no .png/.ppm images in " + lr_dir.string());
    ensure_dir(out_dir);
    std::string table = "image,t_star\n";
    for (const auto& f : files) {
      const SRResult sr = infer(model, config, ablation, load_image(f));
      save_image(sr.image, out_dir / (f.stem().string() + ".png"));
      log << f.filename().string() << " t*=" << sr.t_star.at(0) << "\n";
      table += f.stem().string() + "," + std::to_string(sr.t_star.at(0)) + "\n";
    }
    std::ofstream out(out_dir / "t_star.csv", std::ios::binary);
    out << table;
    if (!out) throw Error(ErrorKind::Io, "cannot write " + (out_dir / "t_star.csv").string());
  });
}

int cmd_eval(const fs::path& sr_dir, const fs::path& gt_dir, const fs::path& out_csv, const RunConfig& config,
             const std::vector<fs::path>& extra_scores, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    const auto extractor = make_feature_extractor(config.model);
    EvalSummary summary = evaluate_pairs(sr_dir, gt_dir, *extractor);
    for (const auto& p : extra_scores) merge_external_scores(summary, p);
    if (out_csv.has_parent_path()) ensure_dir(out_csv.parent_path());
    write_metrics_csv(summary, out_csv);
    char line[128];
    std::snprintf(line, sizeof line, "%zu images: PSNR-Y %.4f dB, SSIM-Y %.4f\n", summary.rows.size(),
                  summary.mean.psnr_y, summary.mean.ssim_y);
    log << line;
  });
}

int cmd_ablate(const RunConfig& config, const std::string& variants, const fs::path& out_dir, std::ostream& log,
               std::ostream& err) {
  return guarded(err, [&] {
    const auto specs = load_variants(variants, config);
    const AblationTable table =
        run_ablation_suite(config, specs, training_pairs(config), held_out_pairs(config), out_dir);
    log << format_ablation_csv(table);
    for (const auto& row : table.rows) {
      if (!row.ok) throw Error(ErrorKind::Numeric, "variant '" + row.spec.name + "' failed: " + row.error);
    }
  });
}

}  // namespace osdsr
