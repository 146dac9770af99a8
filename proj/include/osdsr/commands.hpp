#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "osdsr/config.hpp"

namespace osdsr {

// Batch entry points behind the command-line tool. Each returns 0 when every
// requested output was written; otherwise it prints "error: <message>" to
// `err` and returns 1. Progress goes to `log`.

// Writes <out>/lr/<stem>.png, <out>/gt/<stem>.png (the GT crops) and
// <out>/manifest.txt.
int cmd_degrade(const std::filesystem::path& gt_dir, const RunConfig& config, const std::filesystem::path& out_dir,
                std::ostream& log, std::ostream& err);

int cmd_train(const RunConfig& config, const std::filesystem::path& out_dir,
              const std::optional<std::filesystem::path>& resume_from, std::ostream& log, std::ostream& err);

// One super-resolution pass per image in `lr_dir`; logs "<file> t*=<t>" and
// writes <out>/<stem>.png plus <out>/t_star.csv.
int cmd_infer(const std::filesystem::path& checkpoint, const std::filesystem::path& lr_dir,
              const std::filesystem::path& out_dir, std::ostream& log, std::ostream& err);

// `extra_scores` names optional image_id,<metric>... CSV files to merge.
int cmd_eval(const std::filesystem::path& sr_dir, const std::filesystem::path& gt_dir,
             const std::filesystem::path& out_csv, const RunConfig& config,
             const std::vector<std::filesystem::path>& extra_scores, std::ostream& log, std::ostream& err);

// `variants` is a variants file or a preset name ("components", "attributes").
int cmd_ablate(const RunConfig& config, const std::string& variants, const std::filesystem::path& out_dir,
               std::ostream& log, std::ostream& err);

}  // namespace osdsr
