#pragma once

// Text artifacts around runs: evaluation reports as JSON plus a plain-text
// confusion grid, the per-step training log as CSV, and dataset manifests.

#include <iosfwd>
#include <string>

#include "skelrep/cache.hpp"
#include "skelrep/eval.hpp"
#include "skelrep/train.hpp"

namespace skelrep {

std::string eval_report_to_json(const EvalReport& report);
void write_eval_report_file(const std::string& path, const EvalReport& report);
EvalReport parse_eval_report(const std::string& json_text);

// Row-per-true-class grid with per-class accuracies in the margin.
void write_confusion_grid(std::ostream& out, const EvalReport& report);

// CSV: step,epoch,mse,r_skel,ssvi,wall_ms with full float precision; empty
// columns for branches that were off.
void write_train_log_csv(std::ostream& out, const TrainLog& log);
void write_train_log_file(const std::string& path, const TrainLog& log);

std::string manifest_to_json(const CacheStats& stats, const DatasetSplit& split,
                             const std::string& source);
void write_manifest_file(const std::string& path, const CacheStats& stats,
                         const DatasetSplit& split, const std::string& source);

}  // namespace skelrep
