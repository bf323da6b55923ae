#pragma once

#include "mmga/eval.hpp"
#include "mmga/run_config.hpp"

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace mmga::cli {

/// Entry point shared by the `mmga` executable and in-process callers.
/// `args` excludes the program name.
/// Returns the exit code; failures print one JSON line `{"error":..}` to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Accepts a manifest file or a directory holding manifest.csv.
std::filesystem::path resolve_manifest(const std::filesystem::path& data);

/// Trains one model and writes train_log.jsonl, summary.json, config.json
/// and checkpoints/ under `out_dir`.
TrainSummary train_run(RunConfig config, const std::filesystem::path& data, const std::filesystem::path& out_dir);

/// Evaluates a checkpoint on the query/gallery split; writes report.json,
/// query.emb and gallery.emb under `out_dir`.
EvalReport eval_run(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                    const std::filesystem::path& out_dir);

}  // namespace mmga::cli
