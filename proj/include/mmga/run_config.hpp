#pragma once

#include "mmga/data.hpp"
#include "mmga/losses.hpp"
#include "mmga/network.hpp"
#include "mmga/trainer.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace mmga {

/// Everything a training run needs. Defaults are the full-scale settings;
/// a JSON document only has to mention what it changes.
struct RunConfig {
  ModelConfig model;
  LossWeights loss;
  OptimConfig optim;
  PKBatchSpec sampler;
  AugmentConfig augment;
  GroupingTable grouping = GroupingTable::lip_default();
  std::string data_dir;
  std::string out_dir;
  std::uint64_t seed = 0;
  Index checkpoint_every = 0;

  nlohmann::ordered_json to_json() const;
  /// Starts from the defaults and applies `j`. Unknown keys at any level
  /// raise Error("config").
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);

  void validate() const;
  TrainOptions train_options() const;
};

}  // namespace mmga
