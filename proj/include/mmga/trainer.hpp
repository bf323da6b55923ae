#pragma once

#include "mmga/data.hpp"
#include "mmga/losses.hpp"
#include "mmga/network.hpp"

#include <filesystem>
#include <ostream>
#include <vector>

namespace mmga {

/// Plain SGD with two learning-rate tracks and step decay.
struct OptimConfig {
  double base_lr_backbone = 0.05;
  double base_lr_other = 0.1;
  double weight_decay = 5e-4;
  double decay_factor = 0.5;
  Index decay_every = 90;
  Index total_epochs = 900;

  void validate() const;
};

/// base(track) · decay_factor^floor(epoch / decay_every).
double lr_at(Index epoch, const OptimConfig& cfg, ParamTrack track);

/// w ← w − rate·(g + weight_decay·w), then zeroes g. Throws Error("grad")
/// if a tensor never received a gradient.
template <typename Scalar>
void sgd_step(std::vector<Tensor<Scalar>>& params, double rate, double weight_decay);

/// Attention targets stacked per loss component as (n,1,h,w) tensors, in
/// the order of variant_mask_targets.
template <typename Scalar>
std::vector<Tensor<Scalar>> stack_targets(Variant variant, const std::vector<MaskSet>& masks, Index height,
                                          Index width);

template <typename Scalar>
struct Objective {
  Tensor<Scalar> total;
  LossReport report;
  /// L2w + λ0·(L2u + L2b): the module-2 share of the attention loss.
  double module2_attention = 0;
};

/// Assembles the combined loss for one forward pass.
template <typename Scalar>
Objective<Scalar> compute_objective(const ForwardResult<Scalar>& fwd, std::span<const int> labels,
                                    const std::vector<Tensor<Scalar>>& targets, Variant variant,
                                    const LossWeights& weights);

struct TrainOptions {
  PKBatchSpec pk;
  AugmentConfig augment;
  GroupingTable grouping = GroupingTable::lip_default();
  LossWeights weights;
  OptimConfig optim;
  std::uint64_t seed = 0;
  /// Checkpoint every this many epochs (0: initial and final only).
  Index checkpoint_every = 0;
  /// Checkpoints go to out_dir/epoch_NNNN; empty disables them.
  std::filesystem::path out_dir;
};

struct EpochSummary {
  Index epoch = 0;
  LossReport mean;
  double module2_attention = 0;
};

struct TrainSummary {
  std::vector<EpochSummary> epochs;
  Index steps = 0;
  std::filesystem::path final_checkpoint;
};

/// Runs optim.total_epochs epochs of PK batches. Writes one JSON object per
/// step to `log` (if given) and checkpoints under options.out_dir. Throws
/// Error("divergence") when the loss stops being finite.
TrainSummary train(Model<float>& model, const Dataset& data, const TrainOptions& options, std::ostream* log);

}  // namespace mmga
