#pragma once

#include "mmga/ops.hpp"

#include <span>
#include <string>

namespace mmga {

/// Balancing weights and triplet margin for the combined objective.
struct LossWeights {
  double lambda0 = 0.5;  // part-branch attention weight
  double lambda1 = 2.0;  // triplet weight
  double lambda2 = 0.1;  // attention weight
  double margin = 0.3;
  /// Divide the attention RMSE by n·h·w instead of the batch size alone.
  bool per_pixel_mean = false;

  void validate() const;
};

/// sqrt(Σ (M − S_norm)² / n_batch), summed over every pixel of every image.
/// With `per_pixel_mean` the divisor is n·h·w. Symmetric in its arguments.
template <typename Scalar>
Tensor<Scalar> attention_rmse(const Tensor<Scalar>& s_norm, const Tensor<Scalar>& target,
                              bool per_pixel_mean = false);

/// L1w + L2w + λ0·L2u + λ0·L2b.
template <typename Scalar>
Tensor<Scalar> attention_total(const Tensor<Scalar>& l1w, const Tensor<Scalar>& l2w, const Tensor<Scalar>& l2u,
                               const Tensor<Scalar>& l2b, double lambda0);

/// Mean cross-entropy of softmax(logits) at the true identity.
template <typename Scalar>
Tensor<Scalar> softmax_loss(const Tensor<Scalar>& logits, std::span<const int> labels);

/// Batch-hard triplet loss over a P×K batch: mean over anchors of
/// [m + max_pos ‖a − p‖ − min_neg ‖a − n‖]₊.
template <typename Scalar>
Tensor<Scalar> batch_hard_triplet(const Tensor<Scalar>& embeddings, std::span<const int> identities, double margin);

/// L_softmax^w + L_softmax^l + λ1·L_triplet + λ2·L_att. Undefined
/// components are omitted (single-feature variants, unguided attention).
template <typename Scalar>
Tensor<Scalar> total_loss(const Tensor<Scalar>& softmax_w, const Tensor<Scalar>& softmax_l,
                          const Tensor<Scalar>& triplet, const Tensor<Scalar>& attention, const LossWeights& weights);

/// Checks the P×K precondition: every identity appears equally often,
/// K ≥ 2, P ≥ 2. Returns {P, K}.
std::pair<Index, Index> validate_pk(std::span<const int> identities);

/// Scalar values of every loss component for one step.
struct LossReport {
  double l1w = 0, l2w = 0, l2u = 0, l2b = 0;
  double attention = 0;
  double softmax_w = 0, softmax_l = 0;
  double triplet = 0;
  double total = 0;

  /// One-line JSON object (no trailing newline).
  std::string to_json_line() const;
};

}  // namespace mmga
