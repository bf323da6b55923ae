#pragma once

#include "mmga/ops.hpp"

#include <random>
#include <string>
#include <utility>
#include <vector>

namespace mmga {

/// Shape of one spatial+channel attention module.
struct AttentionConfig {
  Index c_in = 0;
  Index c_out = 0;
  Index s = 8;  // spatial reduction: c_in -> c_in/s -> c_in/s² -> 1
  Index r = 8;  // channel reduction: c_in -> c_in/r -> c_out
  bool pool_between_conv1_and_conv2 = false;

  /// Throws Error("config") unless c_in is divisible by s, s² and r.
  void validate() const;
};

template <typename Scalar>
using NamedTensors = std::vector<std::pair<std::string, Tensor<Scalar>>>;

/// Learnable tensors of one attention module. The last spatial conv and the
/// last linear layer start at zero, so a fresh module emits S ≡ 1.5, C ≡ 0.5.
template <typename Scalar>
struct AttentionParams {
  Tensor<Scalar> conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b;
  Tensor<Scalar> fc1_w, fc1_b, fc2_w, fc2_b;

  static AttentionParams init(const AttentionConfig& cfg, std::mt19937_64& rng);
  NamedTensors<Scalar> named(const std::string& prefix) const;
};

template <typename Scalar>
struct AttentionOutput {
  Tensor<Scalar> spatial;       // S, (n,1,h,w), values in (1,2)
  Tensor<Scalar> channel;       // C, (n,c_out,1,1), values in (0,1)
  Tensor<Scalar> combined;      // A = S·C, (n,c_out,h,w)
  Tensor<Scalar> spatial_norm;  // per-image min-max normalized S
};

/// conv1×1 → [avg-pool 2×2] → conv1×1 → conv1×1 → sigmoid → +1.
template <typename Scalar>
Tensor<Scalar> spatial_attention(const Tensor<Scalar>& x, const AttentionParams<Scalar>& p,
                                 const AttentionConfig& cfg);

/// Spatial mean → linear (c_in/r) → linear (c_out) → sigmoid.
template <typename Scalar>
Tensor<Scalar> channel_attention(const Tensor<Scalar>& x, const AttentionParams<Scalar>& p,
                                 const AttentionConfig& cfg);

/// Broadcast product of S (n,1,h,w) and C (n,c,1,1).
template <typename Scalar>
Tensor<Scalar> combine(const Tensor<Scalar>& spatial, const Tensor<Scalar>& channel);

/// (S − min S)/(max S − min S) per image over its h×w grid. A map whose range
/// is below 1e-7 normalizes to zeros. Gradients flow through the min and max
/// (ties resolve to the first occurrence).
template <typename Scalar>
Tensor<Scalar> normalize_spatial(const Tensor<Scalar>& spatial);

inline constexpr double kDegenerateRange = 1e-7;

template <typename Scalar>
AttentionOutput<Scalar> attend(const Tensor<Scalar>& x, const AttentionParams<Scalar>& p, const AttentionConfig& cfg);

/// He-uniform fill: U(−b, b) with b = sqrt(6 / fan_in).
template <typename Scalar>
Tensor<Scalar> he_uniform(const Shape& shape, Index fan_in, std::mt19937_64& rng);

}  // namespace mmga
