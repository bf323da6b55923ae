#pragma once

#include "mmga/tensor.hpp"

#include <vector>

namespace mmga {

/// 2-D convolution. `weight` is (c_out, c_in, k, k); `bias` may be undefined
/// or hold c_out values. Output extent: (in + 2·pad − k) / stride + 1.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, Index stride = 1, Index padding = 0);

/// Affine map on rows: input (n,d_in), weight (d_out,d_in), bias optional (d_out).
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias = {});

/// Per-channel spatial mean: (n,c,h,w) -> (n,c,1,1).
template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& input);

/// Mean of each non-overlapping 2×2 block; h and w must be even.
template <typename Scalar>
Tensor<Scalar> avg_pool_2x2(const Tensor<Scalar>& input);

/// Max pooling with square window (padding contributes nothing).
template <typename Scalar>
Tensor<Scalar> max_pool2d(const Tensor<Scalar>& input, Index kernel, Index stride, Index padding);

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& input);

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& input);

/// Running statistics owned by a batch-norm layer.
template <typename Scalar>
struct BatchNormStats {
  Eigen::Array<Scalar, Eigen::Dynamic, 1> mean;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> var;

  explicit BatchNormStats(Index channels = 0)
      : mean(Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(channels)),
        var(Eigen::Array<Scalar, Eigen::Dynamic, 1>::Ones(channels)) {}
};

enum class Mode { Train, Eval };

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel normalization over (n,h,w). Train mode uses batch statistics
/// and updates `stats` (momentum 0.1, unbiased variance); eval mode uses `stats`.
template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& input, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, BatchNormStats<Scalar>& stats, Mode mode);

/// Hadamard product. `b` may equal `a` in shape or broadcast over channels
/// (n,1,h,w) or over space (n,c,1,1); either operand may be the broadcast one.
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& a, Scalar value);

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor);

/// Sum of all entries as a scalar tensor.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a);

/// Concatenates (n,d_i) matrices along the feature axis, in the given order.
template <typename Scalar>
Tensor<Scalar> concat_channels(const std::vector<Tensor<Scalar>>& parts);

/// Rows scaled to unit Euclidean norm. A row with norm below `epsilon`
/// raises Error("degenerate").
template <typename Scalar>
Tensor<Scalar> l2_normalize(const Tensor<Scalar>& input, Scalar epsilon = Scalar(1e-12));

/// Mirrors the width axis.
template <typename Scalar>
Tensor<Scalar> flip_horizontal(const Tensor<Scalar>& input);

// Expression-style sugar.
template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return add(a, b);
}
template <typename Scalar>
Tensor<Scalar> operator*(Scalar factor, const Tensor<Scalar>& a) {
  return scale(a, factor);
}

}  // namespace mmga
