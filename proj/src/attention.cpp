#include "mmga/attention.hpp"

#include <cmath>

namespace mmga {

void AttentionConfig::validate() const {
  if (c_in <= 0 || c_out <= 0 || s <= 0 || r <= 0)
    throw Error("config", "attention: channel counts and reductions must be positive");
  if (c_in % (s * s) != 0)
    throw Error("config", "attention: c_in=" + std::to_string(c_in) + " is not divisible by s and s² (s=" +
                              std::to_string(s) + ")");
  if (c_in % r != 0)
    throw Error("config",
                "attention: c_in=" + std::to_string(c_in) + " is not divisible by r=" + std::to_string(r));
}

template <typename Scalar>
Tensor<Scalar> he_uniform(const Shape& shape, Index fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / double(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = Scalar(dist(rng));
  t.set_requires_grad();
  return t;
}

template <typename Scalar>
AttentionParams<Scalar> AttentionParams<Scalar>::init(const AttentionConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const Index mid = cfg.c_in / cfg.s, low = cfg.c_in / (cfg.s * cfg.s), hidden = cfg.c_in / cfg.r;
  auto zeros = [](const Shape& s) { return Tensor<Scalar>::zeros(s).set_requires_grad(); };
  AttentionParams p;
  p.conv1_w = he_uniform<Scalar>({mid, cfg.c_in, 1, 1}, cfg.c_in, rng);
  p.conv1_b = zeros({1, mid, 1, 1});
  p.conv2_w = he_uniform<Scalar>({low, mid, 1, 1}, mid, rng);
  p.conv2_b = zeros({1, low, 1, 1});
  p.conv3_w = zeros({1, low, 1, 1});
  p.conv3_b = zeros({1, 1, 1, 1});
  p.fc1_w = he_uniform<Scalar>({hidden, cfg.c_in, 1, 1}, cfg.c_in, rng);
  p.fc1_b = zeros({1, hidden, 1, 1});
  p.fc2_w = zeros({cfg.c_out, hidden, 1, 1});
  p.fc2_b = zeros({1, cfg.c_out, 1, 1});
  return p;
}

template <typename Scalar>
NamedTensors<Scalar> AttentionParams<Scalar>::named(const std::string& prefix) const {
  return {{prefix + ".spatial.conv1.weight", conv1_w}, {prefix + ".spatial.conv1.bias", conv1_b},
          {prefix + ".spatial.conv2.weight", conv2_w}, {prefix + ".spatial.conv2.bias", conv2_b},
          {prefix + ".spatial.conv3.weight", conv3_w}, {prefix + ".spatial.conv3.bias", conv3_b},
          {prefix + ".channel.fc1.weight", fc1_w},     {prefix + ".channel.fc1.bias", fc1_b},
          {prefix + ".channel.fc2.weight", fc2_w},     {prefix + ".channel.fc2.bias", fc2_b}};
}

template <typename Scalar>
Tensor<Scalar> spatial_attention(const Tensor<Scalar>& x, const AttentionParams<Scalar>& p,
                                 const AttentionConfig& cfg) {
  cfg.validate();
  if (x.shape().c != cfg.c_in)
    throw Error("shape", "spatial_attention: expected " + std::to_string(cfg.c_in) + " channels, got " +
                             x.shape().str());
  Tensor<Scalar> h = conv2d(x, p.conv1_w, p.conv1_b);
  if (cfg.pool_between_conv1_and_conv2) h = avg_pool_2x2(h);
  h = conv2d(h, p.conv2_w, p.conv2_b);
  h = conv2d(h, p.conv3_w, p.conv3_b);
  return add_scalar(sigmoid(h), Scalar(1));
}

template <typename Scalar>
Tensor<Scalar> channel_attention(const Tensor<Scalar>& x, const AttentionParams<Scalar>& p,
                                 const AttentionConfig& cfg) {
  cfg.validate();
  if (x.shape().c != cfg.c_in)
    throw Error("shape", "channel_attention: expected " + std::to_string(cfg.c_in) + " channels, got " +
                             x.shape().str());
  Tensor<Scalar> h = global_avg_pool(x);
  h = linear(h, p.fc1_w, p.fc1_b);
  h = linear(h, p.fc2_w, p.fc2_b);
  return sigmoid(h);
}

template <typename Scalar>
Tensor<Scalar> combine(const Tensor<Scalar>& spatial, const Tensor<Scalar>& channel) {
  if (spatial.shape().n != channel.shape().n)
    throw Error("shape", "combine: batch extents differ " + spatial.shape().str() + " vs " + channel.shape().str());
  if (spatial.shape().c != 1 || channel.shape().h != 1 || channel.shape().w != 1)
    throw Error("shape", "combine: expected S (n,1,h,w) and C (n,c,1,1)");
  return mul(spatial, channel);
}

template <typename Scalar>
Tensor<Scalar> normalize_spatial(const Tensor<Scalar>& spatial) {
  using Array = typename Tensor<Scalar>::Array;
  const Shape& s = spatial.shape();
  if (s.c != 1) throw Error("shape", "normalize_spatial: expected a single-channel map, got " + s.str());
  const Index hw = s.spatial();
  Array out = Array::Zero(s.size());
  std::vector<Index> lo(s.n), hi(s.n);
  std::vector<bool> degenerate(s.n);
  for (Index n = 0; n < s.n; ++n) {
    auto v = spatial.values().segment(n * hw, hw);
    Index imin = 0, imax = 0;
    for (Index i = 1; i < hw; ++i) {
      if (v[i] < v[imin]) imin = i;
      if (v[i] > v[imax]) imax = i;
    }
    lo[n] = imin;
    hi[n] = imax;
    const Scalar range = v[imax] - v[imin];
    degenerate[n] = !(double(range) >= kDegenerateRange);
    if (!degenerate[n]) out.segment(n * hw, hw) = (v - v[imin]) / range;
  }
  return make_result<Scalar>(
      "normalize_spatial", s, std::move(out), {spatial},
      [spatial, lo, hi, degenerate, hw](const detail::Node<Scalar>& self) {
        const Shape& s = spatial.shape();
        Array dx = Array::Zero(s.size());
        for (Index n = 0; n < s.n; ++n) {
          if (degenerate[n]) continue;
          auto v = spatial.values().segment(n * hw, hw);
          auto g = self.grad.segment(n * hw, hw);
          const Scalar a = v[lo[n]], b = v[hi[n]], range = b - a;
          auto d = dx.segment(n * hw, hw);
          d = g / range;
          // y = (v − a)/(b − a):  ∂y/∂a = (v − b)/(b − a)²,  ∂y/∂b = −(v − a)/(b − a)²
          d[lo[n]] += (g * (v - b)).sum() / (range * range);
          d[hi[n]] -= (g * (v - a)).sum() / (range * range);
        }
        spatial.node()->accumulate(dx);
      });
}

template <typename Scalar>
AttentionOutput<Scalar> attend(const Tensor<Scalar>& x, const AttentionParams<Scalar>& p, const AttentionConfig& cfg) {
  AttentionOutput<Scalar> out;
  out.spatial = spatial_attention(x, p, cfg);
  out.channel = channel_attention(x, p, cfg);
  out.combined = combine(out.spatial, out.channel);
  out.spatial_norm = normalize_spatial(out.spatial);
  return out;
}

#define MMGA_INSTANTIATE_ATTENTION(S)                                                                 \
  template struct AttentionParams<S>;                                                                 \
  template Tensor<S> he_uniform<S>(const Shape&, Index, std::mt19937_64&);                            \
  template Tensor<S> spatial_attention(const Tensor<S>&, const AttentionParams<S>&, const AttentionConfig&); \
  template Tensor<S> channel_attention(const Tensor<S>&, const AttentionParams<S>&, const AttentionConfig&); \
  template Tensor<S> combine(const Tensor<S>&, const Tensor<S>&);                                     \
  template Tensor<S> normalize_spatial(const Tensor<S>&);                                             \
  template AttentionOutput<S> attend(const Tensor<S>&, const AttentionParams<S>&, const AttentionConfig&);

MMGA_INSTANTIATE_ATTENTION(float)
MMGA_INSTANTIATE_ATTENTION(double)

}  // namespace mmga
