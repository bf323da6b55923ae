#include "mmga/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mmga {

namespace {

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatMap = Eigen::Map<RowMat<Scalar>>;
template <typename Scalar>
using ConstMatMap = Eigen::Map<const RowMat<Scalar>>;

template <typename Scalar>
using Node = detail::Node<Scalar>;

template <typename Scalar>
void accumulate(const Tensor<Scalar>& t, const Eigen::Ref<const typename Tensor<Scalar>::Array>& g) {
  if (t.requires_grad()) t.node()->accumulate(g);
}

void require(bool ok, const std::string& kind, const std::string& message) {
  if (!ok) throw Error(kind, message);
}

struct ConvGeometry {
  Index c_in, h_in, w_in, k, stride, pad, h_out, w_out;
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
  Index rows() const { return c_in * k * k; }
  Index cols() const { return h_out * w_out; }
};

template <typename Scalar>
void im2col(const Scalar* image, const ConvGeometry& g, Scalar* col) {
  for (Index c = 0; c < g.c_in; ++c)
    for (Index kh = 0; kh < g.k; ++kh)
      for (Index kw = 0; kw < g.k; ++kw) {
        Scalar* row = col + ((c * g.k + kh) * g.k + kw) * g.cols();
        for (Index oh = 0; oh < g.h_out; ++oh) {
          const Index ih = oh * g.stride - g.pad + kh;
          Scalar* dst = row + oh * g.w_out;
          if (ih < 0 || ih >= g.h_in) {
            std::fill(dst, dst + g.w_out, Scalar(0));
            continue;
          }
          const Scalar* src = image + (c * g.h_in + ih) * g.w_in;
          for (Index ow = 0; ow < g.w_out; ++ow) {
            const Index iw = ow * g.stride - g.pad + kw;
            dst[ow] = (iw >= 0 && iw < g.w_in) ? src[iw] : Scalar(0);
          }
        }
      }
}

template <typename Scalar>
void col2im(const Scalar* col, const ConvGeometry& g, Scalar* image) {
  for (Index c = 0; c < g.c_in; ++c)
    for (Index kh = 0; kh < g.k; ++kh)
      for (Index kw = 0; kw < g.k; ++kw) {
        const Scalar* row = col + ((c * g.k + kh) * g.k + kw) * g.cols();
        for (Index oh = 0; oh < g.h_out; ++oh) {
          const Index ih = oh * g.stride - g.pad + kh;
          if (ih < 0 || ih >= g.h_in) continue;
          Scalar* dst = image + (c * g.h_in + ih) * g.w_in;
          const Scalar* src = row + oh * g.w_out;
          for (Index ow = 0; ow < g.w_out; ++ow) {
            const Index iw = ow * g.stride - g.pad + kw;
            if (iw >= 0 && iw < g.w_in) dst[iw] += src[ow];
          }
        }
      }
}

// Broadcast strides: an operand extent of 1 against a larger result extent gets stride 0.
struct Broadcast {
  Shape out;
  Index sa[4], sb[4];
};

Broadcast broadcast_shapes(const Shape& a, const Shape& b) {
  const Index ea[4] = {a.n, a.c, a.h, a.w};
  const Index eb[4] = {b.n, b.c, b.h, b.w};
  Index eo[4];
  for (int d = 0; d < 4; ++d) {
    if (ea[d] == eb[d] || eb[d] == 1) eo[d] = ea[d];
    else if (ea[d] == 1) eo[d] = eb[d];
    else throw Error("shape", "cannot broadcast " + a.str() + " with " + b.str());
  }
  if (ea[0] != eb[0]) throw Error("shape", "batch extents differ: " + a.str() + " vs " + b.str());
  Broadcast r;
  r.out = Shape{eo[0], eo[1], eo[2], eo[3]};
  Index ta = 1, tb = 1;
  for (int d = 3; d >= 0; --d) {
    r.sa[d] = (ea[d] == 1 && eo[d] != 1) ? 0 : ta;
    r.sb[d] = (eb[d] == 1 && eo[d] != 1) ? 0 : tb;
    ta *= ea[d];
    tb *= eb[d];
  }
  return r;
}

template <typename F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const Shape& o = bc.out;
  Index i = 0;
  for (Index n = 0; n < o.n; ++n)
    for (Index c = 0; c < o.c; ++c)
      for (Index h = 0; h < o.h; ++h) {
        Index ia = n * bc.sa[0] + c * bc.sa[1] + h * bc.sa[2];
        Index ib = n * bc.sb[0] + c * bc.sb[1] + h * bc.sb[2];
        for (Index w = 0; w < o.w; ++w, ++i) f(i, ia + w * bc.sa[3], ib + w * bc.sb[3]);
      }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, Index stride, Index padding) {
  const Shape& x = input.shape();
  const Shape& ws = weight.shape();
  require(stride > 0 && padding >= 0, "argument", "conv2d: stride must be positive, padding non-negative");
  require(ws.h == ws.w, "shape", "conv2d: kernel must be square, got " + ws.str());
  require(ws.c == x.c, "shape",
          "conv2d: input has " + std::to_string(x.c) + " channels, weight expects " + std::to_string(ws.c));
  require(!bias.defined() || bias.size() == ws.n, "shape", "conv2d: bias extent must equal c_out");
  const Index h_span = x.h + 2 * padding - ws.h;
  const Index w_span = x.w + 2 * padding - ws.w;
  require(h_span >= 0 && w_span >= 0, "shape", "conv2d: output extent would be non-positive for input " + x.str());

  ConvGeometry g{x.c, x.h, x.w, ws.h, stride, padding, h_span / stride + 1, w_span / stride + 1};
  const Index c_out = ws.n;
  const Shape out_shape{x.n, c_out, g.h_out, g.w_out};
  typename Tensor<Scalar>::Array out(out_shape.size());

  ConstMatMap<Scalar> w_mat(weight.data(), c_out, g.rows());
  RowMat<Scalar> col;
  if (!g.pointwise()) col.resize(g.rows(), g.cols());
  for (Index i = 0; i < x.n; ++i) {
    const Scalar* image = input.data() + i * x.c * x.h * x.w;
    MatMap<Scalar> out_mat(out.data() + i * c_out * g.cols(), c_out, g.cols());
    if (g.pointwise()) {
      out_mat.noalias() = w_mat * ConstMatMap<Scalar>(image, g.rows(), g.cols());
    } else {
      im2col(image, g, col.data());
      out_mat.noalias() = w_mat * col;
    }
    if (bias.defined())
      out_mat.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias.data(), c_out);
  }

  return make_result<Scalar>(
      "conv2d", out_shape, std::move(out), {input, weight, bias},
      [input, weight, bias, g, c_out](const Node<Scalar>& self) {
        const Shape& x = input.shape();
        RowMat<Scalar> col, dcol;
        if (!g.pointwise()) col.resize(g.rows(), g.cols());
        RowMat<Scalar> dw = RowMat<Scalar>::Zero(c_out, g.rows());
        typename Tensor<Scalar>::Array dx;
        if (input.requires_grad()) dx = Tensor<Scalar>::Array::Zero(input.size());
        Eigen::Matrix<Scalar, Eigen::Dynamic, 1> db = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(c_out);
        ConstMatMap<Scalar> w_mat(weight.data(), c_out, g.rows());
        for (Index i = 0; i < x.n; ++i) {
          const Scalar* image = input.data() + i * x.c * x.h * x.w;
          ConstMatMap<Scalar> dout(self.grad.data() + i * c_out * g.cols(), c_out, g.cols());
          if (weight.requires_grad()) {
            if (g.pointwise()) {
              dw.noalias() += dout * ConstMatMap<Scalar>(image, g.rows(), g.cols()).transpose();
            } else {
              im2col(image, g, col.data());
              dw.noalias() += dout * col.transpose();
            }
          }
          if (bias.defined() && bias.requires_grad()) db += dout.rowwise().sum();
          if (input.requires_grad()) {
            Scalar* dimage = dx.data() + i * x.c * x.h * x.w;
            if (g.pointwise()) {
              MatMap<Scalar>(dimage, g.rows(), g.cols()).noalias() += w_mat.transpose() * dout;
            } else {
              dcol.noalias() = w_mat.transpose() * dout;
              col2im(dcol.data(), g, dimage);
            }
          }
        }
        if (weight.requires_grad())
          weight.node()->accumulate(Eigen::Map<const typename Tensor<Scalar>::Array>(dw.data(), dw.size()));
        if (bias.defined()) accumulate(bias, db.array());
        if (input.requires_grad()) input.node()->accumulate(dx);
      });
}

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias) {
  const Index n = input.shape().n;
  const Index d_in = input.size() / std::max<Index>(n, 1);
  const Index d_out = weight.shape().n;
  require(weight.size() == d_out * d_in, "shape",
          "linear: weight " + weight.shape().str() + " incompatible with input " + input.shape().str());
  require(!bias.defined() || bias.size() == d_out, "shape", "linear: bias extent must equal d_out");

  const Shape out_shape{n, d_out, 1, 1};
  typename Tensor<Scalar>::Array out(out_shape.size());
  MatMap<Scalar> y(out.data(), n, d_out);
  y.noalias() = ConstMatMap<Scalar>(input.data(), n, d_in) * ConstMatMap<Scalar>(weight.data(), d_out, d_in).transpose();
  if (bias.defined())
    y.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(bias.data(), d_out);

  return make_result<Scalar>(
      "linear", out_shape, std::move(out), {input, weight, bias},
      [input, weight, bias, n, d_in, d_out](const Node<Scalar>& self) {
        ConstMatMap<Scalar> dy(self.grad.data(), n, d_out);
        if (input.requires_grad()) {
          RowMat<Scalar> dx = dy * ConstMatMap<Scalar>(weight.data(), d_out, d_in);
          input.node()->accumulate(Eigen::Map<const typename Tensor<Scalar>::Array>(dx.data(), dx.size()));
        }
        if (weight.requires_grad()) {
          RowMat<Scalar> dw = dy.transpose() * ConstMatMap<Scalar>(input.data(), n, d_in);
          weight.node()->accumulate(Eigen::Map<const typename Tensor<Scalar>::Array>(dw.data(), dw.size()));
        }
        if (bias.defined() && bias.requires_grad()) {
          Eigen::Matrix<Scalar, 1, Eigen::Dynamic> db = dy.colwise().sum();
          bias.node()->accumulate(db.transpose().array());
        }
      });
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& input) {
  const Shape& s = input.shape();
  require(s.spatial() >= 1, "shape", "global_avg_pool: empty spatial extent in " + s.str());
  const Index rows = s.n * s.c, hw = s.spatial();
  ConstMatMap<Scalar> x(input.data(), rows, hw);
  typename Tensor<Scalar>::Array out = x.rowwise().mean().array();
  return make_result<Scalar>("global_avg_pool", Shape{s.n, s.c, 1, 1}, std::move(out), {input},
                             [input, rows, hw](const Node<Scalar>& self) {
                               RowMat<Scalar> dx(rows, hw);
                               dx.colwise() = self.grad.matrix() / Scalar(hw);
                               input.node()->accumulate(
                                   Eigen::Map<const typename Tensor<Scalar>::Array>(dx.data(), dx.size()));
                             });
}

template <typename Scalar>
Tensor<Scalar> avg_pool_2x2(const Tensor<Scalar>& input) {
  const Shape& s = input.shape();
  require(s.h % 2 == 0 && s.w % 2 == 0, "shape", "avg_pool_2x2: odd spatial extent in " + s.str());
  const Shape o{s.n, s.c, s.h / 2, s.w / 2};
  typename Tensor<Scalar>::Array out(o.size());
  const Scalar* x = input.data();
  Index i = 0;
  for (Index p = 0; p < s.n * s.c; ++p)
    for (Index h = 0; h < o.h; ++h)
      for (Index w = 0; w < o.w; ++w, ++i) {
        const Scalar* top = x + (p * s.h + 2 * h) * s.w + 2 * w;
        out[i] = (top[0] + top[1] + top[s.w] + top[s.w + 1]) * Scalar(0.25);
      }
  return make_result<Scalar>("avg_pool_2x2", o, std::move(out), {input}, [input, o](const Node<Scalar>& self) {
    const Shape& s = input.shape();
    typename Tensor<Scalar>::Array dx(s.size());
    Index i = 0;
    for (Index p = 0; p < s.n * s.c; ++p)
      for (Index h = 0; h < o.h; ++h)
        for (Index w = 0; w < o.w; ++w, ++i) {
          Scalar* top = dx.data() + (p * s.h + 2 * h) * s.w + 2 * w;
          const Scalar g = self.grad[i] * Scalar(0.25);
          top[0] = top[1] = top[s.w] = top[s.w + 1] = g;
        }
    input.node()->accumulate(dx);
  });
}

template <typename Scalar>
Tensor<Scalar> max_pool2d(const Tensor<Scalar>& input, Index kernel, Index stride, Index padding) {
  const Shape& s = input.shape();
  require(kernel > 0 && stride > 0 && padding >= 0 && padding < kernel, "argument", "max_pool2d: bad window");
  const Index h_span = s.h + 2 * padding - kernel, w_span = s.w + 2 * padding - kernel;
  require(h_span >= 0 && w_span >= 0, "shape", "max_pool2d: output extent would be non-positive");
  const Shape o{s.n, s.c, h_span / stride + 1, w_span / stride + 1};
  typename Tensor<Scalar>::Array out(o.size());
  std::vector<Index> argmax(o.size());
  Index i = 0;
  for (Index p = 0; p < s.n * s.c; ++p)
    for (Index oh = 0; oh < o.h; ++oh)
      for (Index ow = 0; ow < o.w; ++ow, ++i) {
        Scalar best = -std::numeric_limits<Scalar>::infinity();
        Index best_at = -1;
        for (Index kh = 0; kh < kernel; ++kh) {
          const Index ih = oh * stride - padding + kh;
          if (ih < 0 || ih >= s.h) continue;
          for (Index kw = 0; kw < kernel; ++kw) {
            const Index iw = ow * stride - padding + kw;
            if (iw < 0 || iw >= s.w) continue;
            const Index at = (p * s.h + ih) * s.w + iw;
            if (input.data()[at] > best) {
              best = input.data()[at];
              best_at = at;
            }
          }
        }
        out[i] = best;
        argmax[i] = best_at;
      }
  return make_result<Scalar>("max_pool2d", o, std::move(out), {input},
                             [input, argmax = std::move(argmax)](const Node<Scalar>& self) {
                               typename Tensor<Scalar>::Array dx = Tensor<Scalar>::Array::Zero(input.size());
                               for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += self.grad[i];
                               input.node()->accumulate(dx);
                             });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& input) {
  typename Tensor<Scalar>::Array out = Scalar(1) / (Scalar(1) + (-input.values()).exp());
  return make_result<Scalar>("sigmoid", input.shape(), std::move(out), {input}, [input](const Node<Scalar>& self) {
    input.node()->accumulate(self.grad * self.values * (Scalar(1) - self.values));
  });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& input) {
  typename Tensor<Scalar>::Array out = input.values().max(Scalar(0));
  return make_result<Scalar>("relu", input.shape(), std::move(out), {input}, [input](const Node<Scalar>& self) {
    input.node()->accumulate((input.values() > Scalar(0)).select(self.grad, Scalar(0)));
  });
}

template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& input, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          BatchNormStats<Scalar>& stats, Mode mode) {
  using Array = typename Tensor<Scalar>::Array;
  const Shape& s = input.shape();
  require(gamma.size() == s.c && beta.size() == s.c && stats.mean.size() == s.c, "shape",
          "batch_norm: per-channel parameters must have " + std::to_string(s.c) + " entries");
  const Index hw = s.spatial(), count = s.n * hw;
  const Scalar eps = Scalar(kBatchNormEpsilon);

  Array mean(s.c), inv_std(s.c);
  if (mode == Mode::Train) {
    require(count > 0, "shape", "batch_norm: empty batch");
    Array var(s.c);
    for (Index c = 0; c < s.c; ++c) {
      Scalar acc = 0;
      for (Index n = 0; n < s.n; ++n) acc += input.values().segment((n * s.c + c) * hw, hw).sum();
      mean[c] = acc / Scalar(count);
      Scalar sq = 0;
      for (Index n = 0; n < s.n; ++n)
        sq += (input.values().segment((n * s.c + c) * hw, hw) - mean[c]).square().sum();
      var[c] = sq / Scalar(count);
    }
    inv_std = (var + eps).rsqrt();
    const Scalar m = Scalar(kBatchNormMomentum);
    const Array unbiased = count > 1 ? Array(var * Scalar(count) / Scalar(count - 1)) : var;
    stats.mean = (Scalar(1) - m) * stats.mean + m * mean;
    stats.var = (Scalar(1) - m) * stats.var + m * unbiased;
  } else {
    mean = stats.mean;
    inv_std = (stats.var + eps).rsqrt();
  }

  Array xhat(s.size()), out(s.size());
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c) {
      const Index off = (n * s.c + c) * hw;
      xhat.segment(off, hw) = (input.values().segment(off, hw) - mean[c]) * inv_std[c];
      out.segment(off, hw) = xhat.segment(off, hw) * gamma.values()[c] + beta.values()[c];
    }

  const bool train = mode == Mode::Train;
  return make_result<Scalar>(
      "batch_norm", s, std::move(out), {input, gamma, beta},
      [input, gamma, beta, xhat = std::move(xhat), inv_std, train](const Node<Scalar>& self) {
        const Shape& s = input.shape();
        const Index hw = s.spatial(), count = s.n * hw;
        Array dgamma = Array::Zero(s.c), dbeta = Array::Zero(s.c);
        for (Index n = 0; n < s.n; ++n)
          for (Index c = 0; c < s.c; ++c) {
            const Index off = (n * s.c + c) * hw;
            dgamma[c] += (self.grad.segment(off, hw) * xhat.segment(off, hw)).sum();
            dbeta[c] += self.grad.segment(off, hw).sum();
          }
        if (input.requires_grad()) {
          Array dx(s.size());
          for (Index n = 0; n < s.n; ++n)
            for (Index c = 0; c < s.c; ++c) {
              const Index off = (n * s.c + c) * hw;
              const Scalar g = gamma.values()[c];
              if (train) {
                // dx = γ·σ⁻¹/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
                dx.segment(off, hw) = g * inv_std[c] / Scalar(count) *
                                      (Scalar(count) * self.grad.segment(off, hw) - dbeta[c] -
                                       xhat.segment(off, hw) * dgamma[c]);
              } else {
                dx.segment(off, hw) = g * inv_std[c] * self.grad.segment(off, hw);
              }
            }
          input.node()->accumulate(dx);
        }
        accumulate(gamma, dgamma);
        accumulate(beta, dbeta);
      });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const Broadcast bc = broadcast_shapes(a.shape(), b.shape());
  typename Tensor<Scalar>::Array out(bc.out.size());
  const Scalar* pa = a.data();
  const Scalar* pb = b.data();
  for_each_broadcast(bc, [&](Index i, Index ia, Index ib) { out[i] = pa[ia] * pb[ib]; });
  return make_result<Scalar>("mul", bc.out, std::move(out), {a, b}, [a, b, bc](const Node<Scalar>& self) {
    using Array = typename Tensor<Scalar>::Array;
    Array da, db;
    if (a.requires_grad()) da = Array::Zero(a.size());
    if (b.requires_grad()) db = Array::Zero(b.size());
    const Scalar* pa = a.data();
    const Scalar* pb = b.data();
    for_each_broadcast(bc, [&](Index i, Index ia, Index ib) {
      if (da.size()) da[ia] += self.grad[i] * pb[ib];
      if (db.size()) db[ib] += self.grad[i] * pa[ia];
    });
    if (da.size()) a.node()->accumulate(da);
    if (db.size()) b.node()->accumulate(db);
  });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require(a.shape() == b.shape(), "shape", "add: shapes differ " + a.shape().str() + " vs " + b.shape().str());
  return make_result<Scalar>("add", a.shape(), a.values() + b.values(), {a, b}, [a, b](const Node<Scalar>& self) {
    accumulate(a, self.grad);
    accumulate(b, self.grad);
  });
}

template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& a, Scalar value) {
  return make_result<Scalar>("add_scalar", a.shape(), a.values() + value, {a},
                             [a](const Node<Scalar>& self) { a.node()->accumulate(self.grad); });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  return make_result<Scalar>("scale", a.shape(), a.values() * factor, {a},
                             [a, factor](const Node<Scalar>& self) { a.node()->accumulate(self.grad * factor); });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  typename Tensor<Scalar>::Array out = Tensor<Scalar>::Array::Constant(1, a.values().sum());
  return make_result<Scalar>("sum", Shape{1, 1, 1, 1}, std::move(out), {a}, [a](const Node<Scalar>& self) {
    a.node()->accumulate(Tensor<Scalar>::Array::Constant(a.size(), self.grad[0]));
  });
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const std::vector<Tensor<Scalar>>& parts) {
  require(!parts.empty(), "shape", "concat_channels: no inputs");
  const Index n = parts.front().shape().n;
  Index total = 0;
  std::vector<Index> dims;
  for (const auto& p : parts) {
    require(p.shape().n == n, "shape", "concat_channels: batch extents differ");
    dims.push_back(p.size() / std::max<Index>(n, 1));
    total += dims.back();
  }
  const Shape o{n, total, 1, 1};
  typename Tensor<Scalar>::Array out(o.size());
  MatMap<Scalar> y(out.data(), n, total);
  Index col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    y.middleCols(col, dims[k]) = ConstMatMap<Scalar>(parts[k].data(), n, dims[k]);
    col += dims[k];
  }
  return make_result<Scalar>("concat_channels", o, std::move(out), parts,
                             [parts, dims, n, total](const Node<Scalar>& self) {
                               ConstMatMap<Scalar> dy(self.grad.data(), n, total);
                               Index col = 0;
                               for (std::size_t k = 0; k < parts.size(); ++k) {
                                 if (parts[k].requires_grad()) {
                                   RowMat<Scalar> d = dy.middleCols(col, dims[k]);
                                   parts[k].node()->accumulate(
                                       Eigen::Map<const typename Tensor<Scalar>::Array>(d.data(), d.size()));
                                 }
                                 col += dims[k];
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> l2_normalize(const Tensor<Scalar>& input, Scalar epsilon) {
  const Index n = input.shape().n;
  const Index d = input.size() / std::max<Index>(n, 1);
  ConstMatMap<Scalar> x(input.data(), n, d);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> norms = x.rowwise().norm();
  for (Index i = 0; i < n; ++i)
    require(norms[i] > epsilon, "degenerate", "l2_normalize: row " + std::to_string(i) + " has zero norm");
  typename Tensor<Scalar>::Array out(input.size());
  MatMap<Scalar> y(out.data(), n, d);
  y = norms.cwiseInverse().asDiagonal() * x;
  return make_result<Scalar>("l2_normalize", input.shape(), std::move(out), {input},
                             [input, norms, n, d](const Node<Scalar>& self) {
                               ConstMatMap<Scalar> y(self.values.data(), n, d);
                               ConstMatMap<Scalar> g(self.grad.data(), n, d);
                               // d/dx (x/|x|) applied to g: (g − y·⟨y,g⟩)/|x|
                               RowMat<Scalar> dx = g - (y.cwiseProduct(g).rowwise().sum()).asDiagonal() * y;
                               dx = norms.cwiseInverse().asDiagonal() * dx;
                               input.node()->accumulate(
                                   Eigen::Map<const typename Tensor<Scalar>::Array>(dx.data(), dx.size()));
                             });
}

template <typename Scalar>
Tensor<Scalar> flip_horizontal(const Tensor<Scalar>& input) {
  const Shape& s = input.shape();
  auto mirror = [s](const Scalar* src, Scalar* dst) {
    for (Index row = 0; row < s.n * s.c * s.h; ++row)
      for (Index w = 0; w < s.w; ++w) dst[row * s.w + w] = src[row * s.w + (s.w - 1 - w)];
  };
  typename Tensor<Scalar>::Array out(input.size());
  mirror(input.data(), out.data());
  return make_result<Scalar>("flip_horizontal", s, std::move(out), {input}, [input, mirror](const Node<Scalar>& self) {
    typename Tensor<Scalar>::Array dx(input.size());
    mirror(self.grad.data(), dx.data());
    input.node()->accumulate(dx);
  });
}

#define MMGA_INSTANTIATE_OPS(S)                                                                          \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Index, Index);         \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                       \
  template Tensor<S> global_avg_pool(const Tensor<S>&);                                                  \
  template Tensor<S> avg_pool_2x2(const Tensor<S>&);                                                     \
  template Tensor<S> max_pool2d(const Tensor<S>&, Index, Index, Index);                                  \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                          \
  template Tensor<S> relu(const Tensor<S>&);                                                             \
  template Tensor<S> batch_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, BatchNormStats<S>&, \
                                Mode);                                                                   \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                            \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                            \
  template Tensor<S> add_scalar(const Tensor<S>&, S);                                                    \
  template Tensor<S> scale(const Tensor<S>&, S);                                                         \
  template Tensor<S> sum(const Tensor<S>&);                                                              \
  template Tensor<S> concat_channels(const std::vector<Tensor<S>>&);                                     \
  template Tensor<S> l2_normalize(const Tensor<S>&, S);                                                  \
  template Tensor<S> flip_horizontal(const Tensor<S>&);

MMGA_INSTANTIATE_OPS(float)
MMGA_INSTANTIATE_OPS(double)

}  // namespace mmga
