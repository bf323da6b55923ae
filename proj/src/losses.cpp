#include "mmga/losses.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <map>

namespace mmga {

void LossWeights::validate() const {
  if (lambda0 < 0 || lambda1 < 0 || lambda2 < 0 || margin < 0)
    throw Error("config", "loss weights and margin must be non-negative");
}

template <typename Scalar>
Tensor<Scalar> attention_rmse(const Tensor<Scalar>& s_norm, const Tensor<Scalar>& target, bool per_pixel_mean) {
  if (s_norm.shape() != target.shape())
    throw Error("shape", "attention_rmse: shapes differ " + s_norm.shape().str() + " vs " + target.shape().str());
  const Shape& s = s_norm.shape();
  const Scalar divisor = Scalar(per_pixel_mean ? s.size() : s.n);
  const typename Tensor<Scalar>::Array diff = s_norm.values() - target.values();
  const Scalar loss = std::sqrt(diff.square().sum() / divisor);
  return make_result<Scalar>("attention_rmse", Shape{1, 1, 1, 1}, Tensor<Scalar>::Array::Constant(1, loss),
                             {s_norm, target}, [s_norm, target, diff, divisor](const detail::Node<Scalar>& self) {
                               const Scalar loss = self.values[0];
                               if (loss == Scalar(0)) return;
                               const typename Tensor<Scalar>::Array g = diff * (self.grad[0] / (divisor * loss));
                               if (s_norm.requires_grad()) s_norm.node()->accumulate(g);
                               if (target.requires_grad()) target.node()->accumulate(-g);
                             });
}

template <typename Scalar>
Tensor<Scalar> attention_total(const Tensor<Scalar>& l1w, const Tensor<Scalar>& l2w, const Tensor<Scalar>& l2u,
                               const Tensor<Scalar>& l2b, double lambda0) {
  return add(add(l1w, l2w), scale(add(l2u, l2b), Scalar(lambda0)));
}

template <typename Scalar>
Tensor<Scalar> softmax_loss(const Tensor<Scalar>& logits, std::span<const int> labels) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Index n = logits.shape().n;
  const Index classes = logits.size() / std::max<Index>(n, 1);
  if (static_cast<Index>(labels.size()) != n)
    throw Error("shape", "softmax_loss: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(n));
  for (int y : labels)
    if (y < 0 || y >= classes)
      throw Error("label", "softmax_loss: identity " + std::to_string(y) + " outside [0," + std::to_string(classes) + ")");

  Eigen::Map<const Mat> z(logits.data(), n, classes);
  Mat probs(n, classes);
  Scalar loss = 0;
  for (Index i = 0; i < n; ++i) {
    const Scalar top = z.row(i).maxCoeff();
    probs.row(i) = (z.row(i).array() - top).exp().matrix();
    const Scalar denom = probs.row(i).sum();
    probs.row(i) /= denom;
    loss += std::log(denom) + top - z(i, labels[i]);
  }
  loss /= Scalar(n);
  std::vector<int> ys(labels.begin(), labels.end());
  return make_result<Scalar>("softmax_loss", Shape{1, 1, 1, 1}, Tensor<Scalar>::Array::Constant(1, loss), {logits},
                             [logits, probs, ys](const detail::Node<Scalar>& self) {
                               Mat d = probs;
                               for (std::size_t i = 0; i < ys.size(); ++i) d(Index(i), ys[i]) -= Scalar(1);
                               d *= self.grad[0] / Scalar(ys.size());
                               logits.node()->accumulate(
                                   Eigen::Map<const typename Tensor<Scalar>::Array>(d.data(), d.size()));
                             });
}

std::pair<Index, Index> validate_pk(std::span<const int> identities) {
  std::map<int, Index> counts;
  for (int id : identities) ++counts[id];
  if (counts.empty()) throw Error("batch", "empty batch");
  const Index k = counts.begin()->second;
  for (const auto& [id, count] : counts)
    if (count != k) throw Error("batch", "batch is not in P×K form: identity " + std::to_string(id) + " appears " +
                                             std::to_string(count) + " times, expected " + std::to_string(k));
  const Index p = static_cast<Index>(counts.size());
  if (k < 2) throw Error("batch", "batch-hard triplet needs K >= 2");
  if (p < 2) throw Error("batch", "batch-hard triplet needs P >= 2");
  return {p, k};
}

template <typename Scalar>
Tensor<Scalar> batch_hard_triplet(const Tensor<Scalar>& embeddings, std::span<const int> identities, double margin) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Index n = embeddings.shape().n;
  if (static_cast<Index>(identities.size()) != n)
    throw Error("shape", "batch_hard_triplet: identity count does not match batch");
  validate_pk(identities);
  const Index d = embeddings.size() / n;
  Eigen::Map<const Mat> f(embeddings.data(), n, d);

  Mat dist(n, n);
  for (Index a = 0; a < n; ++a)
    for (Index b = 0; b < n; ++b) dist(a, b) = (f.row(a) - f.row(b)).norm();

  struct Hardest {
    Index pos, neg;
  };
  std::vector<Hardest> active;  // anchors with a positive hinge, plus their picks
  std::vector<Index> anchors;
  Scalar loss = 0;
  for (Index a = 0; a < n; ++a) {
    Index pos = -1, neg = -1;
    for (Index b = 0; b < n; ++b) {
      if (b == a) continue;
      if (identities[b] == identities[a]) {
        if (pos < 0 || dist(a, b) > dist(a, pos)) pos = b;
      } else if (neg < 0 || dist(a, b) < dist(a, neg)) {
        neg = b;
      }
    }
    const Scalar hinge = Scalar(margin) + dist(a, pos) - dist(a, neg);
    if (hinge > Scalar(0)) {
      loss += hinge;
      anchors.push_back(a);
      active.push_back({pos, neg});
    }
  }
  loss /= Scalar(n);

  return make_result<Scalar>(
      "batch_hard_triplet", Shape{1, 1, 1, 1}, Tensor<Scalar>::Array::Constant(1, loss), {embeddings},
      [embeddings, dist, anchors, active, n, d](const detail::Node<Scalar>& self) {
        Eigen::Map<const Mat> f(embeddings.data(), n, d);
        Mat g = Mat::Zero(n, d);
        const Scalar scale = self.grad[0] / Scalar(n);
        for (std::size_t k = 0; k < anchors.size(); ++k) {
          const Index a = anchors[k], p = active[k].pos, q = active[k].neg;
          if (dist(a, p) > Scalar(0)) {
            const auto u = ((f.row(a) - f.row(p)) / dist(a, p)).eval();
            g.row(a) += scale * u;
            g.row(p) -= scale * u;
          }
          if (dist(a, q) > Scalar(0)) {
            const auto u = ((f.row(a) - f.row(q)) / dist(a, q)).eval();
            g.row(a) -= scale * u;
            g.row(q) += scale * u;
          }
        }
        embeddings.node()->accumulate(Eigen::Map<const typename Tensor<Scalar>::Array>(g.data(), g.size()));
      });
}

template <typename Scalar>
Tensor<Scalar> total_loss(const Tensor<Scalar>& softmax_w, const Tensor<Scalar>& softmax_l,
                          const Tensor<Scalar>& triplet, const Tensor<Scalar>& attention, const LossWeights& weights) {
  Tensor<Scalar> total = softmax_w;
  if (softmax_l.defined()) total = add(total, softmax_l);
  if (triplet.defined()) total = add(total, scale(triplet, Scalar(weights.lambda1)));
  if (attention.defined()) total = add(total, scale(attention, Scalar(weights.lambda2)));
  return total;
}

std::string LossReport::to_json_line() const {
  nlohmann::ordered_json j;
  j["l1w"] = l1w;
  j["l2w"] = l2w;
  j["l2u"] = l2u;
  j["l2b"] = l2b;
  j["attention"] = attention;
  j["softmax_w"] = softmax_w;
  j["softmax_l"] = softmax_l;
  j["triplet"] = triplet;
  j["total"] = total;
  return j.dump();
}

#define MMGA_INSTANTIATE_LOSSES(S)                                                                              \
  template Tensor<S> attention_rmse(const Tensor<S>&, const Tensor<S>&, bool);                                  \
  template Tensor<S> attention_total(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, double); \
  template Tensor<S> softmax_loss(const Tensor<S>&, std::span<const int>);                                      \
  template Tensor<S> batch_hard_triplet(const Tensor<S>&, std::span<const int>, double);                        \
  template Tensor<S> total_loss(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,         \
                                const LossWeights&);

MMGA_INSTANTIATE_LOSSES(float)
MMGA_INSTANTIATE_LOSSES(double)

}  // namespace mmga
