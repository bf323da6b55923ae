#include "mmga/masks.hpp"

#include <cmath>

namespace mmga {

GroupingTable GroupingTable::lip_default() {
  GroupingTable t;
  // hat, hair, glove, sunglasses, upper-clothes, dress, coat, jumpsuits, scarf, face, arms
  t.upper = {1, 2, 3, 4, 5, 6, 7, 10, 11, 13, 14, 15};
  // dress, socks, pants, jumpsuits, skirt, legs, shoes
  t.bottom = {6, 8, 9, 10, 12, 16, 17, 18, 19};
  return t;
}

void GroupingTable::validate() const {
  for (const auto* group : {&upper, &bottom})
    for (int label : *group) {
      if (label == 0) throw Error("grouping", "background label 0 cannot belong to a body group");
      if (label < 0 || label >= kNumPartLabels)
        throw Error("grouping", "label " + std::to_string(label) + " is outside [0,20)");
    }
  for (int label = 1; label < kNumPartLabels; ++label)
    if (!upper.contains(label) && !bottom.contains(label))
      throw Error("grouping", "label " + std::to_string(label) + " (" + std::string(kPartLabelNames[label]) +
                                  ") belongs to no group");
}

void validate_labels(const PartLabelMap& labels) {
  if (labels.size() > 0 && labels.maxCoeff() >= kNumPartLabels)
    throw Error("label", "label value " + std::to_string(int(labels.maxCoeff())) + " is outside [0,20)");
}

MaskSet group_masks(const PartLabelMap& labels, const GroupingTable& grouping) {
  validate_labels(labels);
  std::array<float, kNumPartLabels> in_upper{}, in_bottom{};
  for (int l : grouping.upper)
    if (l > 0 && l < kNumPartLabels) in_upper[l] = 1.0f;
  for (int l : grouping.bottom)
    if (l > 0 && l < kNumPartLabels) in_bottom[l] = 1.0f;

  MaskSet m{MaskMap(labels.rows(), labels.cols()), MaskMap(labels.rows(), labels.cols()),
            MaskMap(labels.rows(), labels.cols())};
  for (Index i = 0; i < labels.size(); ++i) {
    const int l = labels.data()[i];
    m.whole.data()[i] = l != 0 ? 1.0f : 0.0f;
    m.upper.data()[i] = in_upper[l];
    m.bottom.data()[i] = in_bottom[l];
  }
  return m;
}

namespace {

// weights(o, i): fraction of output cell o covered by input pixel i, for an
// axis of `in` pixels mapped onto `out` cells.
Eigen::MatrixXd coverage_weights(Index in, Index out) {
  Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(out, in);
  const double cell = double(in) / double(out);
  for (Index o = 0; o < out; ++o) {
    const double lo = o * cell, hi = (o + 1) * cell;
    for (Index i = static_cast<Index>(std::floor(lo)); i < in && i < hi; ++i) {
      const double overlap = std::min(hi, double(i + 1)) - std::max(lo, double(i));
      if (overlap > 0) weights(o, i) = overlap / cell;
    }
  }
  return weights;
}

}  // namespace

MaskMap resize_soft(const MaskMap& mask, Index height, Index width) {
  if (height <= 0 || width <= 0) throw Error("shape", "resize_soft: target extent must be positive");
  if (mask.size() == 0) throw Error("shape", "resize_soft: empty input mask");
  const Eigen::MatrixXd rows = coverage_weights(mask.rows(), height);
  const Eigen::MatrixXd cols = coverage_weights(mask.cols(), width);
  const Eigen::MatrixXd resized = rows * mask.cast<double>().matrix() * cols.transpose();
  return resized.array().max(0.0).min(1.0).cast<float>();
}

std::pair<MaskMap, MaskMap> middle_split(const MaskMap& whole) {
  if (whole.rows() % 2 != 0) throw Error("shape", "middle_split: height must be even");
  const Index half = whole.rows() / 2;
  MaskMap upper = MaskMap::Zero(whole.rows(), whole.cols());
  MaskMap bottom = MaskMap::Zero(whole.rows(), whole.cols());
  upper.topRows(half) = whole.topRows(half);
  bottom.bottomRows(whole.rows() - half) = whole.bottomRows(whole.rows() - half);
  return {std::move(upper), std::move(bottom)};
}

MaskSet attention_targets(const PartLabelMap& labels, const GroupingTable& grouping, Index height, Index width) {
  const MaskSet binary = group_masks(labels, grouping);
  return {resize_soft(binary.whole, height, width), resize_soft(binary.upper, height, width),
          resize_soft(binary.bottom, height, width)};
}

ByteMap to_bytes(const MaskMap& mask) {
  return (mask.max(0.0f).min(1.0f) * 255.0f).round().cast<std::uint8_t>();
}

}  // namespace mmga
