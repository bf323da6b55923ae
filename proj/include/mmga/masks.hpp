#pragma once

#include "mmga/image_io.hpp"

#include <array>
#include <set>
#include <string_view>
#include <utility>

namespace mmga {

/// Human-parsing label count (LIP convention, 0 = background).
inline constexpr int kNumPartLabels = 20;

/// Label names in LIP order.
inline constexpr std::array<std::string_view, kNumPartLabels> kPartLabelNames = {
    "background", "hat",       "hair",     "glove",     "sunglasses", "upper-clothes", "dress",
    "coat",       "socks",     "pants",    "jumpsuits", "scarf",      "skirt",         "face",
    "left-arm",   "right-arm", "left-leg", "right-leg", "left-shoe",  "right-shoe"};

/// Per-pixel part labels, values in [0, 20).
using PartLabelMap = ByteMap;

/// Real-valued map in [0,1], row-major (height × width).
using MaskMap = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Assignment of foreground labels to the upper and bottom body groups.
/// A label may sit in both groups (garments spanning the waist).
struct GroupingTable {
  std::set<int> upper;
  std::set<int> bottom;

  /// Default LIP grouping; dress and jumpsuits belong to both groups.
  static GroupingTable lip_default();

  /// Throws Error("grouping") if background is grouped, a label is out of
  /// range, or a foreground label is in neither group.
  void validate() const;
  bool operator==(const GroupingTable&) const = default;
};

/// Whole/upper/bottom maps. Binary after group_masks, soft after resize.
struct MaskSet {
  MaskMap whole;
  MaskMap upper;
  MaskMap bottom;
};

/// Throws Error("label") on any label >= 20.
void validate_labels(const PartLabelMap& labels);

/// Binary whole/upper/bottom masks at label-map resolution.
MaskSet group_masks(const PartLabelMap& labels, const GroupingTable& grouping);

/// Area-weighted downsampling (or upsampling) to (height, width). Each output
/// cell is the coverage-weighted mean of the input pixels it overlaps, so the
/// global mean is preserved.
MaskMap resize_soft(const MaskMap& mask, Index height, Index width);

/// Splits at the middle row: rows [0, h/2) go to the first map, the rest to
/// the second. Requires even height.
std::pair<MaskMap, MaskMap> middle_split(const MaskMap& whole);

/// group_masks followed by resize_soft on each map.
MaskSet attention_targets(const PartLabelMap& labels, const GroupingTable& grouping, Index height, Index width);

/// Scales a [0,1] map to bytes (×255, rounded) for PGM export.
ByteMap to_bytes(const MaskMap& mask);

}  // namespace mmga
