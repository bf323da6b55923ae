#pragma once

#include "mmga/masks.hpp"
#include "mmga/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mmga {

enum class Split { Train, Query, Gallery };

std::string to_string(Split s);
Split parse_split(const std::string& name);

/// One manifest row. `label` is the dense training index in [0, N) for
/// train rows and -1 otherwise.
struct Sample {
  std::filesystem::path image;
  std::filesystem::path labels;
  int person_id = 0;
  int camera_id = 0;
  Split split = Split::Train;
  int label = -1;
};

struct Manifest {
  std::vector<Sample> samples;
  int num_train_ids = 0;
  std::array<Index, 3> split_counts{};  // train, query, gallery

  std::vector<std::size_t> indices(Split split) const;
};

/// Parses `image,labels,person_id,camera_id,split`. Relative paths resolve
/// against the manifest's directory. Train identities are re-indexed densely
/// in order of first appearance.
Manifest load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<Sample>& samples);

struct PKBatchSpec {
  Index p = 24;
  Index k = 4;

  Index batch_size() const { return p * k; }
  void validate() const;
};

/// P distinct training identities, K samples each (with replacement when an
/// identity has fewer than K). Returns indices into `samples`, grouped by
/// identity.
std::vector<std::size_t> pk_sample(const std::vector<Sample>& samples, const PKBatchSpec& spec, std::mt19937_64& rng);

/// One epoch of PK batches: identities are shuffled and dealt P at a time so
/// each appears at least once; the last batch is topped up with other
/// identities. ceil(N / P) batches.
std::vector<std::vector<std::size_t>> pk_epoch(const std::vector<Sample>& samples, const PKBatchSpec& spec,
                                               std::mt19937_64& rng);

struct AugmentConfig {
  double flip_probability = 0.5;
  double erase_probability = 0.5;
  double erase_area_min = 0.02;
  double erase_area_max = 0.4;
  double erase_aspect_min = 0.3;
  double erase_aspect_max = 3.33;
  std::array<float, 3> fill{127.5f, 127.5f, 127.5f};  // per-channel mean, pixel units

  void validate() const;
};

/// Overrides for tests: force the flip decision or an erase of a given
/// area fraction (aspect still drawn from the configured range).
struct AugmentOverride {
  std::optional<bool> flip;
  std::optional<double> erase_area;
};

/// Pixel values in [0,255], planar (3, h, w).
using PlanarImage = Eigen::Array<float, 3, Eigen::Dynamic, Eigen::RowMajor>;

struct Augmented {
  PlanarImage image;
  PartLabelMap labels;
  Index height = 0, width = 0;
};

/// Bilinear resize for the image, nearest for the label map.
PlanarImage resize_bilinear(const RgbImage& image, Index height, Index width);
PartLabelMap resize_nearest(const PartLabelMap& labels, Index height, Index width);
PlanarImage flip_image(const PlanarImage& image, Index height, Index width);
PartLabelMap flip_labels(const PartLabelMap& labels);

/// Resize to (height, width); in train mode also flip (image and labels
/// together) and random-erase the image only.
Augmented augment(const RgbImage& image, const PartLabelMap& labels, Index height, Index width, std::mt19937_64& rng,
                  bool train, const AugmentConfig& config = {}, const AugmentOverride& force = {});

/// (x/255 − 0.5) / 0.25 per pixel.
inline constexpr float kPixelCenter = 0.5f;
inline constexpr float kPixelScale = 0.25f;
float normalize_pixel(float value);

/// Decoded corpus held in memory.
struct Dataset {
  Manifest manifest;
  std::vector<RgbImage> images;
  std::vector<PartLabelMap> labels;
  std::array<float, 3> channel_mean{};  // over training images

  /// Reads every image and label map; validates labels and extents.
  static Dataset load(const std::filesystem::path& manifest_path);
};

/// A normalized image batch with per-image attention targets.
struct Batch {
  Tensorf images;            // (n, 3, h, w)
  std::vector<int> labels;   // dense train ids (or person ids outside train)
  std::vector<MaskSet> masks;
};

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, Index height, Index width,
                 Index attention_height, Index attention_width, const GroupingTable& grouping, std::mt19937_64& rng,
                 bool train, const AugmentConfig& config);

struct SynthConfig {
  int num_ids = 20;
  int per_id = 8;
  std::uint64_t seed = 0;
  Index height = 144;
  Index width = 48;
  int cameras = 2;
};

/// A rendered person with the generator's own bookkeeping of which visible
/// pixels belong to the upper and bottom body.
struct SynthImage {
  RgbImage image;
  PartLabelMap labels;
  MaskMap upper;
  MaskMap bottom;
};

/// Identity appearance depends on (seed, person_id); pose, clutter,
/// occlusion and noise also on `image_index`.
SynthImage render_person(int person_id, int camera_id, int image_index, std::uint64_t seed, Index height,
                         Index width);

/// Writes images/, labels/ and manifest.csv under `out_dir`. The first half
/// of the identities is the training split; for the rest the first image of
/// each camera is a query and the remainder form the gallery.
std::vector<Sample> synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace mmga
