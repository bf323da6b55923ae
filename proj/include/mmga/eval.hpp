#pragma once

#include "mmga/data.hpp"
#include "mmga/network.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mmga {

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FeatureGallery {
  FeatureMatrix features;  // one unit-norm row per image
  std::vector<int> person_ids;
  std::vector<int> camera_ids;
  Split role = Split::Gallery;

  Index size() const { return features.rows(); }
};

/// Flip-averaged embeddings: f_raw of each image and of its mirror are
/// averaged, then the rows are scaled to unit norm.
FeatureGallery extract(Model<float>& model, const Dataset& data, std::span<const std::size_t> indices, Split role,
                       Index batch_size = 32);

/// Euclidean distances between rows, computed in double precision.
Eigen::MatrixXd distances(const FeatureGallery& query, const FeatureGallery& gallery);

struct EvalReport {
  std::vector<double> cmc;           // cmc[k] = fraction matched within rank k+1
  double mAP = 0;
  std::vector<double> per_query_ap;  // valid queries only
  std::vector<Index> query_index;    // which query each AP belongs to
  Index num_valid_queries = 0;

  double rank(Index k) const;  // 1-based; saturates past the curve's end
  bool operator==(const EvalReport&) const = default;
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

/// Single-query CMC and mAP. Gallery entries sharing the query's identity
/// and camera are dropped, as are entries with a negative identity. Ties in
/// distance keep gallery order. Queries without a remaining positive are
/// skipped; if none remain, throws Error("eval").
EvalReport cmc_map(const Eigen::MatrixXd& dist, std::span<const int> query_ids, std::span<const int> query_cams,
                   std::span<const int> gallery_ids, std::span<const int> gallery_cams, Index max_rank = 50);

/// "Rank1 95.0 / Rank5 98.3 / Rank10 99.1 / mAP 87.2"
std::string render_report(const EvalReport& report);

/// Mean |S_norm − M| per supervised attention map (variant_mask_targets
/// order) over the given images, eval mode, no augmentation.
std::vector<double> mask_agreement(Model<float>& model, const Dataset& data, std::span<const std::size_t> indices,
                                   const GroupingTable& grouping);

/// "MMGA-EMB" + u32 count + u32 dim + f32 rows, with `<path>.json` holding
/// identities, cameras and role.
void write_embeddings(const std::filesystem::path& path, const FeatureGallery& gallery);
FeatureGallery read_embeddings(const std::filesystem::path& path);

}  // namespace mmga
