#pragma once

#include "mmga/attention.hpp"
#include "mmga/masks.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mmga {

/// Ablation variants, from plain backbone to multi-scale part guidance.
enum class Variant { Baseline, BaselineAtt, WMGA, DMGA, MMGA };

inline constexpr std::array<Variant, 5> kAllVariants = {Variant::Baseline, Variant::BaselineAtt, Variant::WMGA,
                                                        Variant::DMGA, Variant::MMGA};

std::string to_string(Variant v);
/// Accepts "Baseline", "BaselineAtt" (or "Baseline+Att"), "WMGA", "DMGA", "MMGA".
Variant parse_variant(const std::string& name);

bool has_attention(Variant v);
bool has_part_branches(Variant v);
bool has_mask_guidance(Variant v);

enum class BlockKind { Basic, Bottleneck };

struct ModelConfig {
  std::string preset = "paper";
  Variant variant = Variant::MMGA;
  Index input_height = 384;
  Index input_width = 128;
  Index stem_width = 64;
  BlockKind block = BlockKind::Bottleneck;
  std::array<Index, 4> stage_widths{256, 512, 1024, 2048};
  std::array<Index, 4> stage_blocks{3, 4, 6, 3};
  Index head_whole = 1024;
  Index head_upper = 512;
  Index head_bottom = 512;
  Index attention_s = 8;
  Index attention_r = 8;
  Index attention_height = 24;
  Index attention_width = 8;
  Index num_identities = 751;

  /// Resnet50-style backbone at 384×128, heads 1024/512/512.
  static ModelConfig paper();
  /// Small basic-block backbone at 96×32, heads 64/32/32, attention grid 6×2.
  static ModelConfig toy();

  /// Feature dimension of f_all for this variant.
  Index embedding_dim() const;
  /// Throws Error("config") on inconsistent extents or divisibility.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Convolution followed by batch norm (conv has no bias).
template <typename Scalar>
struct ConvBn {
  Tensor<Scalar> weight;
  Tensor<Scalar> gamma, beta;
  BatchNormStats<Scalar> stats;
  Index stride = 1, padding = 0;

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode);
};

template <typename Scalar>
struct ResidualBlock {
  std::vector<ConvBn<Scalar>> path;  // ReLU between layers, none after the last
  std::optional<ConvBn<Scalar>> shortcut;

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode);
};

enum class ParamTrack { Backbone, Other };

template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> tensor;
  ParamTrack track;
};

/// Learnable tensors sharing one learning-rate track.
template <typename Scalar>
struct ParamGroup {
  std::string id;
  ParamTrack track;
  std::vector<Tensor<Scalar>> tensors;
};

template <typename Scalar>
struct EmbeddingSet {
  Tensor<Scalar> f_w;    // whole-body (or the single global feature)
  Tensor<Scalar> f_u;    // upper body; undefined for single-branch variants
  Tensor<Scalar> f_b;    // bottom body; undefined for single-branch variants
  Tensor<Scalar> f_l;    // concat(f_u, f_b)
  Tensor<Scalar> f_raw;  // concat(f_w, f_u, f_b) before normalization
  Tensor<Scalar> f_all;  // l2_normalize(f_raw)
};

template <typename Scalar>
struct ForwardResult {
  EmbeddingSet<Scalar> embeddings;
  Tensor<Scalar> logits_w;
  Tensor<Scalar> logits_l;  // undefined for single-branch variants
  /// Module 1, then module-2 branches (whole[, upper, bottom]).
  std::vector<AttentionOutput<Scalar>> attention;
  Tensor<Scalar> stage2, stage3, stage4;
  Tensor<Scalar> module2_input;  // stage-3 output after module-1 weighting
};

/// Backbone, attention modules and heads for one variant.
template <typename Scalar>
class Model {
 public:
  static Model build(const ModelConfig& config, std::uint64_t seed);

  ForwardResult<Scalar> forward(const Tensor<Scalar>& images, Mode mode);

  const ModelConfig& config() const { return config_; }
  AttentionConfig attention_config(int module) const;

  std::vector<Parameter<Scalar>> parameters() const;
  std::vector<ParamGroup<Scalar>> param_groups() const;
  Index parameter_count() const;

  /// Parameters plus batch-norm running statistics, by stable name.
  NamedTensors<Scalar> state() const;
  /// Copies values from `named` into the matching state tensors.
  void load_state(const NamedTensors<Scalar>& named);

  void zero_grad();

 private:
  ModelConfig config_;
  ConvBn<Scalar> stem_;
  std::array<std::vector<ResidualBlock<Scalar>>, 4> stages_;
  std::optional<AttentionParams<Scalar>> module1_;
  std::vector<AttentionParams<Scalar>> module2_;  // whole[, upper, bottom]
  std::vector<std::pair<Tensor<Scalar>, Tensor<Scalar>>> heads_;  // (weight, bias) per branch
  Tensor<Scalar> classifier_w_, classifier_l_;
};

/// Per-branch attention targets, in loss order (L1w, L2w[, L2u, L2b]).
/// Baseline and BaselineAtt get none; WMGA gets the whole mask twice; DMGA
/// uses the middle-line halves for the part branches.
std::vector<MaskMap> variant_mask_targets(Variant variant, const MaskSet& masks, Index height, Index width);

/// Checkpoint directory: one MMGA-TNS file per state tensor plus
/// manifest.json holding `extra` and the tensor list.
void save_checkpoint(const std::filesystem::path& dir, const Model<float>& model, const nlohmann::json& extra);
/// Returns the model and the manifest.
std::pair<Model<float>, nlohmann::json> load_checkpoint(const std::filesystem::path& dir);

}  // namespace mmga
