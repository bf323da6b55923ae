#include "mmga/network.hpp"

#include "mmga/tensor_io.hpp"

#include <fstream>
#include <map>
#include <set>

namespace mmga {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Baseline: return "Baseline";
    case Variant::BaselineAtt: return "Baseline+Att";
    case Variant::WMGA: return "WMGA";
    case Variant::DMGA: return "DMGA";
    case Variant::MMGA: return "MMGA";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "Baseline") return Variant::Baseline;
  if (name == "BaselineAtt" || name == "Baseline+Att") return Variant::BaselineAtt;
  if (name == "WMGA") return Variant::WMGA;
  if (name == "DMGA") return Variant::DMGA;
  if (name == "MMGA") return Variant::MMGA;
  throw Error("config", "unknown variant '" + name + "'");
}

bool has_attention(Variant v) { return v != Variant::Baseline; }
bool has_part_branches(Variant v) { return v == Variant::DMGA || v == Variant::MMGA; }
bool has_mask_guidance(Variant v) { return v == Variant::WMGA || v == Variant::DMGA || v == Variant::MMGA; }

ModelConfig ModelConfig::paper() { return ModelConfig{}; }

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.preset = "toy";
  c.input_height = 96;
  c.input_width = 32;
  c.stem_width = 16;
  c.block = BlockKind::Basic;
  c.stage_widths = {16, 32, 64, 128};
  c.stage_blocks = {1, 1, 1, 1};
  c.head_whole = 64;
  c.head_upper = 32;
  c.head_bottom = 32;
  // 32 stage-2 channels are not divisible by 8² = 64.
  c.attention_s = 4;
  c.attention_r = 8;
  c.attention_height = 6;
  c.attention_width = 2;
  c.num_identities = 10;
  return c;
}

Index ModelConfig::embedding_dim() const {
  return variant == Variant::Baseline ? head_whole : head_whole + head_upper + head_bottom;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error("config", m); };
  if (input_height % 16 != 0 || input_width % 16 != 0 || input_height <= 0 || input_width <= 0)
    fail("input extents must be positive multiples of 16");
  if (attention_height != input_height / 16 || attention_width != input_width / 16)
    fail("attention grid must equal input/16 (" + std::to_string(input_height / 16) + "x" +
         std::to_string(input_width / 16) + ")");
  if (attention_height % 2 != 0) fail("attention grid height must be even");
  for (Index i = 0; i < 4; ++i) {
    if (stage_widths[i] <= 0 || stage_blocks[i] <= 0) fail("stage widths and block counts must be positive");
    if (block == BlockKind::Bottleneck && stage_widths[i] % 4 != 0) fail("bottleneck widths must be divisible by 4");
  }
  if (stem_width <= 0 || head_whole <= 0 || head_upper <= 0 || head_bottom <= 0) fail("widths must be positive");
  if (num_identities <= 0) fail("num_identities must be positive");
  if (has_attention(variant)) {
    AttentionConfig{stage_widths[1], stage_widths[2], attention_s, attention_r, true}.validate();
    AttentionConfig{stage_widths[2], stage_widths[3], attention_s, attention_r, false}.validate();
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"preset", c.preset},
                     {"variant", to_string(c.variant)},
                     {"input_height", c.input_height},
                     {"input_width", c.input_width},
                     {"stem_width", c.stem_width},
                     {"block", c.block == BlockKind::Basic ? "basic" : "bottleneck"},
                     {"stage_widths", c.stage_widths},
                     {"stage_blocks", c.stage_blocks},
                     {"head_whole", c.head_whole},
                     {"head_upper", c.head_upper},
                     {"head_bottom", c.head_bottom},
                     {"attention_s", c.attention_s},
                     {"attention_r", c.attention_r},
                     {"attention_height", c.attention_height},
                     {"attention_width", c.attention_width},
                     {"num_identities", c.num_identities}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw Error("config", "model config must be an object");
  const std::string preset = j.value("preset", c.preset);
  if (preset == "toy") c = ModelConfig::toy();
  else if (preset == "paper") c = ModelConfig::paper();
  else throw Error("config", "unknown preset '" + preset + "'");
  static const std::set<std::string> known = {
      "preset",     "variant",    "input_height", "input_width", "stem_width",  "block",
      "stage_widths", "stage_blocks", "head_whole", "head_upper", "head_bottom", "attention_s",
      "attention_r", "attention_height", "attention_width", "num_identities"};
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw Error("config", "unknown model key '" + key + "'");
  try {
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    if (j.contains("block")) {
      const auto b = j.at("block").get<std::string>();
      if (b != "basic" && b != "bottleneck") throw Error("config", "block must be basic or bottleneck");
      c.block = b == "basic" ? BlockKind::Basic : BlockKind::Bottleneck;
    }
    auto read = [&](const char* key, Index& field) {
      if (j.contains(key)) field = j.at(key).get<Index>();
    };
    read("input_height", c.input_height);
    read("input_width", c.input_width);
    read("stem_width", c.stem_width);
    read("head_whole", c.head_whole);
    read("head_upper", c.head_upper);
    read("head_bottom", c.head_bottom);
    read("attention_s", c.attention_s);
    read("attention_r", c.attention_r);
    read("attention_height", c.attention_height);
    read("attention_width", c.attention_width);
    read("num_identities", c.num_identities);
    if (j.contains("stage_widths")) c.stage_widths = j.at("stage_widths").get<std::array<Index, 4>>();
    if (j.contains("stage_blocks")) c.stage_blocks = j.at("stage_blocks").get<std::array<Index, 4>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("config", std::string("model config: ") + e.what());
  }
  c.preset = preset;
}

template <typename Scalar>
Tensor<Scalar> ConvBn<Scalar>::forward(const Tensor<Scalar>& x, Mode mode) {
  return batch_norm(conv2d(x, weight, Tensor<Scalar>{}, stride, padding), gamma, beta, stats, mode);
}

template <typename Scalar>
Tensor<Scalar> ResidualBlock<Scalar>::forward(const Tensor<Scalar>& x, Mode mode) {
  Tensor<Scalar> h = x;
  for (std::size_t i = 0; i < path.size(); ++i) {
    h = path[i].forward(h, mode);
    if (i + 1 < path.size()) h = relu(h);
  }
  const Tensor<Scalar> skip = shortcut ? shortcut->forward(x, mode) : x;
  return relu(add(h, skip));
}

namespace {

template <typename Scalar>
ConvBn<Scalar> make_conv_bn(Index c_in, Index c_out, Index k, Index stride, Index padding, std::mt19937_64& rng) {
  ConvBn<Scalar> layer;
  layer.weight = he_uniform<Scalar>({c_out, c_in, k, k}, c_in * k * k, rng);
  layer.gamma = Tensor<Scalar>::constant({1, c_out, 1, 1}, Scalar(1)).set_requires_grad();
  layer.beta = Tensor<Scalar>::zeros({1, c_out, 1, 1}).set_requires_grad();
  layer.stats = BatchNormStats<Scalar>(c_out);
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

template <typename Scalar>
ResidualBlock<Scalar> make_block(BlockKind kind, Index c_in, Index c_out, Index stride, std::mt19937_64& rng) {
  ResidualBlock<Scalar> block;
  if (kind == BlockKind::Basic) {
    block.path.push_back(make_conv_bn<Scalar>(c_in, c_out, 3, stride, 1, rng));
    block.path.push_back(make_conv_bn<Scalar>(c_out, c_out, 3, 1, 1, rng));
  } else {
    const Index mid = c_out / 4;
    block.path.push_back(make_conv_bn<Scalar>(c_in, mid, 1, 1, 0, rng));
    block.path.push_back(make_conv_bn<Scalar>(mid, mid, 3, stride, 1, rng));
    block.path.push_back(make_conv_bn<Scalar>(mid, c_out, 1, 1, 0, rng));
  }
  if (stride != 1 || c_in != c_out) block.shortcut = make_conv_bn<Scalar>(c_in, c_out, 1, stride, 0, rng);
  return block;
}

template <typename Scalar>
void append_conv_bn(NamedTensors<Scalar>& out, const std::string& prefix, const ConvBn<Scalar>& layer, bool with_stats) {
  out.emplace_back(prefix + ".conv.weight", layer.weight);
  out.emplace_back(prefix + ".bn.gamma", layer.gamma);
  out.emplace_back(prefix + ".bn.beta", layer.beta);
  if (with_stats) {
    const Index c = layer.stats.mean.size();
    out.emplace_back(prefix + ".bn.running_mean", Tensor<Scalar>(Shape{1, c, 1, 1}, layer.stats.mean));
    out.emplace_back(prefix + ".bn.running_var", Tensor<Scalar>(Shape{1, c, 1, 1}, layer.stats.var));
  }
}

constexpr std::array<Index, 4> kStageStrides{1, 2, 2, 1};
const std::array<std::string, 3> kBranchNames{"whole", "upper", "bottom"};

}  // namespace

template <typename Scalar>
AttentionConfig Model<Scalar>::attention_config(int module) const {
  const auto& w = config_.stage_widths;
  if (module == 1) return {w[1], w[2], config_.attention_s, config_.attention_r, true};
  return {w[2], w[3], config_.attention_s, config_.attention_r, false};
}

template <typename Scalar>
Model<Scalar> Model<Scalar>::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  Model m;
  m.config_ = config;
  m.stem_ = make_conv_bn<Scalar>(3, config.stem_width, 7, 2, 3, rng);
  Index c_in = config.stem_width;
  for (std::size_t s = 0; s < 4; ++s)
    for (Index b = 0; b < config.stage_blocks[s]; ++b) {
      m.stages_[s].push_back(
          make_block<Scalar>(config.block, c_in, config.stage_widths[s], b == 0 ? kStageStrides[s] : 1, rng));
      c_in = config.stage_widths[s];
    }

  const Index c4 = config.stage_widths[3];
  const Variant v = config.variant;
  if (has_attention(v)) {
    m.module1_ = AttentionParams<Scalar>::init(m.attention_config(1), rng);
    const int branches = has_part_branches(v) ? 3 : 1;
    for (int b = 0; b < branches; ++b) m.module2_.push_back(AttentionParams<Scalar>::init(m.attention_config(2), rng));
  }
  auto head = [&](Index d) {
    return std::pair{he_uniform<Scalar>({d, c4, 1, 1}, c4, rng), Tensor<Scalar>::zeros({1, d, 1, 1}).set_requires_grad()};
  };
  if (has_part_branches(v)) {
    m.heads_ = {head(config.head_whole), head(config.head_upper), head(config.head_bottom)};
    m.classifier_w_ = he_uniform<Scalar>({config.num_identities, config.head_whole, 1, 1}, config.head_whole, rng);
    const Index d_l = config.head_upper + config.head_bottom;
    m.classifier_l_ = he_uniform<Scalar>({config.num_identities, d_l, 1, 1}, d_l, rng);
  } else {
    const Index d = config.embedding_dim();
    m.heads_ = {head(d)};
    m.classifier_w_ = he_uniform<Scalar>({config.num_identities, d, 1, 1}, d, rng);
  }
  return m;
}

template <typename Scalar>
ForwardResult<Scalar> Model<Scalar>::forward(const Tensor<Scalar>& images, Mode mode) {
  const Shape& s = images.shape();
  if (s.c != 3 || s.h != config_.input_height || s.w != config_.input_width)
    throw Error("shape", "forward: expected images (n,3," + std::to_string(config_.input_height) + "," +
                             std::to_string(config_.input_width) + "), got " + s.str());
  ForwardResult<Scalar> r;
  Tensor<Scalar> x = max_pool2d(relu(stem_.forward(images, mode)), 3, 2, 1);
  for (auto& block : stages_[0]) x = block.forward(x, mode);
  for (auto& block : stages_[1]) x = block.forward(x, mode);
  r.stage2 = x;
  for (auto& block : stages_[2]) x = block.forward(x, mode);
  r.stage3 = x;
  if (module1_) {
    r.attention.push_back(attend(r.stage2, *module1_, attention_config(1)));
    x = mul(r.stage3, r.attention.back().combined);
  }
  r.module2_input = x;
  for (auto& block : stages_[3]) x = block.forward(x, mode);
  r.stage4 = x;

  std::vector<Tensor<Scalar>> features;
  if (module2_.empty()) {
    features.push_back(linear(global_avg_pool(r.stage4), heads_[0].first, heads_[0].second));
  } else {
    for (std::size_t b = 0; b < module2_.size(); ++b) {
      r.attention.push_back(attend(r.module2_input, module2_[b], attention_config(2)));
      const Tensor<Scalar> weighted = mul(r.stage4, r.attention.back().combined);
      features.push_back(linear(global_avg_pool(weighted), heads_[b].first, heads_[b].second));
    }
  }

  auto& e = r.embeddings;
  e.f_w = features[0];
  if (features.size() == 3) {
    e.f_u = features[1];
    e.f_b = features[2];
    e.f_l = concat_channels(std::vector{e.f_u, e.f_b});
    e.f_raw = concat_channels(features);
  } else {
    e.f_raw = e.f_w;
  }
  e.f_all = l2_normalize(e.f_raw);
  r.logits_w = linear(e.f_w, classifier_w_);
  if (e.f_l.defined()) r.logits_l = linear(e.f_l, classifier_l_);
  return r;
}

template <typename Scalar>
std::vector<Parameter<Scalar>> Model<Scalar>::parameters() const {
  std::vector<Parameter<Scalar>> out;
  for (auto& [name, t] : state())
    if (t.requires_grad())
      out.push_back({name, t, name.starts_with("backbone.") ? ParamTrack::Backbone : ParamTrack::Other});
  return out;
}

template <typename Scalar>
std::vector<ParamGroup<Scalar>> Model<Scalar>::param_groups() const {
  std::vector<ParamGroup<Scalar>> groups{{"backbone", ParamTrack::Backbone, {}}, {"other", ParamTrack::Other, {}}};
  for (auto& p : parameters()) groups[p.track == ParamTrack::Backbone ? 0 : 1].tensors.push_back(p.tensor);
  return groups;
}

template <typename Scalar>
Index Model<Scalar>::parameter_count() const {
  Index total = 0;
  for (auto& p : parameters()) total += p.tensor.size();
  return total;
}

template <typename Scalar>
NamedTensors<Scalar> Model<Scalar>::state() const {
  NamedTensors<Scalar> out;
  append_conv_bn(out, "backbone.stem", stem_, true);
  for (std::size_t s = 0; s < 4; ++s)
    for (std::size_t b = 0; b < stages_[s].size(); ++b) {
      const std::string prefix = "backbone.stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      const auto& block = stages_[s][b];
      for (std::size_t i = 0; i < block.path.size(); ++i)
        append_conv_bn(out, prefix + ".layer" + std::to_string(i), block.path[i], true);
      if (block.shortcut) append_conv_bn(out, prefix + ".shortcut", *block.shortcut, true);
    }
  if (module1_)
    for (auto& nt : module1_->named("attention1")) out.push_back(nt);
  for (std::size_t b = 0; b < module2_.size(); ++b)
    for (auto& nt : module2_[b].named("attention2." + kBranchNames[b])) out.push_back(nt);
  for (std::size_t b = 0; b < heads_.size(); ++b) {
    const std::string prefix = "head." + (heads_.size() == 1 ? std::string("global") : kBranchNames[b]);
    out.emplace_back(prefix + ".weight", heads_[b].first);
    out.emplace_back(prefix + ".bias", heads_[b].second);
  }
  out.emplace_back("classifier.whole.weight", classifier_w_);
  if (classifier_l_.defined()) out.emplace_back("classifier.local.weight", classifier_l_);
  return out;
}

template <typename Scalar>
void Model<Scalar>::load_state(const NamedTensors<Scalar>& named) {
  std::map<std::string, const Tensor<Scalar>*> lookup;
  for (auto& [name, t] : named) lookup[name] = &t;
  auto fetch = [&](const std::string& name, Index size) -> const Tensor<Scalar>& {
    auto it = lookup.find(name);
    if (it == lookup.end()) throw Error("checkpoint", "missing tensor '" + name + "'");
    if (it->second->size() != size) throw Error("checkpoint", "tensor '" + name + "' has the wrong size");
    return *it->second;
  };
  auto restore_bn = [&](const std::string& prefix, ConvBn<Scalar>& layer) {
    layer.stats.mean = fetch(prefix + ".bn.running_mean", layer.stats.mean.size()).values();
    layer.stats.var = fetch(prefix + ".bn.running_var", layer.stats.var.size()).values();
  };
  for (auto& [name, t] : state()) {
    if (name.ends_with(".running_mean") || name.ends_with(".running_var")) continue;
    auto copy = t;
    copy.values() = fetch(name, t.size()).values();
  }
  restore_bn("backbone.stem", stem_);
  for (std::size_t s = 0; s < 4; ++s)
    for (std::size_t b = 0; b < stages_[s].size(); ++b) {
      const std::string prefix = "backbone.stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      auto& block = stages_[s][b];
      for (std::size_t i = 0; i < block.path.size(); ++i) restore_bn(prefix + ".layer" + std::to_string(i), block.path[i]);
      if (block.shortcut) restore_bn(prefix + ".shortcut", *block.shortcut);
    }
}

template <typename Scalar>
void Model<Scalar>::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

std::vector<MaskMap> variant_mask_targets(Variant variant, const MaskSet& masks, Index height, Index width) {
  for (const MaskMap* m : {&masks.whole, &masks.upper, &masks.bottom})
    if (m->rows() != height || m->cols() != width)
      throw Error("shape", "mask resolution " + std::to_string(m->rows()) + "x" + std::to_string(m->cols()) +
                               " does not match attention grid " + std::to_string(height) + "x" +
                               std::to_string(width));
  switch (variant) {
    case Variant::Baseline:
    case Variant::BaselineAtt: return {};
    case Variant::WMGA: return {masks.whole, masks.whole};
    case Variant::DMGA: {
      auto [upper, bottom] = middle_split(masks.whole);
      return {masks.whole, masks.whole, std::move(upper), std::move(bottom)};
    }
    case Variant::MMGA: return {masks.whole, masks.whole, masks.upper, masks.bottom};
  }
  return {};
}

namespace {
std::string tensor_file(const std::string& name) { return name + ".tns"; }
}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const Model<float>& model, const nlohmann::json& extra) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  for (auto& [key, value] : extra.items()) manifest[key] = value;
  nlohmann::json model_json = model.config();
  manifest["model"] = model_json;
  std::vector<std::string> names;
  for (auto& [name, t] : model.state()) {
    save_tensor(dir / tensor_file(name), t);
    names.push_back(name);
  }
  manifest["tensors"] = names;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error("io", "cannot write manifest in " + dir.string());
  out << manifest.dump(2) << "\n";
}

std::pair<Model<float>, nlohmann::json> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("io", "no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint", std::string("malformed manifest: ") + e.what());
  }
  const ModelConfig config = manifest.at("model").get<ModelConfig>();
  Model<float> model = Model<float>::build(config, manifest.value("seed", std::uint64_t{0}));
  NamedTensors<float> named;
  for (const auto& name : manifest.at("tensors")) {
    const auto n = name.get<std::string>();
    named.emplace_back(n, load_tensor(dir / tensor_file(n)));
  }
  model.load_state(named);
  return {std::move(model), std::move(manifest)};
}

template class Model<float>;
template class Model<double>;
template struct ConvBn<float>;
template struct ConvBn<double>;
template struct ResidualBlock<float>;
template struct ResidualBlock<double>;

}  // namespace mmga
