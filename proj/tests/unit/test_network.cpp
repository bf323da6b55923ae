#include "mmga/network.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <set>

using namespace mmga;

namespace {

ModelConfig toy(Variant v) {
  ModelConfig c = ModelConfig::toy();
  c.variant = v;
  c.num_identities = 5;
  return c;
}

Tensorf images(Index n, const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0, 1);
  Tensorf t(Shape{n, 3, c.input_height, c.input_width});
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = g(rng);
  return t;
}

}  // namespace

TEST(ModelConfig, PresetArithmetic) {
  const ModelConfig paper = ModelConfig::paper();
  EXPECT_EQ(paper.embedding_dim(), 2048);
  EXPECT_EQ(paper.head_whole, 1024);
  EXPECT_EQ(paper.head_upper + paper.head_bottom, 1024);
  EXPECT_NO_THROW(paper.validate());
  const ModelConfig t = ModelConfig::toy();
  EXPECT_EQ(t.embedding_dim(), 128);
  EXPECT_EQ(t.attention_height, 6);
  EXPECT_EQ(t.attention_width, 2);
  EXPECT_NO_THROW(t.validate());
}

TEST(ModelConfig, ValidationAndJson) {
  ModelConfig c = ModelConfig::toy();
  c.attention_height = 5;
  EXPECT_THROW(c.validate(), Error);
  c = ModelConfig::toy();
  c.attention_s = 8;
  EXPECT_THROW(c.validate(), Error);

  c = ModelConfig::toy();
  c.variant = Variant::DMGA;
  const nlohmann::json j = c;
  const ModelConfig back = j.get<ModelConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_THROW((nlohmann::json{{"colour", 3}}.get<ModelConfig>()), Error);
  EXPECT_EQ(parse_variant("Baseline+Att"), Variant::BaselineAtt);
  EXPECT_THROW(parse_variant("XMGA"), Error);
}

TEST(Model, ToyShapeChain) {
  const ModelConfig c = toy(Variant::MMGA);
  Model<float> m = Model<float>::build(c, 1);
  const auto r = m.forward(images(2, c, 2), Mode::Train);
  EXPECT_EQ(r.stage2.shape(), (Shape{2, 32, 12, 4}));
  EXPECT_EQ(r.stage3.shape(), (Shape{2, 64, 6, 2}));
  EXPECT_EQ(r.stage4.shape(), (Shape{2, 128, 6, 2}));
  ASSERT_EQ(r.attention.size(), 4u);
  EXPECT_EQ(r.attention[0].combined.shape(), (Shape{2, 64, 6, 2}));
  for (int k = 1; k < 4; ++k) EXPECT_EQ(r.attention[k].combined.shape(), (Shape{2, 128, 6, 2}));
  EXPECT_EQ(r.embeddings.f_all.shape(), (Shape{2, 128, 1, 1}));
  EXPECT_EQ(r.embeddings.f_l.shape(), (Shape{2, 64, 1, 1}));
  EXPECT_EQ(r.logits_w.shape(), (Shape{2, 5, 1, 1}));
  EXPECT_EQ(r.logits_l.shape(), (Shape{2, 5, 1, 1}));
  for (Index i = 0; i < 2; ++i)
    EXPECT_NEAR(r.embeddings.f_all.values().segment(i * 128, 128).matrix().norm(), 1.0f, 1e-5);
}

TEST(Model, ColdStartScalesStageThreeByThreeQuarters) {
  const ModelConfig c = toy(Variant::MMGA);
  Model<float> m = Model<float>::build(c, 3);
  const auto r = m.forward(images(2, c, 4), Mode::Eval);
  EXPECT_TRUE((r.module2_input.values() == 0.75f * r.stage3.values()).all());
}

TEST(Model, VariantWiring) {
  Model<float> base = Model<float>::build(toy(Variant::Baseline), 5);
  const auto rb = base.forward(images(2, toy(Variant::Baseline), 6), Mode::Train);
  EXPECT_TRUE(rb.attention.empty());
  EXPECT_FALSE(rb.logits_l.defined());
  EXPECT_EQ(rb.embeddings.f_all.shape().c, 64);

  for (Variant v : {Variant::BaselineAtt, Variant::WMGA}) {
    Model<float> m = Model<float>::build(toy(v), 5);
    const auto r = m.forward(images(2, toy(v), 6), Mode::Train);
    EXPECT_EQ(r.attention.size(), 2u);
    EXPECT_FALSE(r.logits_l.defined());
    EXPECT_EQ(r.embeddings.f_all.shape().c, 128);
  }
  EXPECT_GT(Model<float>::build(toy(Variant::MMGA), 5).parameter_count(),
            Model<float>::build(toy(Variant::BaselineAtt), 5).parameter_count());
}

TEST(Model, EvalIsDeterministicAndBuildIsSeeded) {
  const ModelConfig c = toy(Variant::MMGA);
  Model<float> a = Model<float>::build(c, 9), b = Model<float>::build(c, 9);
  const Tensorf x = images(3, c, 10);
  const auto r1 = a.forward(x, Mode::Eval), r2 = a.forward(x, Mode::Eval), r3 = b.forward(x, Mode::Eval);
  EXPECT_TRUE((r1.embeddings.f_all.values() == r2.embeddings.f_all.values()).all());
  EXPECT_TRUE((r1.embeddings.f_all.values() == r3.embeddings.f_all.values()).all());
  Model<float> other = Model<float>::build(c, 10);
  EXPECT_FALSE((other.forward(x, Mode::Eval).embeddings.f_all.values() == r1.embeddings.f_all.values()).all());
  EXPECT_THROW(a.forward(Tensorf(Shape{1, 3, 64, 32}), Mode::Eval), Error);
}

TEST(Model, ParameterGroupsPartitionLearnables) {
  Model<float> m = Model<float>::build(toy(Variant::MMGA), 1);
  const auto params = m.parameters();
  const auto groups = m.param_groups();
  ASSERT_EQ(groups.size(), 2u);
  std::set<const void*> seen;
  Index total = 0;
  for (const auto& g : groups)
    for (const auto& t : g.tensors) {
      EXPECT_TRUE(seen.insert(t.node().get()).second);
      total += t.size();
    }
  EXPECT_EQ(total, m.parameter_count());
  for (const auto& p : params) {
    const bool backbone = p.name.starts_with("backbone.");
    EXPECT_EQ(p.track == ParamTrack::Backbone, backbone) << p.name;
  }
}

TEST(Model, MaskTargetsPerVariant) {
  MaskSet masks{MaskMap::Ones(6, 2), MaskMap::Zero(6, 2), MaskMap::Zero(6, 2)};
  masks.upper.topRows(3).setOnes();
  masks.bottom.bottomRows(4).setOnes();
  EXPECT_TRUE(variant_mask_targets(Variant::Baseline, masks, 6, 2).empty());
  EXPECT_TRUE(variant_mask_targets(Variant::BaselineAtt, masks, 6, 2).empty());
  const auto w = variant_mask_targets(Variant::WMGA, masks, 6, 2);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_TRUE((w[1] == masks.whole).all());
  const auto d = variant_mask_targets(Variant::DMGA, masks, 6, 2);
  ASSERT_EQ(d.size(), 4u);
  EXPECT_EQ(d[2].bottomRows(3).sum(), 0);
  EXPECT_TRUE((d[2] + d[3] == masks.whole).all());
  const auto m = variant_mask_targets(Variant::MMGA, masks, 6, 2);
  ASSERT_EQ(m.size(), 4u);
  EXPECT_TRUE((m[0] == masks.whole).all());
  EXPECT_TRUE((m[2] == masks.upper).all());
  EXPECT_TRUE((m[3] == masks.bottom).all());
  EXPECT_THROW(variant_mask_targets(Variant::MMGA, masks, 24, 8), Error);
}

TEST(Checkpoint, RoundTripPreservesOutputs) {
  const ModelConfig c = toy(Variant::DMGA);
  Model<float> m = Model<float>::build(c, 4);
  m.forward(images(4, c, 5), Mode::Train);  // moves running statistics
  const auto dir = std::filesystem::temp_directory_path() / "mmga_ckpt_test";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, m, {{"epoch", 3}, {"seed", 4}});
  auto [loaded, manifest] = load_checkpoint(dir);
  EXPECT_EQ(manifest.at("epoch"), 3);
  EXPECT_EQ(manifest.at("model").at("variant"), "DMGA");
  const Tensorf x = images(2, c, 6);
  EXPECT_TRUE(
      (loaded.forward(x, Mode::Eval).embeddings.f_all.values() == m.forward(x, Mode::Eval).embeddings.f_all.values())
          .all());
  std::filesystem::remove(dir / "classifier.local.weight.tns");
  EXPECT_THROW(load_checkpoint(dir), Error);
}
