#include "mmga/eval.hpp"
#include "mmga/image_io.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>

using namespace mmga;

namespace {

struct Instance {
  Eigen::MatrixXd dist;
  std::vector<int> qid, qcam, gid, gcam;
};

// Ranks by counting (no sorting): an entry's rank is one plus the number of
// kept entries that are closer, or equally close and earlier.
EvalReport definitional(const Instance& x, Index max_rank) {
  EvalReport r;
  std::vector<double> hits(static_cast<std::size_t>(max_rank), 0.0);
  double ap_sum = 0;
  for (Index q = 0; q < x.dist.rows(); ++q) {
    auto kept = [&](Index g) { return x.gid[g] >= 0 && !(x.gid[g] == x.qid[q] && x.gcam[g] == x.qcam[q]); };
    std::vector<Index> positive_ranks;
    for (Index g = 0; g < x.dist.cols(); ++g) {
      if (!kept(g) || x.gid[g] != x.qid[q]) continue;
      Index rank = 1;
      for (Index h = 0; h < x.dist.cols(); ++h)
        if (kept(h) && (x.dist(q, h) < x.dist(q, g) || (x.dist(q, h) == x.dist(q, g) && h < g))) ++rank;
      positive_ranks.push_back(rank);
    }
    if (positive_ranks.empty()) continue;
    std::sort(positive_ranks.begin(), positive_ranks.end());
    double precision_sum = 0;
    for (std::size_t i = 0; i < positive_ranks.size(); ++i)
      precision_sum += double(i + 1) / double(positive_ranks[i]);
    const double ap = precision_sum / double(positive_ranks.size());
    for (Index k = 0; k < max_rank; ++k)
      if (positive_ranks.front() <= k + 1) hits[static_cast<std::size_t>(k)] += 1;
    r.per_query_ap.push_back(ap);
    r.query_index.push_back(q);
    ap_sum += ap;
    ++r.num_valid_queries;
  }
  for (double h : hits) r.cmc.push_back(h / double(r.num_valid_queries));
  r.mAP = ap_sum / double(r.num_valid_queries);
  return r;
}

Instance random_instance(std::mt19937_64& rng, bool quantized) {
  std::uniform_int_distribution<int> nq_pick(1, 8), ng_pick(1, 32), id_pick(-1, 4), cam_pick(0, 2), level(0, 5);
  std::uniform_real_distribution<double> u(0, 2);
  Instance x;
  const int nq = nq_pick(rng), ng = ng_pick(rng);
  x.dist.resize(nq, ng);
  for (Index i = 0; i < x.dist.size(); ++i) x.dist.data()[i] = quantized ? level(rng) / 4.0 : u(rng);
  for (int q = 0; q < nq; ++q) {
    x.qid.push_back(std::max(0, id_pick(rng)));
    x.qcam.push_back(cam_pick(rng));
  }
  for (int g = 0; g < ng; ++g) {
    x.gid.push_back(id_pick(rng));
    x.gcam.push_back(cam_pick(rng));
  }
  return x;
}

bool has_valid_query(const Instance& x) {
  for (std::size_t q = 0; q < x.qid.size(); ++q)
    for (std::size_t g = 0; g < x.gid.size(); ++g)
      if (x.gid[g] == x.qid[q] && x.gcam[g] != x.qcam[q]) return true;
  return false;
}

EvalReport run(const Instance& x, Index max_rank = 50) { return cmc_map(x.dist, x.qid, x.qcam, x.gid, x.gcam, max_rank); }

FeatureGallery rows(std::initializer_list<std::initializer_list<float>> values) {
  FeatureGallery g;
  g.features.resize(Index(values.size()), Index(values.begin()->size()));
  Index i = 0;
  for (const auto& row : values) {
    Index j = 0;
    for (float v : row) g.features(i, j++) = v;
    ++i;
  }
  return g;
}

}  // namespace

TEST(Distances, Examples) {
  const FeatureGallery a = rows({{1, 0, 0}, {0, 1, 0}});
  const Eigen::MatrixXd d = distances(a, a);
  EXPECT_EQ(d(0, 0), 0.0);
  EXPECT_EQ(d(1, 1), 0.0);
  EXPECT_NEAR(d(0, 1), std::sqrt(2.0), 1e-12);
  EXPECT_EQ(d(0, 1), d(1, 0));
  EXPECT_THROW(distances(a, rows({{1, 0}})), Error);
}

TEST(Distances, MatchScalarLoop) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> g(0, 1);
  FeatureGallery q, r;
  q.features.resize(3, 4);
  r.features.resize(5, 4);
  for (Index i = 0; i < q.features.size(); ++i) q.features.data()[i] = g(rng);
  for (Index i = 0; i < r.features.size(); ++i) r.features.data()[i] = g(rng);
  const Eigen::MatrixXd d = distances(q, r);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 5; ++j) {
      double acc = 0;
      for (Index k = 0; k < 4; ++k) acc += std::pow(double(q.features(i, k)) - double(r.features(j, k)), 2);
      EXPECT_NEAR(d(i, j), std::sqrt(acc), 1e-6);
    }
}

TEST(CmcMap, Examples) {
  Instance one{Eigen::MatrixXd(1, 2), {5}, {0}, {5, 6}, {1, 1}};
  one.dist << 0.1, 0.2;
  const EvalReport r1 = run(one);
  EXPECT_EQ(r1.rank(1), 1.0);
  EXPECT_EQ(r1.mAP, 1.0);

  Instance two{Eigen::MatrixXd(1, 4), {5}, {0}, {5, 6, 5, 7}, {1, 1, 1, 1}};
  two.dist << 0.1, 0.2, 0.3, 0.4;
  EXPECT_NEAR(run(two).mAP, (1.0 + 2.0 / 3.0) / 2.0, 1e-12);

  Instance same_camera{Eigen::MatrixXd(1, 3), {5}, {0}, {5, 6, 5}, {0, 1, 1}};
  same_camera.dist << 0.0, 0.2, 0.3;
  const EvalReport r3 = run(same_camera);
  EXPECT_EQ(r3.rank(1), 0.0);
  EXPECT_EQ(r3.rank(2), 1.0);
  EXPECT_DOUBLE_EQ(r3.mAP, 0.5);

  Instance junk{Eigen::MatrixXd(1, 2), {5}, {0}, {-1, 5}, {1, 1}};
  junk.dist << 0.0, 0.5;
  EXPECT_EQ(run(junk).rank(1), 1.0);

  Instance none{Eigen::MatrixXd(1, 1), {5}, {0}, {5}, {0}};
  none.dist << 0.3;
  try {
    run(none);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "eval");
    EXPECT_STREQ(e.what(), "no valid queries");
  }
}

TEST(CmcMap, SkipsInvalidQueries) {
  Instance x{Eigen::MatrixXd(2, 2), {5, 9}, {0, 0}, {5, 6}, {1, 1}};
  x.dist << 0.1, 0.2, 0.3, 0.4;
  const EvalReport r = run(x);
  EXPECT_EQ(r.num_valid_queries, 1);
  EXPECT_EQ(r.query_index, std::vector<Index>{0});
}

TEST(CmcMap, EqualsDefinitionalReference) {
  std::mt19937_64 rng(2);
  int checked = 0;
  while (checked < 100) {
    const Instance x = random_instance(rng, checked % 2 == 1);
    if (!has_valid_query(x)) continue;
    const EvalReport got = run(x, 10), want = definitional(x, 10);
    EXPECT_EQ(got, want) << "instance " << checked;
    for (std::size_t k = 1; k < got.cmc.size(); ++k) EXPECT_LE(got.cmc[k - 1], got.cmc[k]);
    EXPECT_GE(got.cmc.front(), 0.0);
    EXPECT_LE(got.cmc.back(), 1.0);
    ++checked;
  }
}

TEST(CmcMap, GalleryPermutationWithoutTies) {
  std::mt19937_64 rng(3);
  int checked = 0;
  while (checked < 50) {
    Instance x = random_instance(rng, false);
    if (!has_valid_query(x)) continue;
    std::vector<Index> perm(x.gid.size());
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    Instance y = x;
    for (std::size_t j = 0; j < perm.size(); ++j) {
      y.dist.col(Index(j)) = x.dist.col(perm[j]);
      y.gid[j] = x.gid[perm[j]];
      y.gcam[j] = x.gcam[perm[j]];
    }
    EXPECT_EQ(run(x), run(y));
    ++checked;
  }
}

TEST(CmcMap, AllDistancesEqualFollowGalleryOrder) {
  Instance x{Eigen::MatrixXd::Constant(1, 4, 0.7), {5}, {0}, {6, 5, 7, 5}, {1, 1, 1, 1}};
  const EvalReport r = run(x);
  EXPECT_EQ(r, definitional(x, 50));
  EXPECT_DOUBLE_EQ(r.mAP, (1.0 / 2.0 + 2.0 / 4.0) / 2.0);
  EXPECT_EQ(r.rank(1), 0.0);
  EXPECT_EQ(r.rank(2), 1.0);
}

TEST(Report, RenderAndJson) {
  EvalReport r;
  r.cmc = {1.0, 1.0, 1.0};
  r.mAP = 1.0;
  EXPECT_EQ(render_report(r), "Rank1 100.0 / Rank5 100.0 / Rank10 100.0 / mAP 100.0");
  r.cmc = std::vector<double>(10, 0.95);
  r.cmc[0] = 0.95;
  r.mAP = 0.872;
  r.per_query_ap = {0.1234567890123, 1.0 / 3.0};
  r.query_index = {0, 4};
  r.num_valid_queries = 2;
  EXPECT_EQ(render_report(r), "Rank1 95.0 / Rank5 95.0 / Rank10 95.0 / mAP 87.2");
  const nlohmann::json j = r;
  EXPECT_EQ(nlohmann::json::parse(j.dump()).get<EvalReport>(), r);
}

TEST(Embeddings, RoundTrip) {
  FeatureGallery g = rows({{0.6f, 0.8f}, {1.0f, 0.0f}, {0.0f, -1.0f}});
  g.person_ids = {3, 3, 9};
  g.camera_ids = {0, 1, 1};
  g.role = Split::Query;
  const auto path = std::filesystem::temp_directory_path() / "mmga_eval_query.emb";
  write_embeddings(path, g);
  const FeatureGallery back = read_embeddings(path);
  EXPECT_EQ(back.features, g.features);
  EXPECT_EQ(back.person_ids, g.person_ids);
  EXPECT_EQ(back.camera_ids, g.camera_ids);
  EXPECT_EQ(back.role, Split::Query);
  EXPECT_EQ(std::filesystem::file_size(path), 8u + 8u + 6u * 4u);
}

TEST(Extract, ShapesNormsAndMirrorSymmetry) {
  const auto dir = std::filesystem::temp_directory_path() / "mmga_eval_extract";
  std::filesystem::remove_all(dir);
  synth_generate({10, 2, 4}, dir);
  Dataset data = Dataset::load(dir / "manifest.csv");
  ModelConfig cfg = ModelConfig::toy();
  cfg.num_identities = 5;
  Model<float> model = Model<float>::build(cfg, 2);
  std::vector<std::size_t> idx(10);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const FeatureGallery g = extract(model, data, idx, Split::Gallery, 4);
  EXPECT_EQ(g.features.rows(), 10);
  EXPECT_EQ(g.features.cols(), 128);
  for (Index i = 0; i < 10; ++i) EXPECT_NEAR(g.features.row(i).norm(), 1.0f, 1e-5);

  RgbImage& symmetric = data.images[0];
  for (Index y = 0; y < symmetric.height; ++y)
    for (Index x = 0; x < symmetric.width / 2; ++x)
      std::copy_n(symmetric.at(y, x), 3, symmetric.at(y, symmetric.width - 1 - x));
  const std::vector<std::size_t> first{0};
  const FeatureGallery averaged = extract(model, data, first, Split::Query);
  std::mt19937_64 rng(0);
  const Batch b = make_batch(data, first, 96, 32, 6, 2, GroupingTable::lip_default(), rng, false, {});
  const Tensorf single = l2_normalize(model.forward(b.images, Mode::Eval).embeddings.f_raw);
  for (Index j = 0; j < 128; ++j) EXPECT_NEAR(averaged.features(0, j), single.values()[j], 1e-5);
}

TEST(MaskAgreement, ColdStartEqualsMeanTarget) {
  const auto dir = std::filesystem::temp_directory_path() / "mmga_eval_agreement";
  std::filesystem::remove_all(dir);
  synth_generate({4, 2, 6}, dir);
  const Dataset data = Dataset::load(dir / "manifest.csv");
  ModelConfig cfg = ModelConfig::toy();
  cfg.num_identities = 2;
  Model<float> model = Model<float>::build(cfg, 3);
  const std::vector<std::size_t> idx{4, 5, 6, 7};
  const auto agreement = mask_agreement(model, data, idx, GroupingTable::lip_default());
  ASSERT_EQ(agreement.size(), 4u);
  std::array<double, 3> mean{};
  for (std::size_t i : idx) {
    const MaskSet m = attention_targets(resize_nearest(data.labels[i], 96, 32), GroupingTable::lip_default(), 6, 2);
    mean[0] += m.whole.mean() / 4;
    mean[1] += m.upper.mean() / 4;
    mean[2] += m.bottom.mean() / 4;
  }
  EXPECT_NEAR(agreement[0], mean[0], 1e-6);
  EXPECT_NEAR(agreement[1], mean[0], 1e-6);
  EXPECT_NEAR(agreement[2], mean[1], 1e-6);
  EXPECT_NEAR(agreement[3], mean[2], 1e-6);
}
