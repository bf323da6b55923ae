#include "mmga/eval.hpp"

#include "mmga/tensor_io.hpp"
#include "mmga/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

namespace mmga {

FeatureGallery extract(Model<float>& model, const Dataset& data, std::span<const std::size_t> indices, Split role,
                       Index batch_size) {
  const ModelConfig& cfg = model.config();
  NoGradGuard no_grad;
  std::mt19937_64 unused_rng(0);
  FeatureGallery out;
  out.role = role;
  const Index n = static_cast<Index>(indices.size());
  out.features.resize(n, cfg.embedding_dim());
  for (Index start = 0; start < n; start += batch_size) {
    const Index count = std::min(batch_size, n - start);
    const Batch batch = make_batch(data, indices.subspan(start, count), cfg.input_height, cfg.input_width,
                                   cfg.attention_height, cfg.attention_width, GroupingTable::lip_default(),
                                   unused_rng, false, AugmentConfig{});
    const Tensorf plain = model.forward(batch.images, Mode::Eval).embeddings.f_raw;
    const Tensorf mirrored = model.forward(flip_horizontal(batch.images), Mode::Eval).embeddings.f_raw;
    const Tensorf averaged = l2_normalize(scale(add(plain, mirrored), 0.5f));
    out.features.middleRows(start, count) =
        Eigen::Map<const FeatureMatrix>(averaged.data(), count, cfg.embedding_dim());
  }
  for (std::size_t idx : indices) {
    out.person_ids.push_back(data.manifest.samples.at(idx).person_id);
    out.camera_ids.push_back(data.manifest.samples.at(idx).camera_id);
  }
  return out;
}

Eigen::MatrixXd distances(const FeatureGallery& query, const FeatureGallery& gallery) {
  if (query.features.cols() != gallery.features.cols())
    throw Error("shape", "distances: feature dims " + std::to_string(query.features.cols()) + " and " +
                             std::to_string(gallery.features.cols()) + " differ");
  const Eigen::MatrixXd q = query.features.cast<double>();
  const Eigen::MatrixXd g = gallery.features.cast<double>();
  Eigen::MatrixXd d(q.rows(), g.rows());
  for (Index i = 0; i < q.rows(); ++i)
    for (Index j = 0; j < g.rows(); ++j) d(i, j) = (q.row(i) - g.row(j)).norm();
  return d;
}

double EvalReport::rank(Index k) const {
  if (cmc.empty() || k < 1) throw Error("eval", "rank: empty curve or rank < 1");
  return cmc[static_cast<std::size_t>(std::min<Index>(k, static_cast<Index>(cmc.size())) - 1)];
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json{{"cmc", r.cmc},
                     {"mAP", r.mAP},
                     {"per_query_ap", r.per_query_ap},
                     {"query_index", r.query_index},
                     {"num_valid_queries", r.num_valid_queries}};
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  j.at("cmc").get_to(r.cmc);
  j.at("mAP").get_to(r.mAP);
  j.at("per_query_ap").get_to(r.per_query_ap);
  j.at("query_index").get_to(r.query_index);
  j.at("num_valid_queries").get_to(r.num_valid_queries);
}

EvalReport cmc_map(const Eigen::MatrixXd& dist, std::span<const int> query_ids, std::span<const int> query_cams,
                   std::span<const int> gallery_ids, std::span<const int> gallery_cams, Index max_rank) {
  const Index nq = dist.rows(), ng = dist.cols();
  if (static_cast<Index>(query_ids.size()) != nq || static_cast<Index>(query_cams.size()) != nq ||
      static_cast<Index>(gallery_ids.size()) != ng || static_cast<Index>(gallery_cams.size()) != ng)
    throw Error("shape", "cmc_map: distance extents do not match the id/camera vectors");
  if (max_rank < 1) throw Error("eval", "max_rank must be at least 1");

  EvalReport report;
  std::vector<double> hits(static_cast<std::size_t>(max_rank), 0.0);
  double ap_sum = 0;
  std::vector<Index> order;
  for (Index q = 0; q < nq; ++q) {
    order.clear();
    for (Index g = 0; g < ng; ++g) {
      if (gallery_ids[g] < 0) continue;
      if (gallery_ids[g] == query_ids[q] && gallery_cams[g] == query_cams[q]) continue;
      order.push_back(g);
    }
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return dist(q, a) < dist(q, b); });

    Index found = 0;
    Index first = -1;
    double precision_sum = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (gallery_ids[order[r]] != query_ids[q]) continue;
      if (first < 0) first = static_cast<Index>(r);
      ++found;
      precision_sum += double(found) / double(r + 1);
    }
    if (found == 0) continue;
    for (Index k = first; k < max_rank; ++k) hits[static_cast<std::size_t>(k)] += 1;
    const double ap = precision_sum / double(found);
    report.per_query_ap.push_back(ap);
    report.query_index.push_back(q);
    ap_sum += ap;
    ++report.num_valid_queries;
  }
  if (report.num_valid_queries == 0) throw Error("eval", "no valid queries");
  const double nv = double(report.num_valid_queries);
  for (double h : hits) report.cmc.push_back(h / nv);
  report.mAP = ap_sum / nv;
  return report;
}

std::string render_report(const EvalReport& report) {
  char line[128];
  std::snprintf(line, sizeof line, "Rank1 %.1f / Rank5 %.1f / Rank10 %.1f / mAP %.1f", 100 * report.rank(1),
                100 * report.rank(5), 100 * report.rank(10), 100 * report.mAP);
  return line;
}

std::vector<double> mask_agreement(Model<float>& model, const Dataset& data, std::span<const std::size_t> indices,
                                   const GroupingTable& grouping) {
  const ModelConfig& cfg = model.config();
  NoGradGuard no_grad;
  std::mt19937_64 unused_rng(0);
  std::vector<double> sums;
  double pixels = 0;
  const Index batch_size = 32;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto chunk = indices.subspan(start, std::min<std::size_t>(batch_size, indices.size() - start));
    const Batch batch = make_batch(data, chunk, cfg.input_height, cfg.input_width, cfg.attention_height,
                                   cfg.attention_width, grouping, unused_rng, false, AugmentConfig{});
    const ForwardResult<float> fwd = model.forward(batch.images, Mode::Eval);
    const auto targets = stack_targets<float>(cfg.variant, batch.masks, cfg.attention_height, cfg.attention_width);
    if (targets.size() > fwd.attention.size()) throw Error("shape", "mask_agreement: missing attention outputs");
    sums.resize(targets.size(), 0.0);
    for (std::size_t k = 0; k < targets.size(); ++k)
      sums[k] += (fwd.attention[k].spatial_norm.values() - targets[k].values()).abs().template cast<double>().sum();
    pixels += double(batch.images.shape().n * cfg.attention_height * cfg.attention_width);
  }
  for (double& s : sums) s /= pixels;
  return sums;
}

namespace {
constexpr char kEmbeddingMagic[8] = {'M', 'M', 'G', 'A', '-', 'E', 'M', 'B'};
}

void write_embeddings(const std::filesystem::path& path, const FeatureGallery& gallery) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io", "cannot write " + path.string());
  out.write(kEmbeddingMagic, sizeof kEmbeddingMagic);
  le::write_u32(out, static_cast<std::uint32_t>(gallery.features.rows()));
  le::write_u32(out, static_cast<std::uint32_t>(gallery.features.cols()));
  for (Index i = 0; i < gallery.features.rows(); ++i)
    for (Index j = 0; j < gallery.features.cols(); ++j) le::write_f32(out, gallery.features(i, j));
  if (!out) throw Error("io", "short write to " + path.string());

  nlohmann::ordered_json side;
  side["count"] = gallery.features.rows();
  side["dim"] = gallery.features.cols();
  side["role"] = to_string(gallery.role);
  side["person_ids"] = gallery.person_ids;
  side["camera_ids"] = gallery.camera_ids;
  std::ofstream js(path.string() + ".json");
  if (!js) throw Error("io", "cannot write sidecar for " + path.string());
  js << side.dump(2) << '\n';
}

FeatureGallery read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || !std::equal(magic, magic + 8, kEmbeddingMagic)) throw Error("io", path.string() + " is not an MMGA-EMB file");
  const Index count = le::read_u32(in), dim = le::read_u32(in);
  FeatureGallery g;
  g.features.resize(count, dim);
  for (Index i = 0; i < count; ++i)
    for (Index j = 0; j < dim; ++j) g.features(i, j) = le::read_f32(in);

  std::ifstream js(path.string() + ".json");
  if (!js) throw Error("io", "missing sidecar for " + path.string());
  const auto side = nlohmann::json::parse(js);
  side.at("person_ids").get_to(g.person_ids);
  side.at("camera_ids").get_to(g.camera_ids);
  g.role = parse_split(side.at("role").get<std::string>());
  if (static_cast<Index>(g.person_ids.size()) != count || static_cast<Index>(g.camera_ids.size()) != count)
    throw Error("io", "sidecar row count disagrees with " + path.string());
  return g;
}

}  // namespace mmga
