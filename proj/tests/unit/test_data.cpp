#include "mmga/data.hpp"
#include "mmga/image_io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

using namespace mmga;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mmga_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_text(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "manifest.csv";
  std::ofstream(p) << text;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<Sample> train_pool(int ids, const std::vector<int>& per_id) {
  std::vector<Sample> out;
  for (int i = 0; i < ids; ++i)
    for (int j = 0; j < per_id[static_cast<std::size_t>(i) % per_id.size()]; ++j) {
      Sample s;
      s.image = "img_" + std::to_string(i) + "_" + std::to_string(j);
      s.person_id = 100 + i;
      s.label = i;
      out.push_back(s);
    }
  return out;
}

int label_of(const std::vector<Sample>& pool, std::size_t i) { return pool[i].label; }

}  // namespace

TEST(Manifest, ReindexesTrainIdentities) {
  const fs::path dir = scratch("reindex");
  const fs::path p = write_text(dir,
                                "image,labels,person_id,camera_id,split\n"
                                "a.ppm,a.pgm,42,0,train\nb.ppm,b.pgm,7,1,train\nc.ppm,c.pgm,42,1,train\n"
                                "d.ppm,d.pgm,7,0,train\ne.ppm,e.pgm,42,0,train\nf.ppm,f.pgm,7,1,train\n"
                                "q.ppm,q.pgm,99,0,query\ng.ppm,g.pgm,-1,1,gallery\n");
  const Manifest m = load_manifest(p);
  EXPECT_EQ(m.num_train_ids, 2);
  EXPECT_EQ(m.samples[0].label, 0);
  EXPECT_EQ(m.samples[1].label, 1);
  EXPECT_EQ(m.samples[2].label, 0);
  EXPECT_EQ(m.samples[6].label, -1);
  EXPECT_EQ(m.split_counts, (std::array<Index, 3>{6, 1, 1}));
  EXPECT_EQ(m.samples[0].image, dir / "a.ppm");
  EXPECT_EQ(m.indices(Split::Query), std::vector<std::size_t>{6});
}

TEST(Manifest, Errors) {
  const fs::path dir = scratch("errors");
  auto kind = [&](const std::string& text) {
    try {
      load_manifest(write_text(dir, text));
    } catch (const Error& e) {
      return e.kind() + ": " + e.what();
    }
    return std::string("ok");
  };
  const std::string header = "image,labels,person_id,camera_id,split\n";
  EXPECT_EQ(kind(header + "q.ppm,q.pgm,3,0,query\n"), "manifest: no training identities");
  EXPECT_EQ(kind(header + "a.ppm,a.pgm,3,0\n").substr(0, 8), "manifest");
  EXPECT_EQ(kind(header + "a.ppm,a.pgm,x,0,train\n").substr(0, 8), "manifest");
  EXPECT_EQ(kind(header + "a.ppm,a.pgm,1,0,train\na.ppm,b.pgm,1,0,train\n").substr(0, 8), "manifest");
  EXPECT_EQ(kind(header + "a.ppm,a.pgm,1,0,holdout\n").substr(0, 8), "manifest");
  EXPECT_THROW(load_manifest(dir / "missing.csv"), Error);
}

TEST(Manifest, WriteThenLoad) {
  const fs::path dir = scratch("roundtrip");
  std::vector<Sample> rows = train_pool(2, {2});
  for (auto& s : rows) s.labels = s.image.string() + ".pgm";
  rows[3].split = Split::Gallery;
  write_manifest(dir / "manifest.csv", rows);
  const Manifest m = load_manifest(dir / "manifest.csv");
  ASSERT_EQ(m.samples.size(), 4u);
  EXPECT_EQ(m.samples[3].split, Split::Gallery);
  EXPECT_EQ(m.samples[2].person_id, 101);
}

TEST(PKSampler, ShapeDeterminismAndReplacement) {
  const auto pool = train_pool(30, {5});
  std::mt19937_64 a(3), b(3);
  const auto first = pk_sample(pool, {24, 4}, a);
  EXPECT_EQ(first.size(), 96u);
  std::set<int> ids;
  for (std::size_t i : first) ids.insert(label_of(pool, i));
  EXPECT_EQ(ids.size(), 24u);
  for (std::size_t g = 0; g < 24; ++g)
    for (std::size_t j = 1; j < 4; ++j) EXPECT_EQ(label_of(pool, first[g * 4 + j]), label_of(pool, first[g * 4]));
  EXPECT_EQ(first, pk_sample(pool, {24, 4}, b));

  const auto sparse = train_pool(2, {2});
  std::mt19937_64 c(4);
  const auto dup = pk_sample(sparse, {2, 4}, c);
  ASSERT_EQ(dup.size(), 8u);
  EXPECT_LT(std::set<std::size_t>(dup.begin(), dup.begin() + 4).size(), 4u);
  EXPECT_THROW(pk_sample(sparse, {3, 4}, c), Error);
}

TEST(PKSampler, EpochCoversEveryIdentity) {
  const auto pool = train_pool(10, {3, 6});
  std::mt19937_64 rng(5);
  const auto batches = pk_epoch(pool, {4, 3}, rng);
  ASSERT_EQ(batches.size(), 3u);
  std::set<int> covered;
  for (const auto& batch : batches) {
    ASSERT_EQ(batch.size(), 12u);
    std::map<int, int> counts;
    for (std::size_t i : batch) ++counts[label_of(pool, i)];
    EXPECT_EQ(counts.size(), 4u);
    for (auto [id, count] : counts) {
      EXPECT_EQ(count, 3);
      covered.insert(id);
    }
  }
  EXPECT_EQ(covered.size(), 10u);
}

TEST(Augment, EvalModeIsResizeOnly) {
  const SynthImage person = render_person(3, 0, 1, 9, 144, 48);
  std::mt19937_64 a(1), b(2);
  const Augmented x = augment(person.image, person.labels, 96, 32, a, false);
  const Augmented y = augment(person.image, person.labels, 96, 32, b, false);
  EXPECT_TRUE((x.image == y.image).all());
  EXPECT_TRUE((x.labels == y.labels).all());
  EXPECT_TRUE((x.image == resize_bilinear(person.image, 96, 32)).all());
  EXPECT_TRUE((x.labels == resize_nearest(person.labels, 96, 32)).all());
}

TEST(Augment, ResizeIdentityAndConstant) {
  const SynthImage person = render_person(1, 1, 0, 2, 144, 48);
  const PlanarImage same = resize_bilinear(person.image, 144, 48);
  for (Index y = 0; y < 144; ++y)
    for (Index x = 0; x < 48; ++x)
      for (int c = 0; c < 3; ++c) EXPECT_EQ(same(c, y * 48 + x), float(person.image.at(y, x)[c]));
  EXPECT_TRUE((resize_nearest(person.labels, 144, 48) == person.labels).all());
  RgbImage flat(10, 6);
  std::fill(flat.pixels.begin(), flat.pixels.end(), std::uint8_t{77});
  EXPECT_TRUE((resize_bilinear(flat, 23, 5) == 77.0f).all());
}

TEST(Augment, FlipIsAnInvolutionAndMovesLabelsWithPixels) {
  const SynthImage person = render_person(4, 1, 2, 3, 144, 48);
  AugmentConfig cfg;
  cfg.erase_probability = 0;
  std::mt19937_64 rng(6);
  const Augmented plain = augment(person.image, person.labels, 96, 32, rng, true, cfg, {.flip = false});
  const Augmented flipped = augment(person.image, person.labels, 96, 32, rng, true, cfg, {.flip = true});
  EXPECT_TRUE((flipped.image == flip_image(plain.image, 96, 32)).all());
  EXPECT_TRUE((flipped.labels == flip_labels(plain.labels)).all());
  EXPECT_TRUE((flip_image(flip_image(plain.image, 96, 32), 96, 32) == plain.image).all());
  EXPECT_TRUE((flip_labels(flip_labels(plain.labels)) == plain.labels).all());
}

TEST(Augment, ForcedEraseCoversOneTenthWithOneRectangle) {
  RgbImage image(384, 128);
  std::fill(image.pixels.begin(), image.pixels.end(), std::uint8_t{7});
  const PartLabelMap labels = PartLabelMap::Constant(384, 128, 5);
  AugmentConfig cfg;
  cfg.fill = {200.0f, 100.0f, 50.0f};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const Augmented out = augment(image, labels, 384, 128, rng, true, cfg, {.flip = false, .erase_area = 0.1});
    Index count = 0, y0 = 384, y1 = -1, x0 = 128, x1 = -1;
    for (Index y = 0; y < 384; ++y)
      for (Index x = 0; x < 128; ++x) {
        const auto px = out.image.col(y * 128 + x);
        if (px(0) == 200.0f && px(1) == 100.0f && px(2) == 50.0f) {
          ++count;
          y0 = std::min(y0, y), y1 = std::max(y1, y), x0 = std::min(x0, x), x1 = std::max(x1, x);
        } else {
          EXPECT_TRUE((px == 7.0f).all());
        }
      }
    EXPECT_EQ(count, (y1 - y0 + 1) * (x1 - x0 + 1));
    EXPECT_NEAR(double(count) / (384 * 128), 0.1, 0.005);
    EXPECT_TRUE((out.labels == labels).all());
  }
}

TEST(Augment, NormalizePixel) {
  EXPECT_FLOAT_EQ(normalize_pixel(0), -2.0f);
  EXPECT_FLOAT_EQ(normalize_pixel(127.5f), 0.0f);
  EXPECT_FLOAT_EQ(normalize_pixel(255), 2.0f);
  AugmentConfig bad;
  bad.erase_area_max = 1.5;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Masks, FlipConsistency) {
  const GroupingTable g = GroupingTable::lip_default();
  for (int id = 0; id < 5; ++id) {
    const SynthImage person = render_person(id, id % 2, id, 11, 144, 48);
    const MaskSet direct = group_masks(person.labels, g);
    const MaskSet mirrored = group_masks(flip_labels(person.labels), g);
    EXPECT_TRUE((mirrored.whole == direct.whole.rowwise().reverse()).all());
    EXPECT_TRUE((mirrored.upper == direct.upper.rowwise().reverse()).all());
    EXPECT_TRUE((mirrored.bottom == direct.bottom.rowwise().reverse()).all());
  }
}

TEST(Synth, CorpusCountsSplitsAndDeterminism) {
  const fs::path a = scratch("synth_a"), b = scratch("synth_b");
  const SynthConfig cfg{20, 8, 7};
  const auto rows = synth_generate(cfg, a);
  synth_generate(cfg, b);
  EXPECT_EQ(rows.size(), 160u);
  const Manifest m = load_manifest(a / "manifest.csv");
  EXPECT_EQ(m.samples.size(), 160u);
  EXPECT_EQ(m.num_train_ids, 10);
  EXPECT_EQ(m.split_counts, (std::array<Index, 3>{80, 20, 60}));
  Index images = 0, labels = 0;
  for (const auto& e : fs::directory_iterator(a / "images")) {
    ++images;
    EXPECT_EQ(slurp(e.path()), slurp(b / "images" / e.path().filename()));
  }
  for (const auto& e : fs::directory_iterator(a / "labels")) {
    ++labels;
    EXPECT_EQ(slurp(e.path()), slurp(b / "labels" / e.path().filename()));
  }
  EXPECT_EQ(images, 160);
  EXPECT_EQ(labels, 160);
  EXPECT_EQ(slurp(a / "manifest.csv"), slurp(b / "manifest.csv"));
  std::set<std::pair<int, int>> query_cams;
  for (const auto& s : m.samples)
    if (s.split == Split::Query) query_cams.insert({s.person_id, s.camera_id});
  EXPECT_EQ(query_cams.size(), 20u);
}

TEST(Synth, GroupedMasksEqualGeneratorMasks) {
  const GroupingTable g = GroupingTable::lip_default();
  for (int id = 0; id < 20; ++id)
    for (int j = 0; j < 8; ++j) {
      const SynthImage person = render_person(id, j % 2, j, 7, 144, 48);
      const MaskSet m = group_masks(person.labels, g);
      EXPECT_TRUE((m.upper == person.upper).all()) << id << "/" << j;
      EXPECT_TRUE((m.bottom == person.bottom).all()) << id << "/" << j;
      EXPECT_TRUE((m.whole == person.upper.max(person.bottom)).all());
      EXPECT_GT(m.upper.sum(), 0);
      EXPECT_GT(m.bottom.sum(), 0);
    }
}

TEST(Dataset, LoadAndBatch) {
  const fs::path dir = scratch("dataset");
  synth_generate({6, 4, 3}, dir);
  const Dataset d = Dataset::load(dir / "manifest.csv");
  EXPECT_EQ(d.images.size(), 24u);
  for (float c : d.channel_mean) {
    EXPECT_GT(c, 0.0f);
    EXPECT_LT(c, 255.0f);
  }
  const std::vector<std::size_t> idx{0, 1, 4, 5};
  std::mt19937_64 rng(1);
  const Batch batch = make_batch(d, idx, 96, 32, 6, 2, GroupingTable::lip_default(), rng, false, {});
  EXPECT_EQ(batch.images.shape(), (Shape{4, 3, 96, 32}));
  EXPECT_EQ(batch.labels, (std::vector<int>{0, 0, 1, 1}));
  ASSERT_EQ(batch.masks.size(), 4u);
  EXPECT_EQ(batch.masks[0].whole.rows(), 6);
  EXPECT_EQ(batch.masks[0].whole.cols(), 2);
  const PlanarImage resized = resize_bilinear(d.images[0], 96, 32);
  EXPECT_FLOAT_EQ(batch.images.at(0, 1, 10, 3), normalize_pixel(resized(1, 10 * 32 + 3)));
}
