#include "mmga/data.hpp"

#include "mmga/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace mmga {

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Query: return "query";
    case Split::Gallery: return "gallery";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "query") return Split::Query;
  if (name == "gallery") return Split::Gallery;
  throw Error("manifest", "unknown split '" + name + "'");
}

std::vector<std::size_t> Manifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == split) out.push_back(i);
  return out;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

int parse_int(const std::string& text, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw Error("manifest", "line " + std::to_string(line_no) + ": '" + text + "' is not an integer");
  }
}

}  // namespace

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open manifest " + path.string());
  const std::filesystem::path root = path.parent_path();
  std::string line;
  if (!std::getline(in, line)) throw Error("manifest", "empty manifest " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "image,labels,person_id,camera_id,split")
    throw Error("manifest", "unexpected header '" + line + "'");

  Manifest m;
  std::set<std::string> seen;
  std::map<int, int> dense;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 5 || f[0].empty() || f[1].empty())
      throw Error("manifest", "line " + std::to_string(line_no) + ": expected 5 fields");
    Sample s;
    s.image = std::filesystem::path(f[0]).is_absolute() ? std::filesystem::path(f[0]) : root / f[0];
    s.labels = std::filesystem::path(f[1]).is_absolute() ? std::filesystem::path(f[1]) : root / f[1];
    s.person_id = parse_int(f[2], line_no);
    s.camera_id = parse_int(f[3], line_no);
    s.split = parse_split(f[4]);
    if (!seen.insert(s.image.lexically_normal().string()).second)
      throw Error("manifest", "duplicate image path " + f[0]);
    if (s.split == Split::Train) {
      if (s.person_id < 0) throw Error("manifest", "line " + std::to_string(line_no) + ": negative train id");
      auto [it, inserted] = dense.try_emplace(s.person_id, static_cast<int>(dense.size()));
      s.label = it->second;
    }
    ++m.split_counts[static_cast<std::size_t>(s.split)];
    m.samples.push_back(std::move(s));
  }
  m.num_train_ids = static_cast<int>(dense.size());
  if (m.num_train_ids == 0) throw Error("manifest", "no training identities");
  return m;
}

void write_manifest(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::ofstream out(path);
  if (!out) throw Error("io", "cannot write manifest " + path.string());
  out << "image,labels,person_id,camera_id,split\n";
  for (const auto& s : samples)
    out << s.image.generic_string() << ',' << s.labels.generic_string() << ',' << s.person_id << ','
        << s.camera_id << ',' << to_string(s.split) << '\n';
}

void PKBatchSpec::validate() const {
  if (p < 2 || k < 2) throw Error("config", "PK batches need P >= 2 and K >= 2");
}

namespace {

std::map<int, std::vector<std::size_t>> train_by_label(const std::vector<Sample>& samples) {
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == Split::Train) by_label[samples[i].label].push_back(i);
  return by_label;
}

void deal_identity(const std::vector<std::size_t>& pool, Index k, std::mt19937_64& rng,
                   std::vector<std::size_t>& out) {
  if (static_cast<Index>(pool.size()) >= k) {
    std::vector<std::size_t> shuffled = pool;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    out.insert(out.end(), shuffled.begin(), shuffled.begin() + k);
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (Index j = 0; j < k; ++j) out.push_back(pool[pick(rng)]);
  }
}

}  // namespace

std::vector<std::size_t> pk_sample(const std::vector<Sample>& samples, const PKBatchSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  const auto by_label = train_by_label(samples);
  if (static_cast<Index>(by_label.size()) < spec.p)
    throw Error("data", "need " + std::to_string(spec.p) + " training identities, have " +
                            std::to_string(by_label.size()));
  std::vector<int> ids;
  for (const auto& [label, pool] : by_label) ids.push_back(label);
  std::shuffle(ids.begin(), ids.end(), rng);
  std::vector<std::size_t> out;
  for (Index i = 0; i < spec.p; ++i) deal_identity(by_label.at(ids[i]), spec.k, rng, out);
  return out;
}

std::vector<std::vector<std::size_t>> pk_epoch(const std::vector<Sample>& samples, const PKBatchSpec& spec,
                                               std::mt19937_64& rng) {
  spec.validate();
  const auto by_label = train_by_label(samples);
  const Index n = static_cast<Index>(by_label.size());
  if (n < spec.p)
    throw Error("data", "need " + std::to_string(spec.p) + " training identities, have " + std::to_string(n));
  std::vector<int> order;
  for (const auto& [label, pool] : by_label) order.push_back(label);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::size_t>> batches;
  for (Index start = 0; start < n; start += spec.p) {
    std::vector<int> chosen(order.begin() + start, order.begin() + std::min(n, start + spec.p));
    if (static_cast<Index>(chosen.size()) < spec.p) {
      std::vector<int> rest;
      for (int id : order)
        if (std::find(chosen.begin(), chosen.end(), id) == chosen.end()) rest.push_back(id);
      std::shuffle(rest.begin(), rest.end(), rng);
      chosen.insert(chosen.end(), rest.begin(), rest.begin() + (spec.p - static_cast<Index>(chosen.size())));
    }
    std::vector<std::size_t> batch;
    for (int id : chosen) deal_identity(by_label.at(id), spec.k, rng, batch);
    batches.push_back(std::move(batch));
  }
  return batches;
}

void AugmentConfig::validate() const {
  auto prob = [](double p) { return p >= 0 && p <= 1; };
  if (!prob(flip_probability) || !prob(erase_probability)) throw Error("config", "probabilities must lie in [0,1]");
  if (!(erase_area_min > 0 && erase_area_min <= erase_area_max && erase_area_max < 1))
    throw Error("config", "erase area range must satisfy 0 < min <= max < 1");
  if (!(erase_aspect_min > 0 && erase_aspect_min <= erase_aspect_max))
    throw Error("config", "erase aspect range must satisfy 0 < min <= max");
}

PlanarImage resize_bilinear(const RgbImage& image, Index height, Index width) {
  if (image.height <= 0 || image.width <= 0) throw Error("image", "empty image");
  PlanarImage out(3, height * width);
  const double sy = double(image.height) / double(height);
  const double sx = double(image.width) / double(width);
  for (Index y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(image.height - 1));
    const Index y0 = static_cast<Index>(fy);
    const Index y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - double(y0);
    for (Index x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(image.width - 1));
      const Index x0 = static_cast<Index>(fx);
      const Index x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - double(x0);
      for (int c = 0; c < 3; ++c) {
        const double top = (1 - wx) * image.at(y0, x0)[c] + wx * image.at(y0, x1)[c];
        const double bottom = (1 - wx) * image.at(y1, x0)[c] + wx * image.at(y1, x1)[c];
        out(c, y * width + x) = static_cast<float>((1 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

PartLabelMap resize_nearest(const PartLabelMap& labels, Index height, Index width) {
  PartLabelMap out(height, width);
  for (Index y = 0; y < height; ++y) {
    const Index sy = std::min<Index>(labels.rows() - 1, ((2 * y + 1) * labels.rows()) / (2 * height));
    for (Index x = 0; x < width; ++x) {
      const Index sx = std::min<Index>(labels.cols() - 1, ((2 * x + 1) * labels.cols()) / (2 * width));
      out(y, x) = labels(sy, sx);
    }
  }
  return out;
}

PlanarImage flip_image(const PlanarImage& image, Index height, Index width) {
  PlanarImage out(3, height * width);
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) out.col(y * width + x) = image.col(y * width + (width - 1 - x));
  return out;
}

PartLabelMap flip_labels(const PartLabelMap& labels) { return labels.rowwise().reverse(); }

Augmented augment(const RgbImage& image, const PartLabelMap& labels, Index height, Index width, std::mt19937_64& rng,
                  bool train, const AugmentConfig& config, const AugmentOverride& force) {
  if (labels.rows() != image.height || labels.cols() != image.width)
    throw Error("shape", "label map extents differ from the image");
  Augmented out{resize_bilinear(image, height, width), resize_nearest(labels, height, width), height, width};
  if (!train) return out;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool flip = force.flip.value_or(unit(rng) < config.flip_probability);
  if (flip) {
    out.image = flip_image(out.image, height, width);
    out.labels = flip_labels(out.labels);
  }

  const bool erase = force.erase_area.has_value() || unit(rng) < config.erase_probability;
  if (!erase) return out;
  const double total = double(height * width);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double area =
        total * (force.erase_area ? *force.erase_area
                                  : config.erase_area_min + unit(rng) * (config.erase_area_max - config.erase_area_min));
    const double log_lo = std::log(config.erase_aspect_min), log_hi = std::log(config.erase_aspect_max);
    const double aspect = std::exp(log_lo + unit(rng) * (log_hi - log_lo));
    const auto h = static_cast<Index>(std::lround(std::sqrt(area * aspect)));
    const auto w = static_cast<Index>(std::lround(std::sqrt(area / aspect)));
    if (h < 1 || w < 1 || h >= height || w >= width) continue;
    const Index y0 = std::uniform_int_distribution<Index>(0, height - h)(rng);
    const Index x0 = std::uniform_int_distribution<Index>(0, width - w)(rng);
    for (Index y = y0; y < y0 + h; ++y)
      for (Index x = x0; x < x0 + w; ++x)
        for (int c = 0; c < 3; ++c) out.image(c, y * width + x) = config.fill[c];
    break;
  }
  return out;
}

float normalize_pixel(float value) { return (value / 255.0f - kPixelCenter) / kPixelScale; }

Dataset Dataset::load(const std::filesystem::path& manifest_path) {
  Dataset d;
  d.manifest = load_manifest(manifest_path);
  std::array<double, 3> sum{};
  double count = 0;
  for (const auto& s : d.manifest.samples) {
    RgbImage image = read_ppm(s.image);
    PartLabelMap labels = read_pgm(s.labels);
    validate_labels(labels);
    if (labels.rows() != image.height || labels.cols() != image.width)
      throw Error("shape", "label map " + s.labels.string() + " does not match its image");
    if (s.split == Split::Train) {
      for (std::size_t i = 0; i < image.pixels.size(); ++i) sum[i % 3] += image.pixels[i];
      count += double(image.height * image.width);
    }
    d.images.push_back(std::move(image));
    d.labels.push_back(std::move(labels));
  }
  for (int c = 0; c < 3; ++c) d.channel_mean[c] = static_cast<float>(sum[c] / count);
  return d;
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, Index height, Index width,
                 Index attention_height, Index attention_width, const GroupingTable& grouping, std::mt19937_64& rng,
                 bool train, const AugmentConfig& config) {
  const Index n = static_cast<Index>(indices.size());
  Batch batch;
  batch.images = Tensorf(Shape{n, 3, height, width});
  const Index plane = height * width;
  for (Index i = 0; i < n; ++i) {
    const std::size_t idx = indices[i];
    const Sample& s = data.manifest.samples.at(idx);
    Augmented a = augment(data.images[idx], data.labels[idx], height, width, rng, train, config);
    float* dst = batch.images.data() + i * 3 * plane;
    for (int c = 0; c < 3; ++c)
      for (Index p = 0; p < plane; ++p) dst[c * plane + p] = normalize_pixel(a.image(c, p));
    batch.labels.push_back(s.split == Split::Train ? s.label : s.person_id);
    batch.masks.push_back(attention_targets(a.labels, grouping, attention_height, attention_width));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Synthetic corpus.

namespace {

using Rgb = std::array<double, 3>;

Rgb hsv(double h, double s, double v) {
  h = (h - std::floor(h)) * 6.0;
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

struct Appearance {
  Rgb upper, stripe, lower, hair, skin, shoes;
  int upper_label;  // upper-clothes or coat
  bool skirt;
  int stripe_period;  // 0 for plain garments
  double build;
};

Appearance appearance(int person_id, std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x1d3u,
                    static_cast<std::uint32_t>(person_id)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Appearance a;
  const double hue = person_id * 0.61803398875 + 0.1 * u(rng);
  a.upper = hsv(hue, 0.55 + 0.45 * u(rng), 0.45 + 0.55 * u(rng));
  a.stripe = hsv(hue + 0.3 + 0.4 * u(rng), 0.3 + 0.5 * u(rng), 0.2 + 0.8 * u(rng));
  a.lower = hsv(u(rng), 0.2 + 0.8 * u(rng), 0.15 + 0.75 * u(rng));
  a.hair = hsv(0.05 + 0.08 * u(rng), 0.3 + 0.5 * u(rng), 0.05 + 0.45 * u(rng));
  const std::array<Rgb, 3> skins{Rgb{0.95, 0.8, 0.68}, Rgb{0.78, 0.58, 0.42}, Rgb{0.45, 0.32, 0.24}};
  a.skin = skins[static_cast<std::size_t>(u(rng) * 3) % 3];
  a.shoes = hsv(u(rng), 0.5 * u(rng), 0.1 + 0.6 * u(rng));
  a.upper_label = u(rng) < 0.5 ? 5 : 7;
  a.skirt = u(rng) < 0.3;
  a.stripe_period = u(rng) < 0.4 ? 4 + static_cast<int>(u(rng) * 5) : 0;
  a.build = 0.9 + 0.2 * u(rng);
  return a;
}

enum Group : int { kNone = 0, kUpper = 1, kBottom = 2 };

struct Canvas {
  Index h, w;
  std::vector<Rgb> color;
  PartLabelMap labels;
  MaskMap upper, bottom;

  Canvas(Index height, Index width)
      : h(height),
        w(width),
        color(static_cast<std::size_t>(height * width)),
        labels(PartLabelMap::Zero(height, width)),
        upper(MaskMap::Zero(height, width)),
        bottom(MaskMap::Zero(height, width)) {}

  void paint(Index y, Index x, const Rgb& c, int label, int group) {
    if (y < 0 || y >= h || x < 0 || x >= w) return;
    color[static_cast<std::size_t>(y * w + x)] = c;
    labels(y, x) = static_cast<std::uint8_t>(label);
    upper(y, x) = (group & kUpper) ? 1.0f : 0.0f;
    bottom(y, x) = (group & kBottom) ? 1.0f : 0.0f;
  }

  template <typename ColorFn>
  void rect(double y0, double y1, double x0, double x1, int label, int group, ColorFn&& fn) {
    for (Index y = static_cast<Index>(std::ceil(y0)); y < static_cast<Index>(std::ceil(y1)); ++y)
      for (Index x = static_cast<Index>(std::ceil(x0)); x < static_cast<Index>(std::ceil(x1)); ++x)
        paint(y, x, fn(y, x), label, group);
  }

  void ellipse(double cy, double cx, double ry, double rx, int label, int group, const Rgb& c) {
    for (Index y = static_cast<Index>(cy - ry) - 1; y <= static_cast<Index>(cy + ry) + 1; ++y)
      for (Index x = static_cast<Index>(cx - rx) - 1; x <= static_cast<Index>(cx + rx) + 1; ++x) {
        const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
        if (dy * dy + dx * dx <= 1.0) paint(y, x, c, label, group);
      }
  }
};

}  // namespace

SynthImage render_person(int person_id, int camera_id, int image_index, std::uint64_t seed, Index height,
                         Index width) {
  const Appearance a = appearance(person_id, seed);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5e7u,
                    static_cast<std::uint32_t>(person_id), static_cast<std::uint32_t>(image_index)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  const double H = double(height), W = double(width);

  Canvas cv(height, width);
  // Cluttered background: a base gradient with random blocks.
  const Rgb base = hsv(u(rng), 0.1 + 0.3 * u(rng), 0.3 + 0.5 * u(rng));
  const double grad = range(-0.2, 0.2);
  cv.rect(0, H, 0, W, 0, kNone, [&](Index y, Index) {
    const double g = 1.0 + grad * (y / H - 0.5);
    return Rgb{base[0] * g, base[1] * g, base[2] * g};
  });
  const int blocks = 6 + static_cast<int>(u(rng) * 6);
  for (int b = 0; b < blocks; ++b) {
    const Rgb c = hsv(u(rng), 0.5 * u(rng), 0.2 + 0.7 * u(rng));
    const double y0 = range(0, H), x0 = range(-0.2 * W, W);
    const double bh = range(0.05, 0.3) * H, bw = range(0.1, 0.5) * W;
    cv.rect(y0, y0 + bh, x0, x0 + bw, 0, kNone, [&](Index, Index) { return c; });
  }

  // Person, in a frame of height ph centred at (top, cx).
  const double scale = range(0.85, 1.0);
  const double ph = 0.92 * H * scale;
  const double top = (H - ph) / 2 + range(-0.03, 0.03) * H;
  const double cx = W / 2 + range(-0.08, 0.08) * W;
  const double pw = 0.62 * W * scale * a.build;
  auto Y = [&](double t) { return top + t * ph; };
  auto X = [&](double t) { return cx + t * pw; };
  auto solid = [](const Rgb& c) { return [c](Index, Index) { return c; }; };

  const double swing = range(-0.03, 0.03);
  cv.rect(Y(0.16 + swing), Y(0.47 + swing), X(-0.5), X(-0.375), 14, kUpper, solid(a.skin));
  cv.rect(Y(0.16 - swing), Y(0.47 - swing), X(0.375), X(0.5), 15, kUpper, solid(a.skin));
  cv.rect(Y(0.15), Y(0.52), X(-0.375), X(0.375), a.upper_label, kUpper, [&](Index y, Index) {
    if (a.stripe_period > 0 && ((y - static_cast<Index>(Y(0.15))) / a.stripe_period) % 2 == 1) return a.stripe;
    return a.upper;
  });
  cv.ellipse(Y(0.065), cx, 0.065 * ph, 0.2 * pw, 2, kUpper, a.hair);
  cv.ellipse(Y(0.1), cx, 0.05 * ph, 0.16 * pw, 13, kUpper, a.skin);
  if (a.skirt) {
    cv.rect(Y(0.70), Y(0.90), X(-0.28), X(-0.06), 16, kBottom, solid(a.skin));
    cv.rect(Y(0.70), Y(0.90), X(0.06), X(0.28), 17, kBottom, solid(a.skin));
    cv.rect(Y(0.52), Y(0.70), X(-0.4), X(0.4), 12, kBottom, solid(a.lower));
  } else {
    cv.rect(Y(0.52), Y(0.60), X(-0.36), X(0.36), 9, kBottom, solid(a.lower));
    cv.rect(Y(0.60), Y(0.90), X(-0.36), X(-0.03), 9, kBottom, solid(a.lower));
    cv.rect(Y(0.60), Y(0.90), X(0.03), X(0.36), 9, kBottom, solid(a.lower));
  }
  cv.rect(Y(0.90), Y(0.97), X(-0.38), X(-0.04), 18, kBottom, solid(a.shoes));
  cv.rect(Y(0.90), Y(0.97), X(0.04), X(0.38), 19, kBottom, solid(a.shoes));

  // Occluder (background label) entering from the bottom or a side.
  if (u(rng) < 0.25) {
    const Rgb c = hsv(u(rng), 0.6 * u(rng), 0.2 + 0.6 * u(rng));
    const double oh = range(0.1, 0.25) * H, ow = range(0.3, 0.5) * W;
    const double y0 = u(rng) < 0.5 ? H - oh : range(0.3, 0.7) * H;
    const double x0 = u(rng) < 0.5 ? 0.0 : W - ow;
    cv.rect(y0, y0 + oh, x0, x0 + ow, 0, kNone, solid(c));
  }

  // Camera tint, exposure jitter and sensor noise.
  std::seed_seq cam_seq{static_cast<std::uint32_t>(seed), 0xca3u, static_cast<std::uint32_t>(camera_id)};
  std::mt19937_64 cam_rng(cam_seq);
  std::uniform_real_distribution<double> tint_dist(0.85, 1.15);
  const Rgb tint{tint_dist(cam_rng), tint_dist(cam_rng), tint_dist(cam_rng)};
  const double exposure = range(0.9, 1.1);
  std::normal_distribution<double> noise(0.0, 5.0);

  SynthImage out;
  out.image = RgbImage(height, width);
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) {
      const Rgb& c = cv.color[static_cast<std::size_t>(y * width + x)];
      for (int k = 0; k < 3; ++k) {
        const double v = 255.0 * c[k] * tint[k] * exposure + noise(rng);
        out.image.at(y, x)[k] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  out.labels = std::move(cv.labels);
  out.upper = std::move(cv.upper);
  out.bottom = std::move(cv.bottom);
  return out;
}

std::vector<Sample> synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir) {
  if (config.num_ids < 2 || config.per_id < 2 || config.cameras < 1)
    throw Error("config", "synth needs >= 2 identities, >= 2 images per identity and >= 1 camera");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  std::filesystem::create_directories(out_dir / "labels", ec);
  if (ec) throw Error("io", "cannot create " + out_dir.string() + ": " + ec.message());

  const int train_ids = config.num_ids / 2;
  std::vector<Sample> samples;
  for (int id = 0; id < config.num_ids; ++id) {
    std::vector<bool> camera_seen(static_cast<std::size_t>(config.cameras), false);
    for (int j = 0; j < config.per_id; ++j) {
      const int cam = j % config.cameras;
      char stem[64];
      std::snprintf(stem, sizeof stem, "%04d_c%d_%02d", id, cam, j);
      Sample s;
      s.image = std::filesystem::path("images") / (std::string(stem) + ".ppm");
      s.labels = std::filesystem::path("labels") / (std::string(stem) + ".pgm");
      s.person_id = id;
      s.camera_id = cam;
      if (id < train_ids) {
        s.split = Split::Train;
        s.label = id;
      } else {
        s.split = camera_seen[static_cast<std::size_t>(cam)] ? Split::Gallery : Split::Query;
        camera_seen[static_cast<std::size_t>(cam)] = true;
      }
      const SynthImage img = render_person(id, cam, j, config.seed, config.height, config.width);
      write_ppm(out_dir / s.image, img.image);
      write_pgm(out_dir / s.labels, img.labels);
      samples.push_back(std::move(s));
    }
  }
  write_manifest(out_dir / "manifest.csv", samples);
  return samples;
}

}  // namespace mmga
