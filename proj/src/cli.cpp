#include "mmga/cli.hpp"

#include "mmga/gradcheck.hpp"
#include "mmga/image_io.hpp"
#include "mmga/masks.hpp"
#include "mmga/tensor_io.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <numeric>
#include <fstream>
#include <sstream>

namespace mmga::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

fs::path resolve_manifest(const fs::path& data) {
  if (fs::is_directory(data)) return data / "manifest.csv";
  return data;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io", "cannot write " + path.string());
  out << text;
  if (!out) throw Error("io", "short write to " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ordered_json loss_json(const LossReport& r) { return ordered_json::parse(r.to_json_line()); }

void apply_thread_cap() {
  if (const char* env = std::getenv("MMGA_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) Eigen::setNbThreads(n);
  }
}

std::pair<Index, Index> parse_size(const std::string& text) {
  const auto x = text.find_first_of("xX");
  if (x == std::string::npos) throw Error("usage", "size must look like HxW, got '" + text + "'");
  try {
    return {std::stol(text.substr(0, x)), std::stol(text.substr(x + 1))};
  } catch (const std::exception&) {
    throw Error("usage", "size must look like HxW, got '" + text + "'");
  }
}

}  // namespace

TrainSummary train_run(RunConfig config, const fs::path& data, const fs::path& out_dir) {
  const Dataset dataset = Dataset::load(resolve_manifest(data));
  config.model.num_identities = dataset.manifest.num_train_ids;
  config.validate();
  fs::create_directories(out_dir);
  write_text(out_dir / "config.json", config.to_json().dump(2) + "\n");

  Model<float> model = Model<float>::build(config.model, config.seed);
  TrainOptions options = config.train_options();
  options.out_dir = out_dir / "checkpoints";
  std::ofstream log(out_dir / "train_log.jsonl", std::ios::binary);
  if (!log) throw Error("io", "cannot write training log in " + out_dir.string());
  TrainSummary summary = train(model, dataset, options, &log);

  ordered_json s;
  s["variant"] = to_string(config.model.variant);
  s["seed"] = config.seed;
  s["steps"] = summary.steps;
  s["final_checkpoint"] = fs::relative(summary.final_checkpoint, out_dir).generic_string();
  s["epochs"] = ordered_json::array();
  for (const auto& e : summary.epochs)
    s["epochs"].push_back({{"epoch", e.epoch}, {"module2_attention", e.module2_attention}, {"mean", loss_json(e.mean)}});
  write_text(out_dir / "summary.json", s.dump(2) + "\n");
  return summary;
}

EvalReport eval_run(const fs::path& checkpoint, const fs::path& data, const fs::path& out_dir) {
  auto [model, manifest] = load_checkpoint(checkpoint);
  const Dataset dataset = Dataset::load(resolve_manifest(data));
  const auto q_idx = dataset.manifest.indices(Split::Query);
  const auto g_idx = dataset.manifest.indices(Split::Gallery);
  if (q_idx.empty() || g_idx.empty()) throw Error("eval", "the corpus needs query and gallery rows");
  const FeatureGallery query = extract(model, dataset, q_idx, Split::Query);
  const FeatureGallery gallery = extract(model, dataset, g_idx, Split::Gallery);
  const EvalReport report =
      cmc_map(distances(query, gallery), query.person_ids, query.camera_ids, gallery.person_ids, gallery.camera_ids);
  fs::create_directories(out_dir);
  write_text(out_dir / "report.json", nlohmann::json(report).dump(2) + "\n");
  write_embeddings(out_dir / "query.emb", query);
  write_embeddings(out_dir / "gallery.emb", gallery);
  return report;
}

namespace {

int cmd_synth(const fs::path& out_dir, int ids, int per_id, std::uint64_t seed, std::ostream& out) {
  SynthConfig cfg;
  cfg.num_ids = ids;
  cfg.per_id = per_id;
  cfg.seed = seed;
  const auto samples = synth_generate(cfg, out_dir);
  out << ordered_json{{"manifest", (out_dir / "manifest.csv").string()}, {"images", samples.size()}}.dump() << '\n';
  return 0;
}

int cmd_masks(const fs::path& labels_path, const std::string& grouping_path, const fs::path& out_dir,
              const std::string& size, std::ostream& out) {
  const PartLabelMap labels = read_pgm(labels_path);
  validate_labels(labels);
  GroupingTable grouping = GroupingTable::lip_default();
  if (!grouping_path.empty()) {
    nlohmann::json j = nlohmann::json::parse(read_text(grouping_path));
    RunConfig rc = RunConfig::from_json({{"grouping", j}});
    grouping = rc.grouping;
  }
  grouping.validate();
  auto [h, w] = size.empty() ? std::pair<Index, Index>{labels.rows(), labels.cols()} : parse_size(size);
  const MaskSet masks = attention_targets(labels, grouping, h, w);
  fs::create_directories(out_dir);
  const std::pair<const char*, const MaskMap*> maps[] = {
      {"whole", &masks.whole}, {"upper", &masks.upper}, {"bottom", &masks.bottom}};
  for (const auto& [name, map] : maps) {
    write_pgm(out_dir / (std::string(name) + ".pgm"), to_bytes(*map));
    Tensorf t(Shape{1, 1, h, w}, Eigen::Map<const Eigen::ArrayXf>(map->data(), h * w).eval());
    save_tensor(out_dir / (std::string(name) + ".tns"), t);
  }
  out << ordered_json{{"out", out_dir.string()}, {"height", h}, {"width", w}}.dump() << '\n';
  return 0;
}

RunConfig load_config(const std::string& path) {
  return path.empty() ? RunConfig{} : RunConfig::load(path);
}

int cmd_train(const std::string& config_path, const fs::path& data, const std::string& variant, Index epochs,
              std::optional<std::uint64_t> seed, const fs::path& out_dir, std::ostream& out) {
  RunConfig cfg = load_config(config_path);
  if (!variant.empty()) cfg.model.variant = parse_variant(variant);
  if (epochs >= 0) cfg.optim.total_epochs = epochs;
  if (seed) cfg.seed = *seed;
  fs::path target = out_dir.empty() ? fs::path(cfg.out_dir) : out_dir;
  if (target.empty()) throw Error("usage", "train needs --out or paths.out in the config");
  const TrainSummary s = train_run(cfg, data.empty() ? fs::path(cfg.data_dir) : data, target);
  ordered_json r{{"checkpoint", s.final_checkpoint.string()}, {"steps", s.steps}};
  if (!s.epochs.empty()) r["final"] = loss_json(s.epochs.back().mean);
  out << r.dump() << '\n';
  return 0;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& data, const fs::path& out_dir, std::ostream& out) {
  const EvalReport report = eval_run(checkpoint, data, out_dir);
  out << render_report(report) << '\n';
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::ostream& out, std::ostream& err) {
  const GradcheckReport report = run_gradcheck(1e-3, 1e-4, seed);
  out << report.table();
  if (!report.passed()) {
    err << ordered_json{{"error", "gradcheck"}, {"message", "finite-difference mismatch above 1e-3"}}.dump() << '\n';
    return 1;
  }
  return 0;
}

int cmd_ablate(const std::string& config_path, const fs::path& data, const fs::path& out_dir,
               const std::vector<std::uint64_t>& seeds, Index epochs, std::ostream& out) {
  const RunConfig base = load_config(config_path);
  ordered_json rows = ordered_json::array();
  std::string table = "Variant         Rank-1     mAP\n";
  for (Variant v : kAllVariants) {
    std::vector<double> rank1, map;
    for (std::uint64_t seed : seeds) {
      RunConfig cfg = base;
      cfg.model.variant = v;
      cfg.seed = seed;
      if (epochs >= 0) cfg.optim.total_epochs = epochs;
      const fs::path dir = out_dir / to_string(v) / ("seed_" + std::to_string(seed));
      RunConfig resolved = cfg;
      resolved.model.num_identities = load_manifest(resolve_manifest(data)).num_train_ids;
      const std::string expected = resolved.to_json().dump(2) + "\n";
      EvalReport report;
      const bool cached = fs::exists(dir / "report.json") && fs::exists(dir / "config.json") &&
                          read_text(dir / "config.json") == expected;
      if (cached) {
        report = nlohmann::json::parse(read_text(dir / "report.json")).get<EvalReport>();
      } else {
        const TrainSummary s = train_run(cfg, data, dir);
        report = eval_run(s.final_checkpoint, data, dir);
      }
      rank1.push_back(report.rank(1));
      map.push_back(report.mAP);
    }
    const double mean_r1 = std::accumulate(rank1.begin(), rank1.end(), 0.0) / double(rank1.size());
    const double mean_map = std::accumulate(map.begin(), map.end(), 0.0) / double(map.size());
    rows.push_back({{"variant", to_string(v)}, {"rank1", rank1}, {"mAP", map}, {"mean_rank1", mean_r1},
                    {"mean_mAP", mean_map}});
    char line[96];
    std::snprintf(line, sizeof line, "%-14s %6.1f & %5.1f\n", to_string(v).c_str(), 100 * mean_r1, 100 * mean_map);
    table += line;
  }
  fs::create_directories(out_dir);
  ordered_json result{{"seeds", seeds}, {"rows", rows}};
  write_text(out_dir / "ablation.json", result.dump(2) + "\n");
  write_text(out_dir / "ablation.txt", table);
  out << table;
  return 0;
}

int cmd_inspect(const fs::path& checkpoint, const fs::path& image_path, const fs::path& out_dir, std::ostream& out) {
  auto [model, manifest] = load_checkpoint(checkpoint);
  const ModelConfig& cfg = model.config();
  const RgbImage image = read_ppm(image_path);
  const Index h = cfg.input_height, w = cfg.input_width, plane = h * w;
  const PlanarImage resized = resize_bilinear(image, h, w);
  Tensorf input(Shape{1, 3, h, w});
  for (int c = 0; c < 3; ++c)
    for (Index p = 0; p < plane; ++p) input.values()[c * plane + p] = normalize_pixel(resized(c, p));
  NoGradGuard no_grad;
  const ForwardResult<float> fwd = model.forward(input, Mode::Eval);
  if (fwd.attention.empty()) throw Error("inspect", "variant " + to_string(cfg.variant) + " has no attention maps");

  static const char* names[] = {"module1", "module2_whole", "module2_upper", "module2_bottom"};
  fs::create_directories(out_dir);
  ordered_json written = ordered_json::array();
  for (std::size_t k = 0; k < fwd.attention.size(); ++k) {
    const Tensorf& s = fwd.attention[k].spatial_norm;
    const Index gh = s.shape().h, gw = s.shape().w;
    MaskMap map = Eigen::Map<const MaskMap>(s.data(), gh, gw);
    write_pgm(out_dir / (std::string(names[k]) + ".pgm"), to_bytes(map));
    RgbImage overlay(h, w);
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const float a = map(std::min(gh - 1, y * gh / h), std::min(gw - 1, x * gw / w));
        const float tint[3] = {255.0f, 0.0f, 0.0f};
        for (int c = 0; c < 3; ++c) {
          const float v = (1 - 0.5f * a) * resized(c, y * w + x) + 0.5f * a * tint[c];
          overlay.at(y, x)[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
      }
    write_ppm(out_dir / (std::string(names[k]) + "_overlay.ppm"), overlay);
    written.push_back(names[k]);
  }
  out << ordered_json{{"out", out_dir.string()}, {"maps", written}}.dump() << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mask-guided attention person re-identification toolkit", "mmga"};
  app.require_subcommand(1);

  std::string out_dir, data, config, variant, labels, grouping, size, checkpoint, image, seeds_text = "0";
  int ids = 20, per_id = 8;
  std::uint64_t seed = 0;
  Index epochs = -1;

  auto* synth = app.add_subcommand("synth", "Render a synthetic corpus with exact part labels");
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--ids", ids, "Number of identities");
  synth->add_option("--per-id", per_id, "Images per identity");
  synth->add_option("--seed", seed, "Random seed");

  auto* masks = app.add_subcommand("masks", "Group a part-label map into whole/upper/bottom masks");
  masks->add_option("--labels", labels, "Label map (PGM)")->required();
  masks->add_option("--grouping", grouping, "Grouping JSON {\"upper\":[..],\"bottom\":[..]}");
  masks->add_option("--out", out_dir, "Output directory")->required();
  masks->add_option("--size", size, "Target size HxW (default: label-map size)");

  auto* train_cmd = app.add_subcommand("train", "Train one variant");
  train_cmd->add_option("--config", config, "Run configuration (JSON)");
  train_cmd->add_option("--data", data, "Corpus directory or manifest");
  train_cmd->add_option("--variant", variant, "Baseline, BaselineAtt, WMGA, DMGA or MMGA");
  train_cmd->add_option("--epochs", epochs, "Override the epoch count");
  auto* seed_opt = train_cmd->add_option("--seed", seed, "Override the seed");
  train_cmd->add_option("--out", out_dir, "Output directory");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the query/gallery split");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  eval_cmd->add_option("--data", data, "Corpus directory or manifest")->required();
  eval_cmd->add_option("--out", out_dir, "Output directory")->required();

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operator");
  grad->add_option("--seed", seed, "Random seed");

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate all five variants");
  ablate->add_option("--config", config, "Run configuration (JSON)");
  ablate->add_option("--data", data, "Corpus directory or manifest")->required();
  ablate->add_option("--out", out_dir, "Output directory")->required();
  ablate->add_option("--seeds", seeds_text, "Comma-separated seeds");
  ablate->add_option("--epochs", epochs, "Override the epoch count");

  auto* inspect = app.add_subcommand("inspect", "Write normalized spatial attention maps for one image");
  inspect->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  inspect->add_option("--image", image, "Image (PPM)")->required();
  inspect->add_option("--out", out_dir, "Output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << ordered_json{{"error", "usage"}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }

  apply_thread_cap();
  try {
    if (synth->parsed()) return cmd_synth(out_dir, ids, per_id, seed, out);
    if (masks->parsed()) return cmd_masks(labels, grouping, out_dir, size, out);
    if (train_cmd->parsed())
      return cmd_train(config, data, variant, epochs, seed_opt->count() ? std::optional(seed) : std::nullopt,
                       out_dir, out);
    if (eval_cmd->parsed()) return cmd_eval(checkpoint, data, out_dir, out);
    if (grad->parsed()) return cmd_gradcheck(seed, out, err);
    if (ablate->parsed()) {
      std::vector<std::uint64_t> seeds;
      std::stringstream ss(seeds_text);
      std::string item;
      while (std::getline(ss, item, ',')) seeds.push_back(std::stoull(item));
      if (seeds.empty()) throw Error("usage", "--seeds is empty");
      return cmd_ablate(config, data, out_dir, seeds, epochs, out);
    }
    if (inspect->parsed()) return cmd_inspect(checkpoint, image, out_dir, out);
  } catch (const Error& e) {
    err << ordered_json{{"error", e.kind()}, {"message", e.what()}}.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << ordered_json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace mmga::cli
