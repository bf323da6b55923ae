#include "mmga/run_config.hpp"

#include <fstream>
#include <set>

namespace mmga {

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw Error("config", where + " must be an object");
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw Error("config", "unknown key '" + key + "' in " + where);
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  nlohmann::json m = model;
  nlohmann::ordered_json model_json;
  for (const char* key : {"preset", "variant", "input_height", "input_width", "stem_width", "block", "stage_widths",
                          "stage_blocks", "head_whole", "head_upper", "head_bottom", "attention_s", "attention_r",
                          "attention_height", "attention_width", "num_identities"})
    model_json[key] = m.at(key);
  j["model"] = model_json;
  j["loss"] = {{"lambda0", loss.lambda0},
               {"lambda1", loss.lambda1},
               {"lambda2", loss.lambda2},
               {"margin", loss.margin},
               {"per_pixel_mean", loss.per_pixel_mean}};
  j["optim"] = {{"base_lr_backbone", optim.base_lr_backbone}, {"base_lr_other", optim.base_lr_other},
                {"weight_decay", optim.weight_decay},         {"decay_factor", optim.decay_factor},
                {"decay_every", optim.decay_every},           {"total_epochs", optim.total_epochs}};
  j["sampler"] = {{"P", sampler.p}, {"K", sampler.k}};
  j["augment"] = {{"flip_probability", augment.flip_probability},
                  {"erase_probability", augment.erase_probability},
                  {"erase_area_min", augment.erase_area_min},
                  {"erase_area_max", augment.erase_area_max},
                  {"erase_aspect_min", augment.erase_aspect_min},
                  {"erase_aspect_max", augment.erase_aspect_max}};
  j["grouping"] = {{"upper", grouping.upper}, {"bottom", grouping.bottom}};
  j["paths"] = {{"data", data_dir}, {"out", out_dir}};
  j["seed"] = seed;
  j["checkpoint_every"] = checkpoint_every;
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  reject_unknown(j, {"model", "loss", "optim", "sampler", "augment", "grouping", "paths", "seed", "checkpoint_every"},
                 "config");
  try {
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      reject_unknown(l, {"lambda0", "lambda1", "lambda2", "margin", "per_pixel_mean"}, "loss");
      read(l, "lambda0", c.loss.lambda0);
      read(l, "lambda1", c.loss.lambda1);
      read(l, "lambda2", c.loss.lambda2);
      read(l, "margin", c.loss.margin);
      read(l, "per_pixel_mean", c.loss.per_pixel_mean);
    }
    if (j.contains("optim")) {
      const auto& o = j.at("optim");
      reject_unknown(o, {"base_lr_backbone", "base_lr_other", "weight_decay", "decay_factor", "decay_every",
                         "total_epochs"},
                     "optim");
      read(o, "base_lr_backbone", c.optim.base_lr_backbone);
      read(o, "base_lr_other", c.optim.base_lr_other);
      read(o, "weight_decay", c.optim.weight_decay);
      read(o, "decay_factor", c.optim.decay_factor);
      read(o, "decay_every", c.optim.decay_every);
      read(o, "total_epochs", c.optim.total_epochs);
    }
    if (j.contains("sampler")) {
      const auto& s = j.at("sampler");
      reject_unknown(s, {"P", "K"}, "sampler");
      read(s, "P", c.sampler.p);
      read(s, "K", c.sampler.k);
    }
    if (j.contains("augment")) {
      const auto& a = j.at("augment");
      reject_unknown(a, {"flip_probability", "erase_probability", "erase_area_min", "erase_area_max",
                         "erase_aspect_min", "erase_aspect_max"},
                     "augment");
      read(a, "flip_probability", c.augment.flip_probability);
      read(a, "erase_probability", c.augment.erase_probability);
      read(a, "erase_area_min", c.augment.erase_area_min);
      read(a, "erase_area_max", c.augment.erase_area_max);
      read(a, "erase_aspect_min", c.augment.erase_aspect_min);
      read(a, "erase_aspect_max", c.augment.erase_aspect_max);
    }
    if (j.contains("grouping")) {
      const auto& g = j.at("grouping");
      reject_unknown(g, {"upper", "bottom"}, "grouping");
      read(g, "upper", c.grouping.upper);
      read(g, "bottom", c.grouping.bottom);
    }
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      reject_unknown(p, {"data", "out"}, "paths");
      read(p, "data", c.data_dir);
      read(p, "out", c.out_dir);
    }
    read(j, "seed", c.seed);
    read(j, "checkpoint_every", c.checkpoint_every);
  } catch (const nlohmann::json::exception& e) {
    throw Error("config", e.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("config", "malformed config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  optim.validate();
  sampler.validate();
  augment.validate();
  grouping.validate();
  if (checkpoint_every < 0) throw Error("config", "checkpoint_every must be non-negative");
}

TrainOptions RunConfig::train_options() const {
  TrainOptions t;
  t.pk = sampler;
  t.augment = augment;
  t.grouping = grouping;
  t.weights = loss;
  t.optim = optim;
  t.seed = seed;
  t.checkpoint_every = checkpoint_every;
  if (!out_dir.empty()) t.out_dir = out_dir;
  return t;
}

}  // namespace mmga
