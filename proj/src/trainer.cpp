#include "mmga/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <random>

namespace mmga {

void OptimConfig::validate() const {
  if (!(base_lr_backbone > 0 && base_lr_other > 0)) throw Error("config", "learning rates must be positive");
  if (weight_decay < 0) throw Error("config", "weight decay must be non-negative");
  if (!(decay_factor > 0 && decay_factor <= 1)) throw Error("config", "decay factor must lie in (0,1]");
  if (decay_every < 1) throw Error("config", "decay_every must be at least 1");
  if (total_epochs < 0) throw Error("config", "total_epochs must be non-negative");
}

double lr_at(Index epoch, const OptimConfig& cfg, ParamTrack track) {
  const double base = track == ParamTrack::Backbone ? cfg.base_lr_backbone : cfg.base_lr_other;
  return base * std::pow(cfg.decay_factor, double(epoch / cfg.decay_every));
}

template <typename Scalar>
void sgd_step(std::vector<Tensor<Scalar>>& params, double rate, double weight_decay) {
  for (auto& p : params)
    if (!p.has_grad()) throw Error("grad", "sgd_step: a learnable tensor has no gradient");
  const auto r = Scalar(rate), wd = Scalar(weight_decay);
  for (auto& p : params) {
    p.values() -= r * (p.grad() + wd * p.values());
    p.zero_grad();
  }
}

template <typename Scalar>
std::vector<Tensor<Scalar>> stack_targets(Variant variant, const std::vector<MaskSet>& masks, Index height,
                                          Index width) {
  std::vector<Tensor<Scalar>> out;
  const Index n = static_cast<Index>(masks.size());
  const Index plane = height * width;
  for (Index i = 0; i < n; ++i) {
    const auto per_image = variant_mask_targets(variant, masks[static_cast<std::size_t>(i)], height, width);
    if (out.empty())
      for (std::size_t k = 0; k < per_image.size(); ++k) out.emplace_back(Shape{n, 1, height, width});
    for (std::size_t k = 0; k < per_image.size(); ++k)
      out[k].values().segment(i * plane, plane) = Eigen::Map<const Eigen::ArrayXf>(per_image[k].data(), plane).template cast<Scalar>();
  }
  return out;
}

template <typename Scalar>
Objective<Scalar> compute_objective(const ForwardResult<Scalar>& fwd, std::span<const int> labels,
                                    const std::vector<Tensor<Scalar>>& targets, Variant variant,
                                    const LossWeights& weights) {
  Objective<Scalar> obj;
  LossReport& rep = obj.report;
  const Tensor<Scalar> softmax_w = softmax_loss(fwd.logits_w, labels);
  Tensor<Scalar> softmax_l;
  if (fwd.logits_l.defined()) softmax_l = softmax_loss(fwd.logits_l, labels);
  const Tensor<Scalar> triplet = batch_hard_triplet(fwd.embeddings.f_all, labels, weights.margin);
  rep.softmax_w = softmax_w.item();
  rep.softmax_l = softmax_l.defined() ? softmax_l.item() : 0.0;
  rep.triplet = triplet.item();

  Tensor<Scalar> attention;
  if (has_mask_guidance(variant)) {
    if (targets.size() != fwd.attention.size())
      throw Error("shape", "attention targets do not match the attention outputs");
    std::vector<Tensor<Scalar>> terms;
    for (std::size_t k = 0; k < targets.size(); ++k)
      terms.push_back(attention_rmse(fwd.attention[k].spatial_norm, targets[k], weights.per_pixel_mean));
    rep.l1w = terms[0].item();
    rep.l2w = terms[1].item();
    if (terms.size() == 4) {
      rep.l2u = terms[2].item();
      rep.l2b = terms[3].item();
      attention = attention_total(terms[0], terms[1], terms[2], terms[3], weights.lambda0);
    } else {
      attention = add(terms[0], terms[1]);
    }
    rep.attention = attention.item();
    obj.module2_attention = rep.l2w + weights.lambda0 * (rep.l2u + rep.l2b);
  }
  obj.total = total_loss(softmax_w, softmax_l, triplet, attention, weights);
  rep.total = obj.total.item();
  return obj;
}

namespace {

std::string epoch_dir(Index epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%04ld", static_cast<long>(epoch));
  return name;
}

void accumulate(LossReport& sum, const LossReport& r) {
  sum.l1w += r.l1w;
  sum.l2w += r.l2w;
  sum.l2u += r.l2u;
  sum.l2b += r.l2b;
  sum.attention += r.attention;
  sum.softmax_w += r.softmax_w;
  sum.softmax_l += r.softmax_l;
  sum.triplet += r.triplet;
  sum.total += r.total;
}

LossReport divided(LossReport r, double n) {
  for (double* v : {&r.l1w, &r.l2w, &r.l2u, &r.l2b, &r.attention, &r.softmax_w, &r.softmax_l, &r.triplet, &r.total})
    *v /= n;
  return r;
}

}  // namespace

TrainSummary train(Model<float>& model, const Dataset& data, const TrainOptions& options, std::ostream* log) {
  options.optim.validate();
  options.weights.validate();
  options.pk.validate();
  options.grouping.validate();
  AugmentConfig augment = options.augment;
  augment.fill = data.channel_mean;
  augment.validate();

  const ModelConfig& cfg = model.config();
  if (cfg.num_identities != data.manifest.num_train_ids)
    throw Error("config", "model has " + std::to_string(cfg.num_identities) + " classes but the corpus has " +
                              std::to_string(data.manifest.num_train_ids) + " training identities");

  const nlohmann::json meta = {{"variant", to_string(cfg.variant)}, {"seed", options.seed}};
  auto checkpoint = [&](Index epoch) {
    if (options.out_dir.empty()) return std::filesystem::path{};
    nlohmann::json extra = meta;
    extra["epoch"] = epoch;
    const auto dir = options.out_dir / epoch_dir(epoch);
    save_checkpoint(dir, model, extra);
    return dir;
  };

  TrainSummary summary;
  summary.final_checkpoint = checkpoint(0);

  std::mt19937_64 rng(options.seed);
  auto groups = model.param_groups();
  const Index total_epochs = options.optim.total_epochs;
  for (Index epoch = 0; epoch < total_epochs; ++epoch) {
    const double lr_backbone = lr_at(epoch, options.optim, ParamTrack::Backbone);
    const double lr_other = lr_at(epoch, options.optim, ParamTrack::Other);
    EpochSummary es;
    es.epoch = epoch;
    const auto batches = pk_epoch(data.manifest.samples, options.pk, rng);
    for (const auto& indices : batches) {
      const Batch batch = make_batch(data, indices, cfg.input_height, cfg.input_width, cfg.attention_height,
                                     cfg.attention_width, options.grouping, rng, true, augment);
      Objective<float> obj;
      try {
        const ForwardResult<float> fwd = model.forward(batch.images, Mode::Train);
        const auto targets = stack_targets<float>(cfg.variant, batch.masks, cfg.attention_height, cfg.attention_width);
        obj = compute_objective(fwd, batch.labels, targets, cfg.variant, options.weights);
        obj.total.backward();
      } catch (const Error& e) {
        if (e.kind() != "numeric") throw;
        throw Error("divergence", "non-finite values at epoch " + std::to_string(epoch) + ", step " +
                                      std::to_string(summary.steps) + ": " + e.what());
      }
      if (!std::isfinite(obj.report.total))
        throw Error("divergence", "non-finite total loss at step " + std::to_string(summary.steps));
      for (auto& g : groups)
        sgd_step(g.tensors, g.track == ParamTrack::Backbone ? lr_backbone : lr_other, options.optim.weight_decay);

      if (log) {
        nlohmann::ordered_json line;
        line["epoch"] = epoch;
        line["step"] = summary.steps;
        const auto components = nlohmann::ordered_json::parse(obj.report.to_json_line());
        for (const auto& [k, v] : components.items()) line[k] = v;
        line["lr_backbone"] = lr_backbone;
        line["lr_other"] = lr_other;
        *log << line.dump() << '\n';
      }
      accumulate(es.mean, obj.report);
      es.module2_attention += obj.module2_attention;
      ++summary.steps;
    }
    const double n = double(batches.size());
    es.mean = divided(es.mean, n);
    es.module2_attention /= n;
    summary.epochs.push_back(es);
    const Index done = epoch + 1;
    if (done == total_epochs || (options.checkpoint_every > 0 && done % options.checkpoint_every == 0))
      summary.final_checkpoint = checkpoint(done);
  }
  if (log) log->flush();
  return summary;
}

template void sgd_step(std::vector<Tensor<float>>&, double, double);
template void sgd_step(std::vector<Tensor<double>>&, double, double);
template std::vector<Tensor<float>> stack_targets<float>(Variant, const std::vector<MaskSet>&, Index, Index);
template std::vector<Tensor<double>> stack_targets<double>(Variant, const std::vector<MaskSet>&, Index, Index);
template Objective<float> compute_objective(const ForwardResult<float>&, std::span<const int>,
                                            const std::vector<Tensor<float>>&, Variant, const LossWeights&);
template Objective<double> compute_objective(const ForwardResult<double>&, std::span<const int>,
                                             const std::vector<Tensor<double>>&, Variant, const LossWeights&);

}  // namespace mmga
