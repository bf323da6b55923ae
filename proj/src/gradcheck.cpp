#include "mmga/gradcheck.hpp"

#include "mmga/attention.hpp"
#include "mmga/losses.hpp"
#include "mmga/network.hpp"
#include "mmga/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace mmga {

bool GradcheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const GradcheckEntry& e) { return e.passed; });
}

std::string GradcheckReport::table() const {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-40s %8s %14s  %s\n", "operator", "probes", "max rel err", "status");
  out += line;
  for (const auto& e : entries) {
    std::snprintf(line, sizeof line, "%-40s %8ld %14.3e  %s\n", e.name.c_str(), static_cast<long>(e.probes),
                  e.max_rel_error, e.passed ? "ok" : "FAIL");
    out += line;
  }
  return out;
}

GradcheckEntry check_gradient(const std::string& name, std::vector<Tensord> inputs,
                              const std::function<Tensord(const std::vector<Tensord>&)>& fn, double step,
                              Index max_probes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (auto& t : inputs) {
    t.set_requires_grad();
    t.zero_grad();
  }

  Tensord projection;
  auto projected = [&](const Tensord& out) {
    if (!projection.defined()) {
      projection = Tensord(out.shape());
      for (Index i = 0; i < projection.size(); ++i) projection.values()[i] = unit(rng);
    }
    return sum(mul(out, projection));
  };
  projected(fn(inputs)).backward();

  GradcheckEntry entry;
  entry.name = name;
  for (auto& t : inputs) {
    const Eigen::ArrayXd analytic = t.has_grad() ? Eigen::ArrayXd(t.grad()) : Eigen::ArrayXd::Zero(t.size());
    std::vector<Index> probes(static_cast<std::size_t>(t.size()));
    std::iota(probes.begin(), probes.end(), Index{0});
    if (static_cast<Index>(probes.size()) > max_probes) {
      std::shuffle(probes.begin(), probes.end(), rng);
      probes.resize(static_cast<std::size_t>(max_probes));
    }
    for (Index i : probes) {
      NoGradGuard no_grad;
      const double saved = t.values()[i];
      t.values()[i] = saved + step;
      const double plus = projected(fn(inputs)).item();
      t.values()[i] = saved - step;
      const double minus = projected(fn(inputs)).item();
      t.values()[i] = saved;
      const double numeric = (plus - minus) / (2 * step);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      entry.max_rel_error = std::max(entry.max_rel_error, err);
      ++entry.probes;
    }
  }
  return entry;
}

namespace {

Tensord random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                      double avoid_zero = 0.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensord t(shape);
  for (Index i = 0; i < t.size(); ++i) {
    double v = u(rng);
    while (std::abs(v) < avoid_zero) v = u(rng);
    t.values()[i] = v;
  }
  return t;
}

using Fn = std::function<Tensord(const std::vector<Tensord>&)>;

/// Smallest model that still exercises every layer: 64×32 input, 4×2 grid.
ModelConfig gradcheck_model_config() {
  ModelConfig c = ModelConfig::toy();
  c.preset = "toy";
  c.input_height = 64;
  c.input_width = 32;
  c.stem_width = 4;
  c.stage_widths = {4, 8, 16, 16};
  c.head_whole = 4;
  c.head_upper = 3;
  c.head_bottom = 3;
  c.attention_s = 2;
  c.attention_r = 2;
  c.attention_height = 4;
  c.attention_width = 2;
  c.num_identities = 2;
  return c;
}

}  // namespace

GradcheckReport run_gradcheck(double tolerance, double step, std::uint64_t seed) {
  GradcheckReport report;
  report.tolerance = tolerance;
  std::mt19937_64 rng(seed);
  auto run = [&](const std::string& name, std::vector<Tensord> inputs, const Fn& fn, Index probes = 48,
                 double probe_step = 0) {
    GradcheckEntry e = check_gradient(name, std::move(inputs), fn, probe_step > 0 ? probe_step : step, probes, rng());
    e.passed = e.max_rel_error <= tolerance;
    report.entries.push_back(e);
  };
  auto R = [&](const Shape& s, double avoid_zero = 0.0) { return random_tensor(s, rng, -1.0, 1.0, avoid_zero); };

  // Operators.
  run("conv2d 3x3 stride 2 pad 1 + bias", {R({2, 3, 7, 6}), R({4, 3, 3, 3}), R({1, 4, 1, 1})},
      [](const auto& v) { return conv2d(v[0], v[1], v[2], 2, 1); });
  run("conv2d 1x1", {R({2, 5, 3, 4}), R({3, 5, 1, 1})},
      [](const auto& v) { return conv2d(v[0], v[1], Tensord{}, 1, 0); });
  run("conv2d 7x7 stride 2 pad 3", {R({1, 2, 9, 8}), R({2, 2, 7, 7})},
      [](const auto& v) { return conv2d(v[0], v[1], Tensord{}, 2, 3); });
  run("linear + bias", {R({3, 5, 1, 1}), R({4, 5, 1, 1}), R({1, 4, 1, 1})},
      [](const auto& v) { return linear(v[0], v[1], v[2]); });
  run("global_avg_pool", {R({2, 3, 4, 5})}, [](const auto& v) { return global_avg_pool(v[0]); });
  run("avg_pool_2x2", {R({2, 3, 4, 6})}, [](const auto& v) { return avg_pool_2x2(v[0]); });
  run("max_pool2d 3/2/1", {R({2, 2, 7, 6})}, [](const auto& v) { return max_pool2d(v[0], 3, 2, 1); });
  run("sigmoid", {R({2, 3, 2, 2})}, [](const auto& v) { return sigmoid(v[0]); });
  run("relu", {R({2, 3, 2, 2}, 0.05)}, [](const auto& v) { return relu(v[0]); });
  {
    auto stats = std::make_shared<BatchNormStats<double>>(3);
    run("batch_norm train", {R({4, 3, 2, 3}), R({1, 3, 1, 1}), R({1, 3, 1, 1})},
        [stats](const auto& v) { return batch_norm(v[0], v[1], v[2], *stats, Mode::Train); });
    auto frozen = std::make_shared<BatchNormStats<double>>(3);
    frozen->mean << 0.1, -0.2, 0.3;
    frozen->var << 0.5, 1.5, 2.0;
    run("batch_norm eval", {R({2, 3, 2, 2}), R({1, 3, 1, 1}), R({1, 3, 1, 1})},
        [frozen](const auto& v) { return batch_norm(v[0], v[1], v[2], *frozen, Mode::Eval); });
  }
  run("mul same shape", {R({2, 3, 2, 2}), R({2, 3, 2, 2})}, [](const auto& v) { return mul(v[0], v[1]); });
  run("mul channel broadcast", {R({2, 3, 2, 2}), R({2, 1, 2, 2})}, [](const auto& v) { return mul(v[0], v[1]); });
  run("mul spatial broadcast", {R({2, 1, 1, 1}) , R({2, 3, 2, 2})}, [](const auto& v) { return mul(v[1], v[0]); });
  run("mul spatial x channel", {R({2, 1, 3, 2}), R({2, 4, 1, 1})}, [](const auto& v) { return mul(v[0], v[1]); });
  run("add", {R({2, 3, 2, 2}), R({2, 3, 2, 2})}, [](const auto& v) { return add(v[0], v[1]); });
  run("add_scalar", {R({2, 3, 1, 1})}, [](const auto& v) { return add_scalar(v[0], 1.0); });
  run("scale", {R({2, 3, 1, 1})}, [](const auto& v) { return scale(v[0], -2.5); });
  run("sum", {R({2, 3, 2, 1})}, [](const auto& v) { return sum(v[0]); });
  run("concat_channels", {R({3, 2, 1, 1}), R({3, 4, 1, 1})},
      [](const auto& v) { return concat_channels(std::vector{v[0], v[1]}); });
  run("l2_normalize", {R({3, 5, 1, 1})}, [](const auto& v) { return l2_normalize(v[0]); });
  run("flip_horizontal", {R({2, 2, 3, 4})}, [](const auto& v) { return flip_horizontal(v[0]); });
  run("reshape", {R({2, 6, 1, 1})}, [](const auto& v) { return v[0].reshape({2, 3, 2, 1}); });

  // Attention.
  {
    const AttentionConfig cfg{8, 6, 2, 2, true};
    std::mt19937_64 init_rng(rng());
    auto p = AttentionParams<double>::init(cfg, init_rng);
    // Non-zero final layers so that S and C vary.
    p.conv3_w = R(p.conv3_w.shape());
    p.fc2_w = R(p.fc2_w.shape());
    std::vector<Tensord> inputs{R({2, 8, 4, 6})};
    for (auto& [n, t] : p.named("a")) inputs.push_back(t);
    auto rebuild = [p](const std::vector<Tensord>& v) {
      AttentionParams<double> q = p;
      q.conv1_w = v[1], q.conv1_b = v[2], q.conv2_w = v[3], q.conv2_b = v[4], q.conv3_w = v[5], q.conv3_b = v[6];
      q.fc1_w = v[7], q.fc1_b = v[8], q.fc2_w = v[9], q.fc2_b = v[10];
      return q;
    };
    run("spatial_attention", inputs, [=](const auto& v) { return spatial_attention(v[0], rebuild(v), cfg); });
    run("channel_attention", inputs, [=](const auto& v) { return channel_attention(v[0], rebuild(v), cfg); });
    run("attend (combined map)", inputs, [=](const auto& v) { return attend(v[0], rebuild(v), cfg).combined; });
    run("attend (normalized map)", inputs, [=](const auto& v) { return attend(v[0], rebuild(v), cfg).spatial_norm; });
  }
  run("combine", {R({2, 1, 3, 2}), R({2, 4, 1, 1})}, [](const auto& v) { return combine(v[0], v[1]); });
  run("normalize_spatial", {R({2, 1, 3, 4})}, [](const auto& v) { return normalize_spatial(v[0]); });

  // Losses.
  run("attention_rmse", {R({2, 1, 4, 2}), R({2, 1, 4, 2})},
      [](const auto& v) { return attention_rmse(v[0], v[1]); });
  run("attention_rmse per-pixel mean", {R({2, 1, 4, 2}), R({2, 1, 4, 2})},
      [](const auto& v) { return attention_rmse(v[0], v[1], true); });
  run("attention_total", {R({1, 1, 1, 1}), R({1, 1, 1, 1}), R({1, 1, 1, 1}), R({1, 1, 1, 1})},
      [](const auto& v) { return attention_total(v[0], v[1], v[2], v[3], 0.5); });
  {
    const std::vector<int> labels{2, 0, 1, 2};
    run("softmax_loss", {R({4, 3, 1, 1})}, [labels](const auto& v) { return softmax_loss(v[0], labels); });
  }
  {
    const std::vector<int> ids{0, 0, 0, 1, 1, 1, 2, 2, 2};
    run("batch_hard_triplet", {R({9, 4, 1, 1})},
        [ids](const auto& v) { return batch_hard_triplet(v[0], ids, 0.3); });
    run("batch_hard_triplet on l2_normalize", {R({9, 4, 1, 1})},
        [ids](const auto& v) { return batch_hard_triplet(l2_normalize(v[0]), ids, 0.3); });
  }
  {
    LossWeights w;
    run("total_loss", {R({1, 1, 1, 1}), R({1, 1, 1, 1}), R({1, 1, 1, 1}), R({1, 1, 1, 1})},
        [w](const auto& v) { return total_loss(v[0], v[1], v[2], v[3], w); });
  }

  // Whole model through the combined objective.
  for (Variant variant : {Variant::Baseline, Variant::MMGA}) {
    ModelConfig cfg = gradcheck_model_config();
    cfg.variant = variant;
    auto model = std::make_shared<Model<double>>(Model<double>::build(cfg, rng()));
    std::uniform_real_distribution<double> jitter(-0.3, 0.3);
    for (auto& p : model->parameters())
      for (Index i = 0; i < p.tensor.size(); ++i) p.tensor.values()[i] += jitter(rng);
    const Tensord images = R({4, 3, cfg.input_height, cfg.input_width});
    const std::vector<int> labels{0, 0, 1, 1};
    std::vector<Tensord> targets;
    if (has_mask_guidance(variant))
      for (int k = 0; k < 4; ++k) targets.push_back(random_tensor({4, 1, 4, 2}, rng, 0.0, 1.0));
    std::vector<Tensord> inputs;
    for (auto& p : model->parameters()) inputs.push_back(p.tensor);
    const LossWeights weights;
    run("model " + to_string(variant) + " objective (step 1e-6)", inputs,
        [=](const auto&) {
          const auto fwd = model->forward(images, Mode::Train);
          return compute_objective(fwd, labels, targets, variant, weights).total;
        },
        3, 1e-6);
  }
  return report;
}

}  // namespace mmga
