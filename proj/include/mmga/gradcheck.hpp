#pragma once

#include "mmga/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace mmga {

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0;
  Index probes = 0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double tolerance = 1e-3;
  bool passed() const;
  /// Fixed-width table, one operator per line.
  std::string table() const;
};

/// Compares reverse-mode gradients of `fn` with central differences for
/// up to `max_probes` entries of each input. Relative error is
/// |a − n| / max(|a|, |n|, 1e-6).
GradcheckEntry check_gradient(const std::string& name, std::vector<Tensord> inputs,
                              const std::function<Tensord(const std::vector<Tensord>&)>& fn, double step = 1e-4,
                              Index max_probes = 48, std::uint64_t seed = 0);

/// Every differentiable operator, every loss, and a small end-to-end model,
/// in double precision.
GradcheckReport run_gradcheck(double tolerance = 1e-3, double step = 1e-4, std::uint64_t seed = 0);

}  // namespace mmga
