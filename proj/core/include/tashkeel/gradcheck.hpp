#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tashkeel/tensor.hpp"

namespace tashkeel::numerics {

/// Compares tape gradients against central finite differences
/// (64-bit only). `loss_fn` rebuilds the computation from the current
/// contents of `inputs` each call; it gets a null tape during the
/// difference sweeps. Returns the maximum relative error over every
/// element of every input.
double gradient_check(const std::function<TP<double>(Tape<double>*)>& loss_fn,
                      const std::vector<TP<double>>& inputs, double fd_step = 1e-5);

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0;
  double tolerance = 0;
  double seconds = 0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool all_pass() const {
    for (const auto& e : entries)
      if (!e.pass) return false;
    return !entries.empty();
  }
  std::string to_string() const;
};

/// The standard verification battery: linear, softmax+cross-entropy,
/// LSTM cell, bidirectional LSTM, attention reduce, and a small
/// end-to-end hierarchical model.
GradCheckReport run_gradcheck_suite(uint64_t seed = 20201105);

}  // namespace tashkeel::numerics
