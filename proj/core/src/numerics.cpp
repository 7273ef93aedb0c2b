#include <cmath>

#include "tashkeel/gradcheck.hpp"

namespace tashkeel::numerics {

double gradient_check(const std::function<TP<double>(Tape<double>*)>& loss_fn,
                      const std::vector<TP<double>>& inputs, double fd_step) {
  for (const auto& t : inputs) {
    t->ensure_grad();
    t->zero_grad();
  }
  Tape<double> tape;
  auto loss = loss_fn(&tape);
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const auto& t : inputs) analytic.push_back(t->grad);

  double max_rel = 0;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& t = *inputs[ti];
    for (size_t i = 0; i < t.data.size(); ++i) {
      double saved = t.data[i];
      t.data[i] = saved + fd_step;
      double up = loss_fn(nullptr)->data[0];
      t.data[i] = saved - fd_step;
      double down = loss_fn(nullptr)->data[0];
      t.data[i] = saved;
      double numeric = (up - down) / (2 * fd_step);
      double a = analytic[ti][i];
      // The denominator is floored so near-zero gradients are judged on
      // absolute terms (difference < tol * 1e-4) instead of drowning in
      // finite-difference cancellation noise.
      double denom = std::max({std::abs(a), std::abs(numeric), 1e-4});
      max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace tashkeel::numerics
