#pragma once

// Shared helpers for the test suites: relative-error comparison and the
// central finite-difference gradient oracle. The oracle only re-runs forward
// graphs; it never inspects the autodiff internals it checks.

#include <algorithm>
#include <cmath>
#include <vector>

#include "dtfit/rng.hpp"
#include "dtfit/tensor.hpp"

namespace dtfit::test {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  long checked = 0;
};

// Central differences (f(x+h) - f(x-h)) / 2h against the recorded backward,
// on every coordinate of every listed leaf. build_loss must rebuild the graph
// from the leaves' current values.
template <class F>
GradCheckResult grad_check_full(F&& build_loss,
                                std::vector<Tensor<double>*> leaves,
                                double h = 1e-5) {
  for (auto* leaf : leaves) leaf->drop_grad();
  auto loss = build_loss();
  backward(loss);
  GradCheckResult result;
  for (auto* leaf : leaves) {
    const auto analytic = leaf->grad();  // copy; we mutate values below
    auto& vals = leaf->mutable_values();
    for (size_t i = 0; i < vals.size(); ++i) {
      double orig = vals[i];
      vals[i] = orig + h;
      double fp = build_loss().scalar();
      vals[i] = orig - h;
      double fm = build_loss().scalar();
      vals[i] = orig;
      double numeric = (fp - fm) / (2.0 * h);
      result.max_rel_err =
          std::max(result.max_rel_err, rel_err(analytic[i], numeric));
      ++result.checked;
    }
  }
  return result;
}

// Same oracle on a random coordinate subset, for large parameter sets.
template <class F>
GradCheckResult grad_check_sampled(F&& build_loss,
                                   std::vector<Tensor<double>*> leaves,
                                   int coords_per_leaf, Rng& rng,
                                   double h = 1e-5) {
  for (auto* leaf : leaves) leaf->drop_grad();
  auto loss = build_loss();
  backward(loss);
  GradCheckResult result;
  for (auto* leaf : leaves) {
    const auto analytic = leaf->grad();
    auto& vals = leaf->mutable_values();
    for (int k = 0; k < coords_per_leaf; ++k) {
      size_t i = size_t(rng.next_u64() % vals.size());
      double orig = vals[i];
      vals[i] = orig + h;
      double fp = build_loss().scalar();
      vals[i] = orig - h;
      double fm = build_loss().scalar();
      vals[i] = orig;
      double numeric = (fp - fm) / (2.0 * h);
      result.max_rel_err =
          std::max(result.max_rel_err, rel_err(analytic[i], numeric));
      ++result.checked;
    }
  }
  return result;
}

}  // namespace dtfit::test
