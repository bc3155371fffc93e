#pragma once

// Central-difference oracle for reverse-mode gradients. Lives in test code so
// it stays independent of the backward closures it verifies.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "neurosem/autodiff.hpp"
#include "neurosem/rng.hpp"

namespace neurosem::testing {

using LossBuilder = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t worst_input = 0;
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-7});
  return std::abs(analytic - numeric) / denom;
}

inline double evaluate(const LossBuilder& build, const std::vector<Mat<double>>& inputs) {
  Tape<double> tape(false);
  std::vector<Var<double>> vars;
  for (const auto& m : inputs) vars.push_back(tape.constant(m));
  return build(tape, vars).value()(0, 0);
}

/// Compares analytic and central-difference gradients on `coords` randomly
/// chosen coordinates across all inputs.
inline GradCheckResult gradcheck(const LossBuilder& build, std::vector<Mat<double>> inputs, std::size_t coords,
                                 std::uint64_t seed, double step = 1e-3) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& m : inputs) vars.push_back(tape.leaf(m));
  auto loss = build(tape, vars);
  auto grads = tape.backward(loss);
  std::vector<Mat<double>> analytic;
  for (const auto& v : vars) analytic.push_back(grads[v]);

  std::size_t total = 0;
  for (const auto& m : inputs) total += static_cast<std::size_t>(m.size());

  RngStream pick = Rng(seed).stream("gradcheck");
  GradCheckResult result;
  for (std::size_t n = 0; n < coords; ++n) {
    std::size_t flat = static_cast<std::size_t>(pick.below(total));
    std::size_t which = 0;
    while (flat >= static_cast<std::size_t>(inputs[which].size())) {
      flat -= static_cast<std::size_t>(inputs[which].size());
      ++which;
    }
    double& x = inputs[which].data()[flat];
    const double saved = x;
    x = saved + step;
    const double up = evaluate(build, inputs);
    x = saved - step;
    const double down = evaluate(build, inputs);
    x = saved;
    const double numeric = (up - down) / (2 * step);
    const double err = relative_error(analytic[which].data()[flat], numeric);
    if (err >= result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_analytic = analytic[which].data()[flat];
      result.worst_numeric = numeric;
      result.worst_input = which;
    }
    ++result.coordinates;
  }
  return result;
}

inline Mat<double> random_matrix(Eigen::Index rows, Eigen::Index cols, RngStream& s, double lo = -1.0,
                                 double hi = 1.0) {
  Mat<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = lo + (hi - lo) * s.uniform();
  return m;
}

}  // namespace neurosem::testing
