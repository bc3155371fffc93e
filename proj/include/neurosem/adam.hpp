#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "neurosem/tensor.hpp"

namespace neurosem {

template <typename Scalar>
struct AdamState {
  std::vector<Mat<Scalar>> first_moment;
  std::vector<Mat<Scalar>> second_moment;
  long step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 1e-3;
};

/// One bias-corrected Adam update, in place. Moments are created lazily on
/// the first call to match the parameter shapes.
template <typename Scalar>
void adam_step(std::span<Mat<Scalar>> params, std::span<const Mat<Scalar>> grads, AdamState<Scalar>& state) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.push_back(Mat<Scalar>::Zero(p.rows(), p.cols()));
      state.second_moment.push_back(Mat<Scalar>::Zero(p.rows(), p.cols()));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].rows() != grads[i].rows() || params[i].cols() != grads[i].cols() ||
        state.first_moment[i].rows() != params[i].rows() || state.first_moment[i].cols() != params[i].cols()) {
      throw DimensionError("adam_step: shape mismatch for parameter " + std::to_string(i));
    }
  }

  ++state.step_count;
  const Scalar b1 = Scalar(state.beta1), b2 = Scalar(state.beta2);
  const Scalar c1 = Scalar(1.0 - std::pow(state.beta1, static_cast<double>(state.step_count)));
  const Scalar c2 = Scalar(1.0 - std::pow(state.beta2, static_cast<double>(state.step_count)));
  const Scalar lr = Scalar(state.learning_rate), eps = Scalar(state.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = b1 * m + (Scalar(1) - b1) * grads[i];
    v = b2 * v + (Scalar(1) - b2) * grads[i].cwiseAbs2();
    if (lr == Scalar(0)) continue;
    params[i].array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

}  // namespace neurosem
