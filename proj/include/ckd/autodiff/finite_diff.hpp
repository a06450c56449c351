#pragma once

#include <functional>

#include "ckd/autodiff/tensor.hpp"

namespace ckd::ad {

using ScalarFn = std::function<double(const Tensor&)>;

/// Central-difference gradient estimate of f at point:
///   g[i] = (f(x + h e_i) - f(x - h e_i)) / (2h).
/// Throws NumericError if f returns a non-finite value, Error if h <= 0.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& point, double h = 1e-5);

/// Elementwise relative error |a - b| / max(|a|, |b|, floor), maximised over
/// all entries. The floor keeps entries that are zero on both sides from
/// dividing by zero.
double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-6);

}  // namespace ckd::ad
