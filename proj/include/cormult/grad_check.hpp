#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "cormult/tensor.hpp"

namespace cormult {

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = true;
  std::size_t coordinates = 0;
  // Location of the worst coordinate, for diagnostics.
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// |a - n| / max(|a|, |n|, 1e-8)
double grad_rel_err(double analytic, double numeric);

// Compares a given gradient of scalar f at x with central differences
// (f(x+h) - f(x-h)) / 2h. Used directly for negative controls.
GradCheckReport compare_with_finite_differences(
    const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
    const Tensor& analytic, double step = 1e-5, double tol = 1e-4);

// Reverse-mode gradient of scalar f at x against central differences.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f,
                           const Tensor& x, double step = 1e-5, double tol = 1e-4);

// Checks a closure over several tensors (typically model parameters) that
// are perturbed in place. When max_coords is non-zero only that many evenly
// spaced coordinates of each input are differenced.
GradCheckReport grad_check(const std::function<Tensor()>& f,
                           std::span<Tensor* const> inputs, double step = 1e-5,
                           double tol = 1e-4, std::size_t max_coords = 0);

std::string describe(const GradCheckReport& report);

}  // namespace cormult
