#include "cormult/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "cormult/errors.hpp"
#include "cormult/tape.hpp"

namespace cormult {

namespace {

void note(GradCheckReport& r, std::size_t input, std::size_t index, double analytic,
          double numeric, double tol) {
  const double err = grad_rel_err(analytic, numeric);
  ++r.coordinates;
  if (err > r.max_rel_err || r.coordinates == 1) {
    r.max_rel_err = std::max(r.max_rel_err, err);
    r.worst_input = input;
    r.worst_index = index;
    r.worst_analytic = analytic;
    r.worst_numeric = numeric;
  }
  if (!(err <= tol)) r.pass = false;
}

}  // namespace

double grad_rel_err(double analytic, double numeric) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
  return std::fabs(analytic - numeric) / denom;
}

GradCheckReport compare_with_finite_differences(
    const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
    const Tensor& analytic, double step, double tol) {
  if (analytic.shape() != x.shape()) throw ShapeMismatch("gradient shape differs from x");
  GradCheckReport report;
  Tensor probe = x.detach();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    probe.mutable_data()[i] = orig + step;
    const double fp = f(probe).item();
    probe.mutable_data()[i] = orig - step;
    const double fm = f(probe).item();
    probe.mutable_data()[i] = orig;
    note(report, 0, i, analytic[i], (fp - fm) / (2.0 * step), tol);
  }
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f,
                           const Tensor& x, double step, double tol) {
  Tensor analytic;
  {
    Tape tape;
    Tensor leaf = x.detach();
    tape.watch(leaf);
    Tensor y = f(leaf);
    analytic = tape.backward(y).of(leaf);
  }
  return compare_with_finite_differences(f, x, analytic, step, tol);
}

GradCheckReport grad_check(const std::function<Tensor()>& f,
                           std::span<Tensor* const> inputs, double step, double tol,
                           std::size_t max_coords) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    for (Tensor* in : inputs) tape.watch(*in);
    Tensor y = f();
    const Gradients grads = tape.backward(y);
    for (Tensor* in : inputs) analytic.push_back(grads.of(*in));
  }
  for (Tensor* in : inputs) *in = in->detach();

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& t = *inputs[k];
    const std::size_t n = t.size();
    const std::size_t count = (max_coords == 0 || max_coords >= n) ? n : max_coords;
    for (std::size_t c = 0; c < count; ++c) {
      const std::size_t i = count == n ? c : (c * n) / count;
      const double orig = t[i];
      t.mutable_data()[i] = orig + step;
      const double fp = f().item();
      t.mutable_data()[i] = orig - step;
      const double fm = f().item();
      t.mutable_data()[i] = orig;
      note(report, k, i, analytic[k][i], (fp - fm) / (2.0 * step), tol);
    }
  }
  return report;
}

std::string describe(const GradCheckReport& r) {
  std::ostringstream os;
  os << (r.pass ? "pass" : "FAIL") << " max_rel_err=" << r.max_rel_err
     << " coords=" << r.coordinates << " worst=(" << r.worst_input << ','
     << r.worst_index << ") ad=" << r.worst_analytic << " fd=" << r.worst_numeric;
  return os.str();
}

}  // namespace cormult
