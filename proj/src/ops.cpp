#include "cormult/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <numeric>

#include "cormult/errors.hpp"
#include "cormult/tape.hpp"

namespace cormult::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::size_t norm_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeMismatch("axis " + std::to_string(axis) + " invalid for rank " +
                        std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

void check_finite([[maybe_unused]] const std::vector<double>& v) {
#ifndef NDEBUG
  for (double x : v) assert(std::isfinite(x) && "non-finite tensor value");
#endif
}

Tensor finish(Shape shape, std::vector<double> data,
              std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  check_finite(data);
  Tensor out(std::move(shape), std::move(data));
  if (!Tape::any_tracked(std::span<const Tensor* const>(inputs.begin(), inputs.size()))) {
    return out;
  }
  return Tape::record(std::move(out), inputs, std::move(fn));
}

// Row-major strides.
std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size());
  std::size_t acc = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

// Strides of `in` laid against `out` (right-aligned), 0 on broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> st(out.size(), 0);
  const auto in_st = strides_of(in);
  const std::size_t off = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i) {
    st[off + i] = in[i] == 1 ? 0 : in_st[i];
  }
  return st;
}

// Calls f(out_index, a_index, b_index) for every element of `out`.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t rank = out.size();
  const std::size_t total = shape_size(out);
  if (rank == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  std::vector<std::size_t> counter(rank, 0);
  std::size_t ia = 0, ib = 0;
  const std::size_t last = rank - 1;
  const std::size_t inner = out[last];
  for (std::size_t i = 0; i < total;) {
    for (std::size_t j = 0; j < inner; ++j, ++i) {
      f(i, ia + j * sa[last], ib + j * sb[last]);
    }
    // Advance the counter over the outer axes.
    for (std::size_t d = last; d-- > 0;) {
      ++counter[d];
      ia += sa[d];
      ib += sb[d];
      if (counter[d] < out[d]) break;
      ia -= sa[d] * counter[d];
      ib -= sb[d] * counter[d];
      counter[d] = 0;
    }
  }
}

enum class BinOp { Add, Sub, Mul, Div };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(shape_size(out_shape));
  const bool same = a.shape() == b.shape();
  auto apply = [op](double x, double y) {
    switch (op) {
      case BinOp::Add: return x + y;
      case BinOp::Sub: return x - y;
      case BinOp::Mul: return x * y;
      case BinOp::Div: return x / y;
    }
    return 0.0;
  };
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply(av[i], bv[i]);
  } else {
    for_each_broadcast(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      out[i] = apply(av[ia], bv[ib]);
    });
  }

  BackwardFn fn = [a, b, op, out_shape, sa, sb, same](std::span<const double> g,
                                                  std::span<GradBuffer* const> gin) {
    const auto& av = a.values();
    const auto& bv = b.values();
    GradBuffer* ga = gin[0];
    GradBuffer* gb = gin[1];
    auto body = [&](std::size_t i, std::size_t ia, std::size_t ib) {
      switch (op) {
        case BinOp::Add:
          if (ga) (*ga)[ia] += g[i];
          if (gb) (*gb)[ib] += g[i];
          break;
        case BinOp::Sub:
          if (ga) (*ga)[ia] += g[i];
          if (gb) (*gb)[ib] -= g[i];
          break;
        case BinOp::Mul:
          if (ga) (*ga)[ia] += g[i] * bv[ib];
          if (gb) (*gb)[ib] += g[i] * av[ia];
          break;
        case BinOp::Div:
          if (ga) (*ga)[ia] += g[i] / bv[ib];
          if (gb) (*gb)[ib] -= g[i] * av[ia] / (bv[ib] * bv[ib]);
          break;
      }
    };
    if (same) {
      for (std::size_t i = 0; i < g.size(); ++i) body(i, i, i);
    } else {
      for_each_broadcast(out_shape, sa, sb, body);
    }
  };
  return finish(out_shape, std::move(out), {&a, &b}, std::move(fn));
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  Tensor y_holder(x.shape(), out);
  BackwardFn fn = [x, y_holder, deriv](std::span<const double> g,
                                       std::span<GradBuffer* const> gin) {
    if (!gin[0]) return;
    const auto& xv = x.values();
    const auto& yv = y_holder.values();
    auto& gx = *gin[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
  };
  return finish(x.shape(), std::move(out), {&x}, std::move(fn));
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape reduced_shape(const Shape& s, std::size_t axis, bool keepdim) {
  Shape out = s;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return out;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeMismatch("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Div); }

Tensor scalar_mul(const Tensor& a, double s) {
  return unary(
      a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor scalar_mul(double s, const Tensor& a) { return scalar_mul(a, s); }

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scalar_mul(x, -1.0); }

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor square(const Tensor& x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sum(const Tensor& x) {
  const auto& xv = x.values();
  double s = 0.0;
  for (double v : xv) s += v;
  BackwardFn fn = [](std::span<const double> g, std::span<GradBuffer* const> gin) {
    if (!gin[0]) return;
    for (auto& v : *gin[0]) v += g[0];
  };
  return finish(Shape{}, {s}, {&x}, std::move(fn));
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const auto sp = split_at(x.shape(), ax);
  const auto& xv = x.values();
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t j = 0; j < sp.n; ++j) {
      const double* row = xv.data() + (o * sp.n + j) * sp.inner;
      double* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += row[i];
    }
  }
  BackwardFn fn = [sp](std::span<const double> g, std::span<GradBuffer* const> gin) {
    if (!gin[0]) return;
    auto& gx = *gin[0];
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t j = 0; j < sp.n; ++j) {
        double* dst = gx.data() + (o * sp.n + j) * sp.inner;
        const double* src = g.data() + o * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
    }
  };
  return finish(reduced_shape(x.shape(), ax, keepdim), std::move(out), {&x},
                std::move(fn));
}

Tensor mean(const Tensor& x) {
  return scalar_mul(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor mean(const Tensor& x, int axis, bool keepdim) {
  const std::size_t n = x.dim(axis);
  return scalar_mul(sum(x, axis, keepdim), 1.0 / static_cast<double>(n));
}

Tensor max(const Tensor& x, int axis, bool keepdim) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const auto sp = split_at(x.shape(), ax);
  const auto& xv = x.values();
  std::vector<double> out(sp.outer * sp.inner);
  std::vector<std::size_t> arg(out.size(), 0);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double best = xv[o * sp.n * sp.inner + i];
      std::size_t bj = 0;
      for (std::size_t j = 1; j < sp.n; ++j) {
        const double v = xv[(o * sp.n + j) * sp.inner + i];
        if (v > best) {
          best = v;
          bj = j;
        }
      }
      out[o * sp.inner + i] = best;
      arg[o * sp.inner + i] = bj;
    }
  }
  BackwardFn fn = [sp, arg](std::span<const double> g, std::span<GradBuffer* const> gin) {
    if (!gin[0]) return;
    auto& gx = *gin[0];
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t k = o * sp.inner + i;
        gx[(o * sp.n + arg[k]) * sp.inner + i] += g[k];
      }
    }
  };
  return finish(reduced_shape(x.shape(), ax, keepdim), std::move(out), {&x},
                std::move(fn));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeMismatch("cannot reshape " + shape_str(x.shape()) + " to " +
                        shape_str(shape));
  }
  BackwardFn fn = [](std::span<const double> g, std::span<GradBuffer* const> gin) {
    if (!gin[0]) return;
    auto& gx = *gin[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  };
  return finish(std::move(shape), x.values(), {&x}, std::move(fn));
}

Tensor transpose(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t rank = x.rank();
  if (axes.size() != rank) throw ShapeMismatch("transpose axes length mismatch");
  std::vector<bool> seen(rank, false);
  for (auto a : axes) {
    if (a >= rank || seen[a]) throw ShapeMismatch("transpose axes not a permutation");
    seen[a] = true;
  }
  Shape out_shape(rank);
  const auto in_st = strides_of(x.shape());
  std::vector<std::size_t> st(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = x.shape()[axes[i]];
    st[i] = in_st[axes[i]];
  }
  // Source offset of every output element.
  std::vector<std::size_t> src(x.size());
  const std::vector<std::size_t> zero(rank, 0);
  for_each_broadcast(out_shape, st, zero,
                     [&](std::size_t i, std::size_t ia, std::size_t) { src[i] = ia; });
  const auto& xv = x.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[src[i]];
  BackwardFn fn = [src](std::span<const double> g, std::span<GradBuffer* const> gin) {
    if (!gin[0]) return;
    auto& gx = *gin[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[src[i]] += g[i];
  };
  return finish(out_shape, std::move(out), {&x}, std::move(fn));
}

Tensor transpose_last(const Tensor& x) {
  if (x.rank() < 2) throw ShapeMismatch("transpose_last needs rank >= 2");
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
  return transpose(x, axes);
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeMismatch("concat of nothing");
  if (parts.size() == 1) return parts[0];
  const std::size_t rank = parts[0].rank();
  const std::size_t ax = norm_axis(axis, rank);
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw ShapeMismatch("concat rank mismatch");
    for (std::size_t d = 0; d < rank; ++d) {
      if (d != ax && p.shape()[d] != parts[0].shape()[d]) {
        throw ShapeMismatch("concat extents differ: " + shape_str(p.shape()) +
                            " vs " + shape_str(parts[0].shape()));
      }
    }
    out_shape[ax] += p.shape()[ax];
  }
  const auto sp = split_at(out_shape, ax);
  std::vector<double> out(shape_size(out_shape));
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[ax] * sp.inner;
    const auto& pv = p.values();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(pv.data() + o * w, w, out.data() + o * sp.n * sp.inner + offset);
    }
    widths.push_back(w);
    offset += w;
  }
  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  BackwardFn fn = [sp, widths](std::span<const double> g, std::span<GradBuffer* const> gin) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const std::size_t w = widths[k];
      if (gin[k]) {
        auto& gp = *gin[k];
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const double* src = g.data() + o * sp.n * sp.inner + offset;
          double* dst = gp.data() + o * w;
          for (std::size_t i = 0; i < w; ++i) dst[i] += src[i];
        }
      }
      offset += w;
    }
  };
  check_finite(out);
  Tensor result(out_shape, std::move(out));
  if (!Tape::any_tracked(inputs)) return result;
  return Tape::record(std::move(result), inputs, std::move(fn));
}

Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor narrow(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = norm_axis(axis, x.rank());
  if (length == 0 || start + length > x.shape()[ax]) {
    throw ShapeMismatch("narrow range out of bounds");
  }
  const auto sp = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  const std::size_t w = length * sp.inner;
  const std::size_t off = start * sp.inner;
  const auto& xv = x.values();
  std::vector<double> out(sp.outer * w);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(xv.data() + o * sp.n * sp.inner + off, w, out.data() + o * w);
  }
  BackwardFn fn = [sp, w, off](std::span<const double> g, std::span<GradBuffer* const> gin) {
    if (!gin[0]) return;
    auto& gx = *gin[0];
    for (std::size_t o = 0; o < sp.outer; ++o) {
      double* dst = gx.data() + o * sp.n * sp.inner + off;
      const double* src = g.data() + o * w;
      for (std::size_t i = 0; i < w; ++i) dst[i] += src[i];
    }
  };
  return finish(out_shape, std::move(out), {&x}, std::move(fn));
}

std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<std::size_t>& lengths) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const std::size_t total = std::accumulate(lengths.begin(), lengths.end(), std::size_t{0});
  if (total != x.shape()[ax]) throw ShapeMismatch("split lengths do not cover the axis");
  std::vector<Tensor> out;
  std::size_t start = 0;
  for (auto len : lengths) {
    out.push_back(narrow(x, axis, start, len));
    start += len;
  }
  return out;
}

Tensor index_select(const Tensor& x, std::span<const std::size_t> rows) {
  if (x.rank() < 1 || rows.empty()) throw ShapeMismatch("index_select needs rows");
  const std::size_t n = x.shape()[0];
  const std::size_t w = x.size() / n;
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  const auto& xv = x.values();
  std::vector<double> out(rows.size() * w);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) throw ShapeMismatch("index_select row out of range");
    std::copy_n(xv.data() + idx[r] * w, w, out.data() + r * w);
  }
  BackwardFn fn = [idx, w](std::span<const double> g, std::span<GradBuffer* const> gin) {
    if (!gin[0]) return;
    auto& gx = *gin[0];
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t i = 0; i < w; ++i) gx[idx[r] * w + i] += g[r * w + i];
    }
  };
  return finish(out_shape, std::move(out), {&x}, std::move(fn));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) throw ShapeMismatch("matmul needs rank >= 2");
  const std::size_t m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
  if (k != k2) {
    throw ShapeMismatch("matmul inner extents " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
  }
  const Shape ab(a.shape().begin(), a.shape().end() - 2);
  const Shape bb(b.shape().begin(), b.shape().end() - 2);
  const Shape batch = broadcast_shape(ab, bb);
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  const std::size_t nbatch = shape_size(batch);

  // Matrix offsets for each batch entry.
  std::vector<std::size_t> aoff(nbatch), boff(nbatch);
  {
    const auto sa = broadcast_strides(ab, batch);
    const auto sb = broadcast_strides(bb, batch);
    for_each_broadcast(batch, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      aoff[i] = ia * m * k;
      boff[i] = ib * k * n;
    });
  }
  std::vector<double> out(nbatch * m * n);
  const double* ap = a.values().data();
  const double* bp = b.values().data();
  const bool flat = bb.empty();
  if (flat) {
    // b is shared by every batch entry: one GEMM over the stacked rows.
    MutMap(out.data(), static_cast<Eigen::Index>(nbatch * m), static_cast<Eigen::Index>(n))
        .noalias() = ConstMap(ap, static_cast<Eigen::Index>(nbatch * m), static_cast<Eigen::Index>(k)) *
                     ConstMap(bp, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  } else {
    for (std::size_t i = 0; i < nbatch; ++i) {
      MutMap(out.data() + i * m * n, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n))
          .noalias() = ConstMap(ap + aoff[i], static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) *
                       ConstMap(bp + boff[i], static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    }
  }
  BackwardFn fn = [a, b, m, k, n, nbatch, aoff, boff, flat](std::span<const double> g,
                                                         std::span<GradBuffer* const> gin) {
    const auto M = static_cast<Eigen::Index>(m);
    const auto K = static_cast<Eigen::Index>(k);
    const auto N = static_cast<Eigen::Index>(n);
    const double* ap = a.values().data();
    const double* bp = b.values().data();
    if (flat && aoff.size() == nbatch) {
      const auto R = static_cast<Eigen::Index>(nbatch * m);
      ConstMap G(g.data(), R, N);
      if (gin[0]) MutMap(gin[0]->data(), R, K).noalias() += G * ConstMap(bp, K, N).transpose();
      if (gin[1]) MutMap(gin[1]->data(), K, N).noalias() += ConstMap(ap, R, K).transpose() * G;
      return;
    }
    for (std::size_t i = 0; i < nbatch; ++i) {
      ConstMap G(g.data() + i * m * n, M, N);
      if (gin[0]) {
        MutMap(gin[0]->data() + aoff[i], M, K).noalias() +=
            G * ConstMap(bp + boff[i], K, N).transpose();
      }
      if (gin[1]) {
        MutMap(gin[1]->data() + boff[i], K, N).noalias() +=
            ConstMap(ap + aoff[i], M, K).transpose() * G;
      }
    }
  };
  return finish(out_shape, std::move(out), {&a, &b}, std::move(fn));
}

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const auto sp = split_at(x.shape(), ax);
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < sp.n; ++j) mx = std::max(mx, xv[base + j * sp.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < sp.n; ++j) {
        const double e = std::exp(xv[base + j * sp.inner] - mx);
        out[base + j * sp.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < sp.n; ++j) out[base + j * sp.inner] /= z;
    }
  }
  Tensor y(x.shape(), out);
  BackwardFn fn = [y, sp](std::span<const double> g, std::span<GradBuffer* const> gin) {
    if (!gin[0]) return;
    auto& gx = *gin[0];
    const auto& yv = y.values();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.n * sp.inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < sp.n; ++j) {
          const std::size_t q = base + j * sp.inner;
          dot += g[q] * yv[q];
        }
        for (std::size_t j = 0; j < sp.n; ++j) {
          const std::size_t q = base + j * sp.inner;
          gx[q] += yv[q] * (g[q] - dot);
        }
      }
    }
  };
  return finish(x.shape(), std::move(out), {&x}, std::move(fn));
}

Tensor log_softmax(const Tensor& x, int axis) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const auto sp = split_at(x.shape(), ax);
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < sp.n; ++j) mx = std::max(mx, xv[base + j * sp.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < sp.n; ++j) z += std::exp(xv[base + j * sp.inner] - mx);
      const double lz = mx + std::log(z);
      for (std::size_t j = 0; j < sp.n; ++j) out[base + j * sp.inner] = xv[base + j * sp.inner] - lz;
    }
  }
  Tensor y(x.shape(), out);
  BackwardFn fn = [y, sp](std::span<const double> g, std::span<GradBuffer* const> gin) {
    if (!gin[0]) return;
    auto& gx = *gin[0];
    const auto& yv = y.values();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.n * sp.inner + i;
        double gs = 0.0;
        for (std::size_t j = 0; j < sp.n; ++j) gs += g[base + j * sp.inner];
        for (std::size_t j = 0; j < sp.n; ++j) {
          const std::size_t q = base + j * sp.inner;
          gx[q] += g[q] - std::exp(yv[q]) * gs;
        }
      }
    }
  };
  return finish(x.shape(), std::move(out), {&x}, std::move(fn));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) throw ShapeMismatch("layer_norm needs rank >= 1");
  const std::size_t d = x.dim(-1);
  if (gain.size() != d || bias.size() != d) {
    throw ShapeMismatch("layer_norm gain/bias must have extent " + std::to_string(d));
  }
  const std::size_t rows = x.size() / d;
  const auto& xv = x.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  std::vector<double> xhat(xv.size()), out(xv.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  BackwardFn fn = [gain, xhat = std::move(xhat), inv_std = std::move(inv_std), d, rows](
                      std::span<const double> g, std::span<GradBuffer* const> gin) {
    const auto& gv = gain.values();
    if (gin[1]) {
      auto& gg = *gin[1];
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
    }
    if (gin[2]) {
      auto& gb = *gin[2];
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
    }
    if (gin[0]) {
      auto& gx = *gin[0];
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = g[r * d + j] * gv[j];
          m1 += dh;
          m2 += dh * xhat[r * d + j];
        }
        m1 *= inv_d;
        m2 *= inv_d;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = g[r * d + j] * gv[j];
          gx[r * d + j] += inv_std[r] * (dh - m1 - xhat[r * d + j] * m2);
        }
      }
    }
  };
  return finish(x.shape(), std::move(out), {&x, &gain, &bias}, std::move(fn));
}

Tensor conv1d(const Tensor& x, const Tensor& kernel) {
  if (x.rank() != 3 || kernel.rank() != 3) {
    throw ShapeMismatch("conv1d expects x[b,t,c_in] and kernel[k,c_in,c_out]");
  }
  const std::size_t b = x.dim(0), t = x.dim(1), ci = x.dim(2);
  const std::size_t k = kernel.dim(0), co = kernel.dim(2);
  if (kernel.dim(1) != ci) {
    throw ShapeMismatch("conv1d channels " + shape_str(x.shape()) + " vs kernel " +
                        shape_str(kernel.shape()));
  }
  if (k % 2 == 0) throw ShapeMismatch("conv1d kernel size must be odd");
  const std::size_t half = k / 2;
  const std::size_t width = k * ci;
  // im2col: row (b, tau) holds the k neighbouring input frames.
  std::vector<double> cols(b * t * width, 0.0);
  const auto& xv = x.values();
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t tau = 0; tau < t; ++tau) {
      double* row = cols.data() + (s * t + tau) * width;
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(tau + j) -
                                   static_cast<std::ptrdiff_t>(half);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
        std::copy_n(xv.data() + (s * t + static_cast<std::size_t>(src)) * ci, ci,
                    row + j * ci);
      }
    }
  }
  const auto R = static_cast<Eigen::Index>(b * t);
  const auto W = static_cast<Eigen::Index>(width);
  const auto CO = static_cast<Eigen::Index>(co);
  std::vector<double> out(b * t * co);
  MutMap(out.data(), R, CO).noalias() =
      ConstMap(cols.data(), R, W) * ConstMap(kernel.values().data(), W, CO);
  Tensor cols_t({b * t, width}, std::move(cols));
  BackwardFn fn = [kernel, cols_t, b, t, ci, k, half, width, R, W, CO](
                      std::span<const double> g, std::span<GradBuffer* const> gin) {
    ConstMap G(g.data(), R, CO);
    if (gin[1]) {
      MutMap(gin[1]->data(), W, CO).noalias() +=
          ConstMap(cols_t.values().data(), R, W).transpose() * G;
    }
    if (gin[0]) {
      RowMat dcols = G * ConstMap(kernel.values().data(), W, CO).transpose();
      auto& gx = *gin[0];
      for (std::size_t s = 0; s < b; ++s) {
        for (std::size_t tau = 0; tau < t; ++tau) {
          const double* row = dcols.data() + (s * t + tau) * width;
          for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(tau + j) -
                                       static_cast<std::ptrdiff_t>(half);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;
            double* dst = gx.data() + (s * t + static_cast<std::size_t>(src)) * ci;
            for (std::size_t c = 0; c < ci; ++c) dst[c] += row[j * ci + c];
          }
        }
      }
    }
  };
  return finish({b, t, co}, std::move(out), {&x, &kernel}, std::move(fn));
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids, Shape lead) {
  if (table.rank() != 2) throw ShapeMismatch("embedding table must be [V, d]");
  if (shape_size(lead) != ids.size()) throw ShapeMismatch("embedding ids/lead mismatch");
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  const auto& tv = table.values();
  std::vector<double> out(idx.size() * d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= v) throw ShapeMismatch("embedding id out of range");
    std::copy_n(tv.data() + idx[r] * d, d, out.data() + r * d);
  }
  Shape out_shape = std::move(lead);
  out_shape.push_back(d);
  BackwardFn fn = [idx, d](std::span<const double> g, std::span<GradBuffer* const> gin) {
    if (!gin[0]) return;
    auto& gt = *gin[0];
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) gt[idx[r] * d + j] += g[r * d + j];
  };
  return finish(out_shape, std::move(out), {&table}, std::move(fn));
}

Tensor pick(const Tensor& x, std::span<const std::size_t> index) {
  if (x.rank() != 2 || index.size() != x.dim(0)) {
    throw ShapeMismatch("pick expects x[n, c] and n indices");
  }
  const std::size_t n = x.dim(0), c = x.dim(1);
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (idx[i] >= c) throw ShapeMismatch("pick index out of range");
    out[i] = x.values()[i * c + idx[i]];
  }
  BackwardFn fn = [idx, c](std::span<const double> g, std::span<GradBuffer* const> gin) {
    if (!gin[0]) return;
    for (std::size_t i = 0; i < idx.size(); ++i) (*gin[0])[i * c + idx[i]] += g[i];
  };
  return finish({n}, std::move(out), {&x}, std::move(fn));
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() < 1) {
    throw ShapeMismatch("cosine_similarity shapes " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
  const std::size_t d = a.dim(-1);
  const std::size_t rows = a.size() / d;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(rows), na(rows), nb(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += av[r * d + j] * bv[r * d + j];
      sa += av[r * d + j] * av[r * d + j];
      sb += bv[r * d + j] * bv[r * d + j];
    }
    na[r] = std::sqrt(sa);
    nb[r] = std::sqrt(sb);
    out[r] = (na[r] > 0.0 && nb[r] > 0.0) ? dot / (na[r] * nb[r]) : 0.0;
  }
  Tensor c_t(out_shape, out);
  BackwardFn fn = [a, b, c_t, na, nb, d](std::span<const double> g,
                                         std::span<GradBuffer* const> gin) {
    const auto& av = a.values();
    const auto& bv = b.values();
    const auto& cv = c_t.values();
    for (std::size_t r = 0; r < na.size(); ++r) {
      if (na[r] == 0.0 || nb[r] == 0.0) continue;
      const double inv = 1.0 / (na[r] * nb[r]);
      if (gin[0]) {
        auto& ga = *gin[0];
        const double s = cv[r] / (na[r] * na[r]);
        for (std::size_t j = 0; j < d; ++j)
          ga[r * d + j] += g[r] * (bv[r * d + j] * inv - s * av[r * d + j]);
      }
      if (gin[1]) {
        auto& gb = *gin[1];
        const double s = cv[r] / (nb[r] * nb[r]);
        for (std::size_t j = 0; j < d; ++j)
          gb[r * d + j] += g[r] * (av[r * d + j] * inv - s * bv[r * d + j]);
      }
    }
  };
  return finish(out_shape, std::move(out), {&a, &b}, std::move(fn));
}

}  // namespace cormult::ops
