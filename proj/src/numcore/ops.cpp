#include "efuse/numcore/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

#include "vmath.hpp"

namespace efuse::nc {

namespace {

using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RMat>;
using CMapM = Eigen::Map<const RMat>;
using StridedC = Eigen::Map<const RMat, 0, Eigen::OuterStride<>>;
using Strided = Eigen::Map<RMat, 0, Eigen::OuterStride<>>;

CMapM cmat(const Tensor& t) {
  return CMapM(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
MapM mmat(Tensor& t) {
  return MapM(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

[[noreturn]] void shape_fail(const std::string& op, const Shape& a, const Shape& b) {
  throw ShapeError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}
[[noreturn]] void shape_fail(const std::string& op, const Shape& a) {
  throw ShapeError(op + ": invalid shape " + shape_str(a));
}

void require_matrix(const std::string& op, const Tensor& t) {
  if (t.rank() == 0 || t.size() == 0) shape_fail(op, t.shape());
}

enum class Bcast { Same, Scalar, Row, Col };

Bcast broadcast_kind(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Bcast::Same;
  if (b.size() == 1) return Bcast::Scalar;
  if (a.rank() >= 1 && b.size() == a.cols() && b.rows() == 1) return Bcast::Row;
  if (a.rank() >= 2 && b.rank() == 2 && b.cols() == 1 && b.rows() == a.rows()) return Bcast::Col;
  if (a.size() == b.size() && a.rows() == b.rows() && a.cols() == b.cols()) return Bcast::Same;
  shape_fail(op, a.shape(), b.shape());
}

// Calls fn(i, j) for every element i of the left operand, j being the
// matching index into the broadcast right operand.
template <class Fn>
inline void bcast_loop(Bcast k, std::size_t size, std::size_t cols, Fn fn) {
  const std::size_t rows = cols ? size / cols : 0;
  switch (k) {
    case Bcast::Same:
      for (std::size_t i = 0; i < size; ++i) fn(i, i);
      return;
    case Bcast::Scalar:
      for (std::size_t i = 0; i < size; ++i) fn(i, std::size_t{0});
      return;
    case Bcast::Row:
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) fn(r * cols + c, c);
      }
      return;
    case Bcast::Col:
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) fn(r * cols + c, r);
      }
      return;
  }
}

// Elementwise binary op. fwd(x, y) -> z; dx(x, y, z), dy(x, y, z) are the
// local partials.
template <class F, class DX, class DY>
Var binary(const char* name, Var a, Var b, F fwd, DX dfx, DY dfy) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(name, av);
  require_matrix(name, bv);
  const Bcast k = broadcast_kind(name, av, bv);
  const std::size_t cols = av.cols();
  Tensor out(av.shape());
  {
    const double* x = av.data().data();
    const double* y = bv.data().data();
    double* z = out.data().data();
    bcast_loop(k, av.size(), cols, [&](std::size_t i, std::size_t j) { z[i] = fwd(x[i], y[j]); });
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(name, {a, b}, std::move(out), [ia, ib, k, cols, dfx, dfy](Graph& g, std::size_t self) {
    const double* x = g.node(ia).value.data().data();
    const double* y = g.node(ib).value.data().data();
    const double* z = g.node(self).value.data().data();
    const double* gz = g.node(self).grad.data().data();
    const std::size_t size = g.node(self).value.size();
    if (g.needs_grad(ia)) {
      double* gx = g.grad_buffer(ia).data().data();
      bcast_loop(k, size, cols, [&](std::size_t i, std::size_t j) { gx[i] += gz[i] * dfx(x[i], y[j], z[i]); });
    }
    if (g.needs_grad(ib)) {
      double* gy = g.grad_buffer(ib).data().data();
      bcast_loop(k, size, cols, [&](std::size_t i, std::size_t j) { gy[j] += gz[i] * dfy(x[i], y[j], z[i]); });
    }
  });
}

// Records an elementwise op whose values are already computed; dfx(x, y) is
// the local derivative.
template <class DX>
Var record_unary(const char* name, Var a, Tensor out, DX dfx) {
  const std::size_t ia = a.id();
  return a.graph().record(name, {a}, std::move(out), [ia, dfx](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const double* x = g.node(ia).value.data().data();
    const double* y = g.node(self).value.data().data();
    const double* gy = g.node(self).grad.data().data();
    double* gx = g.grad_buffer(ia).data().data();
    const std::size_t n = g.node(self).value.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] * dfx(x[i], y[i]);
  });
}

template <class F, class DX>
Var unary(const char* name, Var a, F fwd, DX dfx) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return record_unary(name, a, std::move(out), dfx);
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) shape_fail("matmul", av.shape(), bv.shape());
  Tensor out({av.rows(), bv.cols()});
  mmat(out).noalias() = cmat(av) * cmat(bv);
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record("matmul", {a, b}, std::move(out), [ia, ib](Graph& g, std::size_t self) {
    const Tensor& gc = g.node(self).grad;
    if (g.needs_grad(ia)) mmat(g.grad_buffer(ia)).noalias() += cmat(gc) * cmat(g.node(ib).value).transpose();
    if (g.needs_grad(ib)) mmat(g.grad_buffer(ib)).noalias() += cmat(g.node(ia).value).transpose() * cmat(gc);
  });
}

Var linear(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.cols() != wv.rows()) shape_fail("linear", xv.shape(), wv.shape());
  if (bv.size() != wv.cols()) shape_fail("linear", wv.shape(), bv.shape());
  Tensor out({xv.rows(), wv.cols()});
  const Eigen::Map<const Eigen::RowVectorXd> bias(bv.data().data(), static_cast<Eigen::Index>(bv.size()));
  auto o = mmat(out);
  o.noalias() = cmat(xv) * cmat(wv);
  o.rowwise() += bias;
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  return x.graph().record("linear", {x, w, b}, std::move(out), [ix, iw, ib](Graph& g, std::size_t self) {
    const Tensor& gy = g.node(self).grad;
    if (g.needs_grad(ix)) mmat(g.grad_buffer(ix)).noalias() += cmat(gy) * cmat(g.node(iw).value).transpose();
    if (g.needs_grad(iw)) {
      const Tensor& xv = g.node(ix).value;
      Tensor& gw = g.grad_buffer(iw);
      MapM(gw.data().data(), static_cast<Eigen::Index>(xv.cols()), static_cast<Eigen::Index>(gy.cols())).noalias() +=
          cmat(xv).transpose() * cmat(gy);
    }
    if (g.needs_grad(ib)) {
      Tensor& gb = g.grad_buffer(ib);
      Eigen::Map<Eigen::RowVectorXd>(gb.data().data(), static_cast<Eigen::Index>(gb.size())) +=
          cmat(gy).colwise().sum();
    }
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  if (av.rank() != 2) shape_fail("transpose", av.shape());
  Tensor out({av.cols(), av.rows()});
  mmat(out) = cmat(av).transpose();
  const std::size_t ia = a.id();
  return a.graph().record("transpose", {a}, std::move(out), [ia](Graph& g, std::size_t self) {
    if (g.needs_grad(ia)) mmat(g.grad_buffer(ia)) += cmat(g.node(self).grad).transpose();
  });
}

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double z) { return -z / y; });
}

Var scale(Var a, double s) {
  return unary(
      "scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(
      "add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var neg(Var a) {
  return unary(
      "neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var exp(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  vm::exp(av.data().data(), out.data().data(), av.size());
  return record_unary("exp", a, std::move(out), [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a, [](double x) { return stable_sigmoid(x); }, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var a) {
  return unary(
      "softplus", a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return stable_sigmoid(x); });
}

Var gelu(Var a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  const Tensor& av = a.value();
  const std::size_t n = av.size();
  const double* x = av.data().data();
  // cdf[i] = Phi(x[i]), kept for the backward pass
  std::shared_ptr<double[]> cdf(new double[n]);
  double* c = cdf.get();
  for (std::size_t i = 0; i < n; ++i) c[i] = x[i] * inv_sqrt2;
  vm::erf(c, c, n);
  Tensor out(av.shape());
  double* y = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    c[i] = 0.5 * (1.0 + c[i]);
    y[i] = x[i] * c[i];
  }
  const std::size_t ia = a.id();
  return a.graph().record("gelu", {a}, std::move(out), [ia, cdf](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const Tensor& xv = g.node(ia).value;
    const std::size_t n = xv.size();
    const double* x = xv.data().data();
    const double* gy = g.node(self).grad.data().data();
    const double* c = cdf.get();
    double* gx = g.grad_buffer(ia).data().data();
    std::vector<double> pdf(n);
    vm::gauss(x, pdf.data(), n);
    for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] * (c[i] + x[i] * inv_sqrt2pi * pdf[i]);
  });
}

Var sum(Var a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.data()) s += v;
  const std::size_t ia = a.id();
  return a.graph().record("sum", {a}, Tensor::scalar(s), [ia](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const double gs = g.node(self).grad[0];
    for (double& v : g.grad_buffer(ia).data()) v += gs;
  });
}

Var mean(Var a) {
  const Tensor& av = a.value();
  if (av.size() == 0) shape_fail("mean", av.shape());
  double s = 0.0;
  for (double v : av.data()) s += v;
  const double n = static_cast<double>(av.size());
  const std::size_t ia = a.id();
  return a.graph().record("mean", {a}, Tensor::scalar(s / n), [ia, n](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const double gs = g.node(self).grad[0] / n;
    for (double& v : g.grad_buffer(ia).data()) v += gs;
  });
}

Var softmax(Var a) {
  const Tensor& av = a.value();
  require_matrix("softmax", av);
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out(av.shape());
  for (std::size_t r = 0; r < m; ++r) {
    const double* x = av.data().data() + r * n;
    double* y = out.data().data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < n; ++c) y[c] /= z;
  }
  const std::size_t ia = a.id();
  return a.graph().record("softmax", {a}, std::move(out), [ia, m, n](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const Tensor& y = g.node(self).value;
    const Tensor& gy = g.node(self).grad;
    Tensor& gx = g.grad_buffer(ia);
    for (std::size_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += gy[r * n + c] * y[r * n + c];
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += y[r * n + c] * (gy[r * n + c] - dot);
    }
  });
}

Var logsumexp(Var a) {
  const Tensor& av = a.value();
  require_matrix("logsumexp", av);
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({m, 1});
  for (std::size_t r = 0; r < m; ++r) {
    const double* x = av.data().data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += std::exp(x[c] - mx);
    out[r] = mx + std::log(z);
  }
  const std::size_t ia = a.id();
  return a.graph().record("logsumexp", {a}, std::move(out), [ia, m, n](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const Tensor& x = g.node(ia).value;
    const Tensor& y = g.node(self).value;
    const Tensor& gy = g.node(self).grad;
    Tensor& gx = g.grad_buffer(ia);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += gy[r] * std::exp(x[r * n + c] - y[r]);
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta) {
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  require_matrix("layer_norm", xv);
  const std::size_t m = xv.rows(), n = xv.cols();
  if (gv.size() != n || bv.size() != n) shape_fail("layer_norm", xv.shape(), gv.shape());
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < m; ++r) {
    const double* xr = xv.data().data() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += xr[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (xr[c] - mu) * is;
      (*xhat)[r * n + c] = h;
      out[r * n + c] = h * gv[c] + bv[c];
    }
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.graph().record(
      "layer_norm", {x, gamma, beta}, std::move(out), [ix, ig, ib, m, n, xhat, inv_std](Graph& g, std::size_t self) {
        const Tensor& gy = g.node(self).grad;
        const Tensor& gam = g.node(ig).value;
        if (g.needs_grad(ig)) {
          Tensor& gg = g.grad_buffer(ig);
          for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < n; ++c) gg[c] += gy[r * n + c] * (*xhat)[r * n + c];
          }
        }
        if (g.needs_grad(ib)) {
          Tensor& gb = g.grad_buffer(ib);
          for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < n; ++c) gb[c] += gy[r * n + c];
          }
        }
        if (g.needs_grad(ix)) {
          Tensor& gx = g.grad_buffer(ix);
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t r = 0; r < m; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
              const double dh = gy[r * n + c] * gam[c];
              s1 += dh;
              s2 += dh * (*xhat)[r * n + c];
            }
            for (std::size_t c = 0; c < n; ++c) {
              const double dh = gy[r * n + c] * gam[c];
              gx[r * n + c] += (*inv_std)[r] * (dh - s1 * inv_n - (*xhat)[r * n + c] * s2 * inv_n);
            }
          }
        }
      });
}

Var l2_normalize(Var a) {
  const Tensor& av = a.value();
  require_matrix("l2_normalize", av);
  const std::size_t m = av.rows(), n = av.cols();
  auto norms = std::make_shared<std::vector<double>>(m);
  Tensor out(av.shape());
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += av[r * n + c] * av[r * n + c];
    const double nr = std::sqrt(s);
    if (nr == 0.0) throw std::domain_error("l2_normalize: row " + std::to_string(r) + " is the zero vector");
    (*norms)[r] = nr;
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = av[r * n + c] / nr;
  }
  const std::size_t ia = a.id();
  return a.graph().record("l2_normalize", {a}, std::move(out), [ia, m, n, norms](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const Tensor& y = g.node(self).value;
    const Tensor& gy = g.node(self).grad;
    Tensor& gx = g.grad_buffer(ia);
    for (std::size_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += y[r * n + c] * gy[r * n + c];
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += (gy[r * n + c] - y[r * n + c] * dot) / (*norms)[r];
    }
  });
}

Var gather(Var table, std::span<const std::size_t> ids) {
  const Tensor& tv = table.value();
  require_matrix("gather", tv);
  const std::size_t rows = tv.rows(), d = tv.cols();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= rows) {
      throw std::out_of_range("gather: id " + std::to_string(ids[i]) + " outside table of shape " + shape_str(tv.shape()));
    }
    std::copy_n(tv.data().data() + ids[i] * d, d, out.data().data() + i * d);
  }
  auto idv = std::make_shared<std::vector<std::size_t>>(ids.begin(), ids.end());
  const std::size_t it = table.id();
  return table.graph().record("gather", {table}, std::move(out), [it, d, idv](Graph& g, std::size_t self) {
    if (!g.needs_grad(it)) return;
    const Tensor& gy = g.node(self).grad;
    Tensor& gt = g.grad_buffer(it);
    for (std::size_t i = 0; i < idv->size(); ++i) {
      double* dst = gt.data().data() + (*idv)[i] * d;
      const double* src = gy.data().data() + i * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  });
}

Var pick(Var a, std::span<const std::size_t> index) {
  const Tensor& av = a.value();
  require_matrix("pick", av);
  const std::size_t m = av.rows(), n = av.cols();
  if (index.size() != m) shape_fail("pick", av.shape(), Shape{index.size()});
  Tensor out({m, 1});
  for (std::size_t r = 0; r < m; ++r) {
    if (index[r] >= n) throw std::out_of_range("pick: index " + std::to_string(index[r]) + " >= " + std::to_string(n));
    out[r] = av[r * n + index[r]];
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(index.begin(), index.end());
  const std::size_t ia = a.id();
  return a.graph().record("pick", {a}, std::move(out), [ia, n, idx](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const Tensor& gy = g.node(self).grad;
    Tensor& gx = g.grad_buffer(ia);
    for (std::size_t r = 0; r < idx->size(); ++r) gx[r * n + (*idx)[r]] += gy[r];
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  const Tensor& first = parts.front().value();
  std::vector<std::size_t> rows, cols;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    require_matrix("concat", v);
    if (axis == 0 && v.cols() != first.cols()) shape_fail("concat", first.shape(), v.shape());
    if (axis == 1 && v.rows() != first.rows()) shape_fail("concat", first.shape(), v.shape());
    rows.push_back(v.rows());
    cols.push_back(v.cols());
  }
  std::size_t total_r = 0, total_c = 0;
  for (auto r : rows) total_r += r;
  for (auto c : cols) total_c += c;
  const std::size_t out_r = axis == 0 ? total_r : first.rows();
  const std::size_t out_c = axis == 0 ? first.cols() : total_c;
  Tensor out({out_r, out_c});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    if (axis == 0) {
      std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off * out_c));
      off += v.rows();
    } else {
      for (std::size_t r = 0; r < out_r; ++r) {
        std::copy_n(v.data().data() + r * v.cols(), v.cols(), out.data().data() + r * out_c + off);
      }
      off += v.cols();
    }
  }
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return parts.front().graph().record(
      "concat", parts, std::move(out), [ids, rows, cols, axis, out_c](Graph& g, std::size_t self) {
        const Tensor& gy = g.node(self).grad;
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (g.needs_grad(ids[k])) {
            Tensor& gx = g.grad_buffer(ids[k]);
            for (std::size_t r = 0; r < rows[k]; ++r) {
              for (std::size_t c = 0; c < cols[k]; ++c) {
                const std::size_t src = axis == 0 ? (off + r) * out_c + c : r * out_c + off + c;
                gx[r * cols[k] + c] += gy[src];
              }
            }
          }
          off += axis == 0 ? rows[k] : cols[k];
        }
      });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  require_matrix("slice_rows", av);
  if (begin >= end || end > av.rows()) shape_fail("slice_rows", av.shape(), Shape{begin, end});
  const std::size_t n = av.cols();
  Tensor out({end - begin, n});
  std::copy_n(av.data().data() + begin * n, (end - begin) * n, out.data().data());
  const std::size_t ia = a.id();
  return a.graph().record("slice_rows", {a}, std::move(out), [ia, begin, n](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const Tensor& gy = g.node(self).grad;
    Tensor& gx = g.grad_buffer(ia);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[begin * n + i] += gy[i];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  require_matrix("slice_cols", av);
  if (begin >= end || end > av.cols()) shape_fail("slice_cols", av.shape(), Shape{begin, end});
  const std::size_t m = av.rows(), n = av.cols(), w = end - begin;
  Tensor out({m, w});
  for (std::size_t r = 0; r < m; ++r) std::copy_n(av.data().data() + r * n + begin, w, out.data().data() + r * w);
  const std::size_t ia = a.id();
  return a.graph().record("slice_cols", {a}, std::move(out), [ia, begin, m, n, w](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const Tensor& gy = g.node(self).grad;
    Tensor& gx = g.grad_buffer(ia);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < w; ++c) gx[r * n + begin + c] += gy[r * w + c];
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.graph().record("reshape", {a}, std::move(out), [ia](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const Tensor& gy = g.node(self).grad;
    Tensor& gx = g.grad_buffer(ia);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

Var masked_fill(Var a, std::span<const std::uint8_t> mask, double value) {
  const Tensor& av = a.value();
  if (mask.size() != av.size()) shape_fail("masked_fill", av.shape(), Shape{mask.size()});
  Tensor out = av;
  out.set_requires_grad(false);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out[i] = value;
  }
  auto m = std::make_shared<std::vector<std::uint8_t>>(mask.begin(), mask.end());
  const std::size_t ia = a.id();
  return a.graph().record("masked_fill", {a}, std::move(out), [ia, m](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const Tensor& gy = g.node(self).grad;
    Tensor& gx = g.grad_buffer(ia);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      if (!(*m)[i]) gx[i] += gy[i];
    }
  });
}

Var attention(Var q, Var k, Var v, std::span<const std::uint8_t> key_mask, std::size_t n_seq, std::size_t seq_len,
              std::size_t heads) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  if (qv.rank() != 2 || qv.shape() != kv.shape() || qv.shape() != vv.shape()) {
    shape_fail("attention", qv.shape(), kv.shape());
  }
  const std::size_t d = qv.cols();
  if (heads == 0 || d % heads != 0 || qv.rows() != n_seq * seq_len || key_mask.size() != n_seq * seq_len) {
    throw ShapeError("attention: q " + shape_str(qv.shape()) + " inconsistent with n_seq=" + std::to_string(n_seq) +
                     " seq_len=" + std::to_string(seq_len) + " heads=" + std::to_string(heads) +
                     " mask=" + std::to_string(key_mask.size()));
  }
  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto T = static_cast<Eigen::Index>(seq_len);
  const auto DH = static_cast<Eigen::Index>(dh);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));

  // probs[(s * heads + h) * T * T + i * T + j]
  auto probs = std::make_shared<std::vector<double>>(n_seq * heads * seq_len * seq_len);
  auto mask = std::make_shared<std::vector<std::uint8_t>>(key_mask.begin(), key_mask.end());
  Tensor out(qv.shape());
  RMat scores(T, T);
  std::vector<double> keep(seq_len);
  for (std::size_t s = 0; s < n_seq; ++s) {
    const std::uint8_t* km = mask->data() + s * seq_len;
    if (std::none_of(km, km + seq_len, [](std::uint8_t x) { return x != 0; })) {
      throw std::invalid_argument("attention: sequence " + std::to_string(s) + " has no unmasked key");
    }
    for (std::size_t j = 0; j < seq_len; ++j) keep[j] = km[j] ? 1.0 : 0.0;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t base = s * seq_len * d + h * dh;
      StridedC Q(qv.data().data() + base, T, DH, stride);
      StridedC K(kv.data().data() + base, T, DH, stride);
      StridedC V(vv.data().data() + base, T, DH, stride);
      scores.noalias() = (Q * K.transpose()) * sc;
      MapM P(probs->data() + (s * heads + h) * seq_len * seq_len, T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        double* row = scores.data() + i * T;
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < T; ++j) {
          if (km[j]) mx = std::max(mx, row[j]);
        }
        // masked keys get a large negative argument, then an exact zero
        for (Eigen::Index j = 0; j < T; ++j) row[j] = km[j] ? row[j] - mx : -1000.0;
        double* p = P.data() + i * T;
        vm::exp(row, p, seq_len);
        double z = 0.0;
        for (Eigen::Index j = 0; j < T; ++j) {
          p[j] *= keep[j];
          z += p[j];
        }
        const double inv = 1.0 / z;
        for (Eigen::Index j = 0; j < T; ++j) p[j] *= inv;
      }
      Strided O(out.data().data() + base, T, DH, stride);
      O.noalias() = P * V;
    }
  }
  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return q.graph().record(
      "attention", {q, k, v}, std::move(out),
      [iq, ik, iv, probs, n_seq, seq_len, heads, d, dh, sc](Graph& g, std::size_t self) {
        const auto T = static_cast<Eigen::Index>(seq_len);
        const auto DH = static_cast<Eigen::Index>(dh);
        const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
        const Tensor& qv = g.node(iq).value;
        const Tensor& kv = g.node(ik).value;
        const Tensor& vv = g.node(iv).value;
        const Tensor& go = g.node(self).grad;
        const bool need_q = g.needs_grad(iq), need_k = g.needs_grad(ik), need_v = g.needs_grad(iv);
        double* gq = need_q ? g.grad_buffer(iq).data().data() : nullptr;
        double* gk = need_k ? g.grad_buffer(ik).data().data() : nullptr;
        double* gv = need_v ? g.grad_buffer(iv).data().data() : nullptr;
        RMat dP(T, T);
        for (std::size_t s = 0; s < n_seq; ++s) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t base = s * seq_len * d + h * dh;
            StridedC Q(qv.data().data() + base, T, DH, stride);
            StridedC K(kv.data().data() + base, T, DH, stride);
            StridedC V(vv.data().data() + base, T, DH, stride);
            StridedC dO(go.data().data() + base, T, DH, stride);
            CMapM P(probs->data() + (s * heads + h) * seq_len * seq_len, T, T);
            if (need_v) Strided(gv + base, T, DH, stride).noalias() += P.transpose() * dO;
            if (!need_q && !need_k) continue;
            dP.noalias() = dO * V.transpose();
            // softmax backward, then the 1/sqrt(dh) scale
            for (Eigen::Index i = 0; i < T; ++i) {
              const double dot = P.row(i).dot(dP.row(i));
              for (Eigen::Index j = 0; j < T; ++j) dP(i, j) = P(i, j) * (dP(i, j) - dot) * sc;
            }
            if (need_q) Strided(gq + base, T, DH, stride).noalias() += dP * K;
            if (need_k) Strided(gk + base, T, DH, stride).noalias() += dP.transpose() * Q;
          }
        }
      });
}

}  // namespace efuse::nc
