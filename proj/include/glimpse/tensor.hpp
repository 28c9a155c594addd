#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "glimpse/errors.hpp"
#include "glimpse/rng.hpp"

namespace glimpse {

class Tensor;

namespace detail {

struct TensorData;

// One recorded operation. `run` reads the output's gradient and accumulates
// into the parents' gradients; it never owns the output, so the graph stays
// an acyclic web of shared_ptrs that dies with the tensors of a step.
struct TensorNode {
  std::vector<std::shared_ptr<TensorData>> parents;
  std::function<void(const TensorData& out)> run;
};

struct TensorData {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;
  std::vector<double> grad;  // empty until backward touches this tensor
  bool requires_grad = false;
  std::shared_ptr<TensorNode> node;  // null for leaves

  std::size_t size() const { return values.size(); }

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

}  // namespace detail

// Dense row-major 2-D tensor of 64-bit reals with reverse-mode gradient
// recording. 1-D data is represented as a 1xN row. Copies are shallow
// (shared storage), matching the tape semantics: an op's inputs must not
// be mutated before backward runs.
class Tensor {
 public:
  Tensor() : d_(std::make_shared<detail::TensorData>()) {}

  Tensor(int rows, int cols, double fill = 0.0) : Tensor() {
    if (rows < 0 || cols < 0) throw dim_error("negative tensor dimension");
    d_->rows = rows;
    d_->cols = cols;
    d_->values.assign(static_cast<std::size_t>(rows) * cols, fill);
  }

  static Tensor from(int rows, int cols, std::vector<double> v) {
    if (v.size() != static_cast<std::size_t>(rows) * cols)
      throw dim_error("value count " + std::to_string(v.size()) +
                      " does not fill shape " + shape_str(rows, cols));
    Tensor t(rows, cols);
    t.d_->values = std::move(v);
    return t;
  }

  static Tensor row(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    return from(1, n, std::move(v));
  }

  static Tensor scalar(double v) { return from(1, 1, {v}); }

  static Tensor leaf(int rows, int cols, std::vector<double> v,
                     bool requires_grad = true) {
    Tensor t = from(rows, cols, std::move(v));
    t.d_->requires_grad = requires_grad;
    return t;
  }

  int rows() const { return d_->rows; }
  int cols() const { return d_->cols; }
  std::size_t size() const { return d_->values.size(); }
  bool empty() const { return d_->values.empty(); }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool b) { d_->requires_grad = b; }
  bool is_leaf() const { return d_->node == nullptr; }

  double at(int r, int c) const {
    return d_->values[static_cast<std::size_t>(r) * d_->cols + c];
  }

  double item() const {
    if (size() != 1)
      throw contract_error("item() on non-scalar tensor " +
                           shape_str(rows(), cols()));
    return d_->values[0];
  }

  const std::vector<double>& values() const { return d_->values; }

  // Mutation is reserved for leaves (parameter updates, test setup);
  // recorded intermediates are frozen by the tape contract.
  std::vector<double>& mut_values() {
    if (!is_leaf())
      throw contract_error("mutating a recorded intermediate tensor");
    return d_->values;
  }

  double& mut_at(int r, int c) {
    return mut_values()[static_cast<std::size_t>(r) * d_->cols + c];
  }

  bool has_grad() const { return d_->grad.size() == d_->values.size(); }

  const std::vector<double>& grad() const {
    if (!has_grad())
      throw contract_error("gradient not populated; run backward first");
    return d_->grad;
  }

  double grad_at(int r, int c) const {
    return grad()[static_cast<std::size_t>(r) * d_->cols + c];
  }

  void zero_grad() { d_->grad.assign(d_->values.size(), 0.0); }
  void drop_grad() { d_->grad.clear(); }

  // Deep value copy with no graph attached.
  Tensor detached() const {
    Tensor t(rows(), cols());
    t.d_->values = d_->values;
    return t;
  }

  bool all_finite() const {
    for (double v : d_->values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const Tensor& o) const {
    return rows() == o.rows() && cols() == o.cols();
  }

  std::shared_ptr<detail::TensorData> data_ptr() const { return d_; }

 private:
  std::shared_ptr<detail::TensorData> d_;
};

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

// Attaches a node to `out` recording `parents` and `run`, and marks the
// output as grad-requiring. Called only when some parent requires grad.
inline void record(Tensor& out, std::vector<Tensor> parents,
                   std::function<void(const TensorData&)> run) {
  auto node = std::make_shared<TensorNode>();
  node->parents.reserve(parents.size());
  for (const Tensor& p : parents) node->parents.push_back(p.data_ptr());
  node->run = std::move(run);
  out.data_ptr()->node = std::move(node);
  out.set_requires_grad(true);
}

inline std::vector<double>& grad_buf(const std::shared_ptr<TensorData>& d) {
  d->ensure_grad();
  return d->grad;
}

}  // namespace detail

inline void check_same_shape(const Tensor& a, const Tensor& b,
                             const char* op) {
  if (!a.same_shape(b))
    throw dim_error(std::string(op) + ": shape mismatch " +
                    shape_str(a.rows(), a.cols()) + " vs " +
                    shape_str(b.rows(), b.cols()));
}

// ---------------------------------------------------------------------------
// Core operations. Each records its own backward rule when needed.
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw dim_error("matmul: inner dimensions disagree, " +
                    shape_str(a.rows(), a.cols()) + " * " +
                    shape_str(b.rows(), b.cols()));
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out(m, n);
  {
    auto& y = out.data_ptr()->values;
    const auto& av = a.values();
    const auto& bv = b.values();
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        const double aip = av[static_cast<std::size_t>(i) * k + p];
        if (aip == 0.0) continue;
        const std::size_t brow = static_cast<std::size_t>(p) * n;
        const std::size_t yrow = static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) y[yrow + j] += aip * bv[brow + j];
      }
  }
  if (detail::any_requires_grad({&a, &b})) {
    auto ad = a.data_ptr();
    auto bd = b.data_ptr();
    detail::record(out, {a, b}, [ad, bd, m, k, n](const detail::TensorData& o) {
      // dA = dY * B^T, dB = A^T * dY
      if (ad->requires_grad) {
        auto& ga = detail::grad_buf(ad);
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            double s = 0.0;
            const std::size_t orow = static_cast<std::size_t>(i) * n;
            const std::size_t brow = static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) s += o.grad[orow + j] * bd->values[brow + j];
            ga[static_cast<std::size_t>(i) * k + p] += s;
          }
      }
      if (bd->requires_grad) {
        auto& gb = detail::grad_buf(bd);
        for (int i = 0; i < m; ++i) {
          const std::size_t arow = static_cast<std::size_t>(i) * k;
          const std::size_t orow = static_cast<std::size_t>(i) * n;
          for (int p = 0; p < k; ++p) {
            const double aip = ad->values[arow + p];
            if (aip == 0.0) continue;
            const std::size_t brow = static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) gb[brow + j] += aip * o.grad[orow + j];
          }
        }
      }
    });
  }
  return out;
}

inline Tensor transpose(const Tensor& x) {
  const int m = x.rows(), n = x.cols();
  Tensor out(n, m);
  auto& y = out.data_ptr()->values;
  const auto& v = x.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      y[static_cast<std::size_t>(j) * m + i] = v[static_cast<std::size_t>(i) * n + j];
  if (x.requires_grad()) {
    auto xd = x.data_ptr();
    detail::record(out, {x}, [xd, m, n](const detail::TensorData& o) {
      auto& gx = detail::grad_buf(xd);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          gx[static_cast<std::size_t>(i) * n + j] +=
              o.grad[static_cast<std::size_t>(j) * m + i];
    });
  }
  return out;
}

// Row-stabilized softmax; rows sum to 1 for any finite input.
inline Tensor softmax_rows(const Tensor& x) {
  const int m = x.rows(), n = x.cols();
  if (n == 0) throw dim_error("softmax_rows: empty rows");
  Tensor out(m, n);
  auto& y = out.data_ptr()->values;
  const auto& v = x.values();
  for (int i = 0; i < m; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * n;
    double mx = v[off];
    for (int j = 1; j < n; ++j) mx = std::max(mx, v[off + j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      y[off + j] = std::exp(v[off + j] - mx);
      sum += y[off + j];
    }
    for (int j = 0; j < n; ++j) y[off + j] /= sum;
  }
  if (x.requires_grad()) {
    auto xd = x.data_ptr();
    auto od = out.data_ptr();
    detail::record(out, {x}, [xd, od, m, n](const detail::TensorData& o) {
      // dX_row = Y_row ⊙ (dY_row − <dY_row, Y_row>)
      auto& gx = detail::grad_buf(xd);
      for (int i = 0; i < m; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += o.grad[off + j] * od->values[off + j];
        for (int j = 0; j < n; ++j)
          gx[off + j] += od->values[off + j] * (o.grad[off + j] - dot);
      }
    });
  }
  return out;
}

enum class ElemOp { add, sub, mul };

inline Tensor elementwise(const Tensor& a, const Tensor& b, ElemOp op) {
  check_same_shape(a, b, "elementwise");
  Tensor out(a.rows(), a.cols());
  auto& y = out.data_ptr()->values;
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    switch (op) {
      case ElemOp::add: y[i] = av[i] + bv[i]; break;
      case ElemOp::sub: y[i] = av[i] - bv[i]; break;
      case ElemOp::mul: y[i] = av[i] * bv[i]; break;
    }
  }
  if (detail::any_requires_grad({&a, &b})) {
    auto ad = a.data_ptr();
    auto bd = b.data_ptr();
    detail::record(out, {a, b}, [ad, bd, op](const detail::TensorData& o) {
      if (ad->requires_grad) {
        auto& ga = detail::grad_buf(ad);
        for (std::size_t i = 0; i < o.grad.size(); ++i)
          ga[i] += op == ElemOp::mul ? o.grad[i] * bd->values[i] : o.grad[i];
      }
      if (bd->requires_grad) {
        auto& gb = detail::grad_buf(bd);
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          switch (op) {
            case ElemOp::add: gb[i] += o.grad[i]; break;
            case ElemOp::sub: gb[i] -= o.grad[i]; break;
            case ElemOp::mul: gb[i] += o.grad[i] * ad->values[i]; break;
          }
        }
      }
    });
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise(a, b, ElemOp::add);
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise(a, b, ElemOp::sub);
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise(a, b, ElemOp::mul);
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw dim_error("concat_cols: no parts");
  const int m = parts[0].rows();
  int total = 0;
  bool needs_grad = false;
  for (const Tensor& p : parts) {
    if (p.rows() != m)
      throw dim_error("concat_cols: row count mismatch " +
                      std::to_string(p.rows()) + " vs " + std::to_string(m));
    total += p.cols();
    needs_grad = needs_grad || p.requires_grad();
  }
  Tensor out(m, total);
  auto& y = out.data_ptr()->values;
  int col0 = 0;
  for (const Tensor& p : parts) {
    const int n = p.cols();
    const auto& v = p.values();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        y[static_cast<std::size_t>(i) * total + col0 + j] =
            v[static_cast<std::size_t>(i) * n + j];
    col0 += n;
  }
  if (needs_grad) {
    std::vector<Tensor> copy = parts;
    detail::record(out, copy, [copy, m, total](const detail::TensorData& o) {
      int c0 = 0;
      for (const Tensor& p : copy) {
        const int n = p.cols();
        if (p.requires_grad()) {
          auto& gp = detail::grad_buf(p.data_ptr());
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
              gp[static_cast<std::size_t>(i) * n + j] +=
                  o.grad[static_cast<std::size_t>(i) * total + c0 + j];
        }
        c0 += n;
      }
    });
  }
  return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw dim_error("concat_rows: no parts");
  const int n = parts[0].cols();
  int total = 0;
  bool needs_grad = false;
  for (const Tensor& p : parts) {
    if (p.cols() != n)
      throw dim_error("concat_rows: column count mismatch " +
                      std::to_string(p.cols()) + " vs " + std::to_string(n));
    total += p.rows();
    needs_grad = needs_grad || p.requires_grad();
  }
  Tensor out(total, n);
  auto& y = out.data_ptr()->values;
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const auto& v = p.values();
    std::copy(v.begin(), v.end(), y.begin() + off);
    off += v.size();
  }
  if (needs_grad) {
    std::vector<Tensor> copy = parts;
    detail::record(out, copy, [copy](const detail::TensorData& o) {
      std::size_t pos = 0;
      for (const Tensor& p : copy) {
        if (p.requires_grad()) {
          auto& gp = detail::grad_buf(p.data_ptr());
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += o.grad[pos + i];
        }
        pos += p.size();
      }
    });
  }
  return out;
}

inline Tensor slice_cols(const Tensor& x, int col0, int ncols) {
  if (col0 < 0 || ncols <= 0 || col0 + ncols > x.cols())
    throw dim_error("slice_cols: range [" + std::to_string(col0) + ", " +
                    std::to_string(col0 + ncols) + ") outside width " +
                    std::to_string(x.cols()));
  const int m = x.rows(), n = x.cols();
  Tensor out(m, ncols);
  auto& y = out.data_ptr()->values;
  const auto& v = x.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < ncols; ++j)
      y[static_cast<std::size_t>(i) * ncols + j] =
          v[static_cast<std::size_t>(i) * n + col0 + j];
  if (x.requires_grad()) {
    auto xd = x.data_ptr();
    detail::record(out, {x}, [xd, m, n, col0, ncols](const detail::TensorData& o) {
      auto& gx = detail::grad_buf(xd);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < ncols; ++j)
          gx[static_cast<std::size_t>(i) * n + col0 + j] +=
              o.grad[static_cast<std::size_t>(i) * ncols + j];
    });
  }
  return out;
}

// x (T×D) + b (1×D), broadcast over rows.
inline Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  if (b.rows() != 1 || b.cols() != x.cols())
    throw dim_error("add_rowvec: bias " + shape_str(b.rows(), b.cols()) +
                    " does not broadcast over " + shape_str(x.rows(), x.cols()));
  const int m = x.rows(), n = x.cols();
  Tensor out(m, n);
  auto& y = out.data_ptr()->values;
  const auto& v = x.values();
  const auto& bv = b.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      y[static_cast<std::size_t>(i) * n + j] = v[static_cast<std::size_t>(i) * n + j] + bv[j];
  if (detail::any_requires_grad({&x, &b})) {
    auto xd = x.data_ptr();
    auto bd = b.data_ptr();
    detail::record(out, {x, b}, [xd, bd, m, n](const detail::TensorData& o) {
      if (xd->requires_grad) {
        auto& gx = detail::grad_buf(xd);
        for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
      }
      if (bd->requires_grad) {
        auto& gb = detail::grad_buf(bd);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            gb[j] += o.grad[static_cast<std::size_t>(i) * n + j];
      }
    });
  }
  return out;
}

// x (T×D) ⊙ v (1×D), broadcast over rows.
inline Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
  if (v.rows() != 1 || v.cols() != x.cols())
    throw dim_error("mul_rowvec: vector " + shape_str(v.rows(), v.cols()) +
                    " does not broadcast over " + shape_str(x.rows(), x.cols()));
  const int m = x.rows(), n = x.cols();
  Tensor out(m, n);
  auto& y = out.data_ptr()->values;
  const auto& xv = x.values();
  const auto& vv = v.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      y[static_cast<std::size_t>(i) * n + j] = xv[static_cast<std::size_t>(i) * n + j] * vv[j];
  if (detail::any_requires_grad({&x, &v})) {
    auto xd = x.data_ptr();
    auto vd = v.data_ptr();
    detail::record(out, {x, v}, [xd, vd, m, n](const detail::TensorData& o) {
      if (xd->requires_grad) {
        auto& gx = detail::grad_buf(xd);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            gx[static_cast<std::size_t>(i) * n + j] +=
                o.grad[static_cast<std::size_t>(i) * n + j] * vd->values[j];
      }
      if (vd->requires_grad) {
        auto& gv = detail::grad_buf(vd);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            gv[j] += o.grad[static_cast<std::size_t>(i) * n + j] *
                     xd->values[static_cast<std::size_t>(i) * n + j];
      }
    });
  }
  return out;
}

// y = k*x + c, elementwise with constants.
inline Tensor affine(const Tensor& x, double k, double c) {
  Tensor out(x.rows(), x.cols());
  auto& y = out.data_ptr()->values;
  const auto& v = x.values();
  for (std::size_t i = 0; i < v.size(); ++i) y[i] = k * v[i] + c;
  if (x.requires_grad()) {
    auto xd = x.data_ptr();
    detail::record(out, {x}, [xd, k](const detail::TensorData& o) {
      auto& gx = detail::grad_buf(xd);
      for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += k * o.grad[i];
    });
  }
  return out;
}

inline Tensor scale(const Tensor& x, double k) { return affine(x, k, 0.0); }

// x scaled by a trainable 1×1 tensor.
inline Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.size() != 1) throw dim_error("scale_by: scale must be a 1x1 tensor");
  const double sv = s.values()[0];
  Tensor out(x.rows(), x.cols());
  auto& y = out.data_ptr()->values;
  const auto& v = x.values();
  for (std::size_t i = 0; i < v.size(); ++i) y[i] = sv * v[i];
  if (detail::any_requires_grad({&x, &s})) {
    auto xd = x.data_ptr();
    auto sd = s.data_ptr();
    detail::record(out, {x, s}, [xd, sd, sv](const detail::TensorData& o) {
      if (xd->requires_grad) {
        auto& gx = detail::grad_buf(xd);
        for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += sv * o.grad[i];
      }
      if (sd->requires_grad) {
        auto& gs = detail::grad_buf(sd);
        double acc = 0.0;
        for (std::size_t i = 0; i < o.grad.size(); ++i)
          acc += o.grad[i] * xd->values[i];
        gs[0] += acc;
      }
    });
  }
  return out;
}

inline Tensor sigmoid(const Tensor& x) {
  Tensor out(x.rows(), x.cols());
  auto& y = out.data_ptr()->values;
  const auto& v = x.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    // split on sign to avoid exp overflow
    y[i] = v[i] >= 0 ? 1.0 / (1.0 + std::exp(-v[i]))
                     : std::exp(v[i]) / (1.0 + std::exp(v[i]));
  }
  if (x.requires_grad()) {
    auto xd = x.data_ptr();
    auto od = out.data_ptr();
    detail::record(out, {x}, [xd, od](const detail::TensorData& o) {
      auto& gx = detail::grad_buf(xd);
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        const double s = od->values[i];
        gx[i] += o.grad[i] * s * (1.0 - s);
      }
    });
  }
  return out;
}

// Exact GELU; smooth everywhere, which keeps finite-difference checks clean.
inline Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  Tensor out(x.rows(), x.cols());
  auto& y = out.data_ptr()->values;
  const auto& v = x.values();
  for (std::size_t i = 0; i < v.size(); ++i)
    y[i] = 0.5 * v[i] * (1.0 + std::erf(v[i] * inv_sqrt2));
  if (x.requires_grad()) {
    auto xd = x.data_ptr();
    detail::record(out, {x}, [xd](const detail::TensorData& o) {
      auto& gx = detail::grad_buf(xd);
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        const double t = xd->values[i];
        const double cdf = 0.5 * (1.0 + std::erf(t * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * t * t);
        gx[i] += o.grad[i] * (cdf + t * pdf);
      }
    });
  }
  return out;
}

inline Tensor mean_rows(const Tensor& x) {
  if (x.rows() == 0) throw dim_error("mean_rows: empty tensor");
  const int m = x.rows(), n = x.cols();
  Tensor out(1, n);
  auto& y = out.data_ptr()->values;
  const auto& v = x.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) y[j] += v[static_cast<std::size_t>(i) * n + j];
  for (int j = 0; j < n; ++j) y[j] /= m;
  if (x.requires_grad()) {
    auto xd = x.data_ptr();
    detail::record(out, {x}, [xd, m, n](const detail::TensorData& o) {
      auto& gx = detail::grad_buf(xd);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          gx[static_cast<std::size_t>(i) * n + j] += o.grad[j] / m;
    });
  }
  return out;
}

inline Tensor sum_all(const Tensor& x) {
  Tensor out(1, 1);
  double s = 0.0;
  for (double v : x.values()) s += v;
  out.data_ptr()->values[0] = s;
  if (x.requires_grad()) {
    auto xd = x.data_ptr();
    detail::record(out, {x}, [xd](const detail::TensorData& o) {
      auto& gx = detail::grad_buf(xd);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[0];
    });
  }
  return out;
}

// Per-row layer normalization with learned gain/bias (each 1×D).
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gain,
                              const Tensor& bias, double eps = 1e-5) {
  const int m = x.rows(), n = x.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n)
    throw dim_error("layer_norm_rows: gain/bias must be 1x" + std::to_string(n));
  Tensor out(m, n);
  std::vector<double> inv_std(m), xhat(static_cast<std::size_t>(m) * n);
  auto& y = out.data_ptr()->values;
  const auto& v = x.values();
  const auto& g = gain.values();
  const auto& b = bias.values();
  for (int i = 0; i < m; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * n;
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += v[off + j];
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double d = v[off + j] - mean;
      var += d * d;
    }
    var /= n;
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < n; ++j) {
      xhat[off + j] = (v[off + j] - mean) * inv_std[i];
      y[off + j] = g[j] * xhat[off + j] + b[j];
    }
  }
  if (detail::any_requires_grad({&x, &gain, &bias})) {
    auto xd = x.data_ptr();
    auto gd = gain.data_ptr();
    auto bd = bias.data_ptr();
    detail::record(out, {x, gain, bias},
                   [xd, gd, bd, m, n, inv_std = std::move(inv_std),
                    xhat = std::move(xhat)](const detail::TensorData& o) {
      if (gd->requires_grad) {
        auto& gg = detail::grad_buf(gd);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            gg[j] += o.grad[static_cast<std::size_t>(i) * n + j] *
                     xhat[static_cast<std::size_t>(i) * n + j];
      }
      if (bd->requires_grad) {
        auto& gb = detail::grad_buf(bd);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            gb[j] += o.grad[static_cast<std::size_t>(i) * n + j];
      }
      if (xd->requires_grad) {
        auto& gx = detail::grad_buf(xd);
        for (int i = 0; i < m; ++i) {
          const std::size_t off = static_cast<std::size_t>(i) * n;
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (int j = 0; j < n; ++j) {
            const double dxh = o.grad[off + j] * gd->values[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xhat[off + j];
          }
          mean_dxhat /= n;
          mean_dxhat_xhat /= n;
          for (int j = 0; j < n; ++j) {
            const double dxh = o.grad[off + j] * gd->values[j];
            gx[off + j] += inv_std[i] *
                           (dxh - mean_dxhat - xhat[off + j] * mean_dxhat_xhat);
          }
        }
      }
    });
  }
  return out;
}

// Mean over rows of −log softmax(logits)[target]; one fused, numerically
// stable op so the classifier gradient is exactly softmax − onehot.
inline Tensor cross_entropy_mean(const Tensor& logits,
                                 const std::vector<int>& targets) {
  const int m = logits.rows(), n = logits.cols();
  if (static_cast<int>(targets.size()) != m)
    throw contract_error("cross_entropy_mean: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(m) + " rows");
  for (int t : targets)
    if (t < 0 || t >= n)
      throw contract_error("cross_entropy_mean: target " + std::to_string(t) +
                           " outside [0, " + std::to_string(n) + ")");
  Tensor out(1, 1);
  std::vector<double> probs(static_cast<std::size_t>(m) * n);
  const auto& v = logits.values();
  double loss = 0.0;
  for (int i = 0; i < m; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * n;
    double mx = v[off];
    for (int j = 1; j < n; ++j) mx = std::max(mx, v[off + j]);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      probs[off + j] = std::exp(v[off + j] - mx);
      sum += probs[off + j];
    }
    for (int j = 0; j < n; ++j) probs[off + j] /= sum;
    loss -= (v[off + targets[i]] - mx) - std::log(sum);
  }
  out.data_ptr()->values[0] = loss / m;
  if (logits.requires_grad()) {
    auto ld = logits.data_ptr();
    detail::record(out, {logits},
                   [ld, m, n, targets, probs = std::move(probs)](
                       const detail::TensorData& o) {
      auto& gl = detail::grad_buf(ld);
      const double g = o.grad[0] / m;
      for (int i = 0; i < m; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
          double p = probs[off + j];
          if (j == targets[i]) p -= 1.0;
          gl[off + j] += g * p;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reverse pass.
// ---------------------------------------------------------------------------

// Propagates d(output)/d(everything) through the recorded graph. Leaf
// gradients accumulate across calls; intermediate gradients are rebuilt
// fresh each call, so repeated backward without zeroing doubles leaf grads.
inline void backward(const Tensor& output) {
  if (output.size() != 1)
    throw contract_error("backward: output must be scalar, got " +
                         shape_str(output.rows(), output.cols()));
  if (!output.requires_grad()) return;

  using detail::TensorData;
  std::vector<std::shared_ptr<TensorData>> order;
  std::unordered_set<const TensorData*> seen;
  // iterative post-order DFS over parents
  struct Frame {
    std::shared_ptr<TensorData> d;
    std::size_t next = 0;
  };
  std::vector<Frame> stack;
  stack.push_back({output.data_ptr()});
  seen.insert(output.data_ptr().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.d->node && f.next < f.d->node->parents.size()) {
      auto p = f.d->node->parents[f.next++];
      if (seen.insert(p.get()).second && p->requires_grad)
        stack.push_back({std::move(p)});
    } else {
      order.push_back(f.d);
      stack.pop_back();
    }
  }

  for (auto& d : order) {
    if (d->node)
      d->grad.assign(d->values.size(), 0.0);  // fresh intermediate grads
    else if (d->requires_grad)
      d->ensure_grad();  // leaves accumulate
  }
  output.data_ptr()->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto& d = *it;
    if (d->node && d->node->run) d->node->run(*d);
  }
}

}  // namespace glimpse
