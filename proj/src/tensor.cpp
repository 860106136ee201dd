#include "mmt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace mmt {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

namespace {

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) {
    if (d <= 0) throw ShapeError("tensor: non-positive extent in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
  }
}

using Impl = std::shared_ptr<detail::TensorImpl>;

// Adds g into the target's gradient buffer unless it does not require one.
bool wants_grad(const Impl& t) { return t->requires_grad; }

}  // namespace

namespace testhooks {
namespace {
BackwardFault g_fault = BackwardFault::none;
}
void set_backward_fault(BackwardFault fault) { g_fault = fault; }
BackwardFault backward_fault() { return g_fault; }
}  // namespace testhooks

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
  impl_ = std::make_shared<detail::TensorImpl>();
  const auto n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<std::size_t>(n), fill);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  impl_ = std::make_shared<detail::TensorImpl>();
  const auto n = shape_numel(shape);
  if (n != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

std::int64_t Tensor::rows() const {
  if (rank() == 1) return 1;
  if (rank() == 2) return impl_->shape[0];
  throw ShapeError("tensor: rows() on rank " + std::to_string(rank()));
}

std::int64_t Tensor::cols() const {
  if (rank() == 1) return impl_->shape[0];
  if (rank() == 2) return impl_->shape[1];
  throw ShapeError("tensor: cols() on rank " + std::to_string(rank()));
}

bool Tensor::all_finite() const {
  for (double v : impl_->data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ConfigError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ConfigError("backward: loss is not connected to the tape");
  }
  loss.impl()->ensure_grad()[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  clear();
}

// --- helpers for op construction -----------------------------------------

namespace {

Tensor make_out(Shape shape, Tape* tape, std::initializer_list<const Tensor*> inputs) {
  bool rg = false;
  if (tape != nullptr) {
    for (const Tensor* t : inputs) rg = rg || t->requires_grad();
  }
  return Tensor(std::move(shape), 0.0, rg);
}

// Skip backward work when the output never received a gradient.
const std::vector<double>* out_grad(const Impl& out) {
  if (out->grad.empty()) return nullptr;
  return &out->grad;
}

}  // namespace

// --- matmul / transpose ----------------------------------------------------

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  const std::int64_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2) {
    throw ShapeError("matmul: inner extents disagree " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor out = make_out({m, n}, tape, {&a, &b});
  {
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = out.data();
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t kk = 0; kk < k; ++kk) {
        const double av = pa[i * k + kk];
        if (av == 0.0) continue;
        const double* brow = pb + kk * n;
        double* crow = pc + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  if (out.requires_grad()) {
    Impl ia = a.impl(), ib = b.impl(), io = out.impl();
    tape->record([ia, ib, io, m, k, n] {
      const auto* g = out_grad(io);
      if (!g) return;
      const double* pg = g->data();
      if (wants_grad(ia)) {
        double* ga = ia->ensure_grad().data();
        const double* pb = ib->data.data();
        for (std::int64_t i = 0; i < m; ++i) {
          for (std::int64_t kk = 0; kk < k; ++kk) {
            const double* grow = pg + i * n;
            const double* brow = pb + kk * n;
            double s = 0.0;
            for (std::int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            ga[i * k + kk] += s;
          }
        }
      }
      if (wants_grad(ib)) {
        double* gb = ib->ensure_grad().data();
        const double* pa = ia->data.data();
        for (std::int64_t i = 0; i < m; ++i) {
          const double* grow = pg + i * n;
          for (std::int64_t kk = 0; kk < k; ++kk) {
            const double av = pa[i * k + kk];
            if (av == 0.0) continue;
            double* gbrow = gb + kk * n;
            for (std::int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor transpose(Tape* tape, const Tensor& a) {
  require_rank2("transpose", a);
  const std::int64_t r = a.rows(), c = a.cols();
  Tensor out = make_out({c, r}, tape, {&a});
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) out.at(j, i) = a.at(i, j);
  if (out.requires_grad()) {
    Impl ia = a.impl(), io = out.impl();
    tape->record([ia, io, r, c] {
      const auto* g = out_grad(io);
      if (!g || !wants_grad(ia)) return;
      auto& ga = ia->ensure_grad();
      for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) ga[i * c + j] += (*g)[j * r + i];
    });
  }
  return out;
}

// --- elementwise binary ----------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_op(const char* name, Tape* tape, const Tensor& a, const Tensor& b, Fwd fwd,
                 Bwd bwd) {
  require_same_shape(name, a, b);
  Tensor out = make_out(a.shape(), tape, {&a, &b});
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.at(i) = fwd(a.at(i), b.at(i));
  if (out.requires_grad()) {
    Impl ia = a.impl(), ib = b.impl(), io = out.impl();
    tape->record([ia, ib, io, n, bwd] {
      const auto* g = out_grad(io);
      if (!g) return;
      const bool ga = wants_grad(ia), gb = wants_grad(ib);
      if (ga) ia->ensure_grad();
      if (gb) ib->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        const auto [da, db] = bwd(ia->data[i], ib->data[i]);
        if (ga) ia->grad[i] += (*g)[i] * da;
        if (gb) ib->grad[i] += (*g)[i] * db;
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", tape, a, b, [](double x, double y) { return x + y; },
      [](double, double) { return std::pair<double, double>{1.0, 1.0}; });
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", tape, a, b, [](double x, double y) { return x - y; },
      [](double, double) { return std::pair<double, double>{1.0, -1.0}; });
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", tape, a, b, [](double x, double y) { return x * y; },
      [](double x, double y) { return std::pair<double, double>{y, x}; });
}

Tensor divide(Tape* tape, const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", tape, a, b, [](double x, double y) { return x / y; },
      [](double x, double y) { return std::pair<double, double>{1.0 / y, -x / (y * y)}; });
}

Tensor add_rowvec(Tape* tape, const Tensor& m, const Tensor& v) {
  const std::int64_t r = m.rows(), c = m.cols();
  if (v.numel() != c) {
    throw ShapeError("add_rowvec: vector " + shape_str(v.shape()) + " vs matrix " +
                     shape_str(m.shape()));
  }
  Tensor out = make_out(m.shape(), tape, {&m, &v});
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) out.at(i * c + j) = m.at(i * c + j) + v.at(j);
  if (out.requires_grad()) {
    Impl im = m.impl(), iv = v.impl(), io = out.impl();
    tape->record([im, iv, io, r, c] {
      const auto* g = out_grad(io);
      if (!g) return;
      if (wants_grad(im)) {
        auto& gm = im->ensure_grad();
        for (std::size_t i = 0; i < gm.size(); ++i) gm[i] += (*g)[i];
      }
      if (wants_grad(iv)) {
        auto& gv = iv->ensure_grad();
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j) gv[static_cast<std::size_t>(j)] += (*g)[i * c + j];
      }
    });
  }
  return out;
}

Tensor scale(Tape* tape, const Tensor& a, double s) {
  Tensor out = make_out(a.shape(), tape, {&a});
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) * s;
  if (out.requires_grad()) {
    Impl ia = a.impl(), io = out.impl();
    tape->record([ia, io, n, s] {
      const auto* g = out_grad(io);
      if (!g || !wants_grad(ia)) return;
      auto& ga = ia->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += (*g)[i] * s;
    });
  }
  return out;
}

Tensor add_const(Tape* tape, const Tensor& a, double c) {
  Tensor out = make_out(a.shape(), tape, {&a});
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) + c;
  if (out.requires_grad()) {
    Impl ia = a.impl(), io = out.impl();
    tape->record([ia, io, n] {
      const auto* g = out_grad(io);
      if (!g || !wants_grad(ia)) return;
      auto& ga = ia->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += (*g)[i];
    });
  }
  return out;
}

// --- elementwise unary -----------------------------------------------------

namespace {

// dydx receives the output value (all four activations have derivatives
// expressible in the output).
template <typename Fwd, typename Bwd>
Tensor unary_op(Tape* tape, const Tensor& a, Fwd fwd, Bwd dydx, bool sigmoid_fault = false) {
  Tensor out = make_out(a.shape(), tape, {&a});
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.at(i) = fwd(a.at(i));
  if (out.requires_grad()) {
    Impl ia = a.impl(), io = out.impl();
    tape->record([ia, io, n, dydx, sigmoid_fault] {
      const auto* g = out_grad(io);
      if (!g || !wants_grad(ia)) return;
      auto& ga = ia->ensure_grad();
      const bool fault = sigmoid_fault &&
                         testhooks::backward_fault() == testhooks::BackwardFault::sigmoid;
      for (std::int64_t i = 0; i < n; ++i) {
        double d = dydx(io->data[i]);
        if (fault) d *= 1.5;
        ga[i] += (*g)[i] * d;
      }
    });
  }
  return out;
}

}  // namespace

Tensor relu(Tape* tape, const Tensor& a) {
  // Subgradient at 0 is 0.
  return unary_op(
      tape, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double y) { return y > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(Tape* tape, const Tensor& a) {
  return unary_op(
      tape, a,
      [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double y) { return y * (1.0 - y); }, /*sigmoid_fault=*/true);
}

Tensor tanh_op(Tape* tape, const Tensor& a) {
  return unary_op(
      tape, a, [](double x) { return std::tanh(x); }, [](double y) { return 1.0 - y * y; });
}

Tensor sqrt_op(Tape* tape, const Tensor& a) {
  return unary_op(
      tape, a, [](double x) { return std::sqrt(x); },
      [](double y) { return 0.5 / std::max(y, 1e-150); });
}

// --- softmax ---------------------------------------------------------------

Tensor softmax(Tape* tape, const Tensor& x, const Mask* mask) {
  const std::int64_t r = x.rows(), c = x.cols();
  if (mask != nullptr && static_cast<std::int64_t>(mask->size()) != c) {
    throw ShapeError("softmax: mask length " + std::to_string(mask->size()) + " vs row width " +
                     std::to_string(c));
  }
  Tensor out = make_out(x.shape(), tape, {&x});
  for (std::int64_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < c; ++j) {
      if (mask && !(*mask)[static_cast<std::size_t>(j)]) continue;
      mx = std::max(mx, x.at(i * c + j));
    }
    if (!std::isfinite(mx) && mx < 0) {
      throw MaskError("softmax: fully masked row " + std::to_string(i));
    }
    double sum = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      if (mask && !(*mask)[static_cast<std::size_t>(j)]) continue;
      const double e = std::exp(x.at(i * c + j) - mx);
      out.at(i * c + j) = e;
      sum += e;
    }
    for (std::int64_t j = 0; j < c; ++j) {
      if (mask && !(*mask)[static_cast<std::size_t>(j)]) {
        out.at(i * c + j) = 0.0;
      } else {
        out.at(i * c + j) /= sum;
      }
    }
  }
  if (out.requires_grad()) {
    Impl ix = x.impl(), io = out.impl();
    tape->record([ix, io, r, c] {
      const auto* g = out_grad(io);
      if (!g || !wants_grad(ix)) return;
      auto& gx = ix->ensure_grad();
      for (std::int64_t i = 0; i < r; ++i) {
        double dot = 0.0;
        for (std::int64_t j = 0; j < c; ++j) dot += (*g)[i * c + j] * io->data[i * c + j];
        for (std::int64_t j = 0; j < c; ++j) {
          const double y = io->data[i * c + j];
          gx[i * c + j] += y * ((*g)[i * c + j] - dot);
        }
      }
    });
  }
  return out;
}

// --- layer norm --------------------------------------------------------------

Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  const std::int64_t r = x.rows(), c = x.cols();
  if (c < 2) throw ShapeError("layer_norm: needs width >= 2, got " + shape_str(x.shape()));
  if (gain.numel() != c || bias.numel() != c) {
    throw ShapeError("layer_norm: gain/bias width mismatch with " + shape_str(x.shape()));
  }
  Tensor out = make_out(x.shape(), tape, {&x, &gain, &bias});
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(r * c));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(r));
  for (std::int64_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (std::int64_t j = 0; j < c; ++j) mean += x.at(i * c + j);
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      const double d = x.at(i * c + j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(i)] = inv;
    for (std::int64_t j = 0; j < c; ++j) {
      const double xh = (x.at(i * c + j) - mean) * inv;
      (*xhat)[static_cast<std::size_t>(i * c + j)] = xh;
      out.at(i * c + j) = xh * gain.at(j) + bias.at(j);
    }
  }
  if (out.requires_grad()) {
    Impl ix = x.impl(), ig = gain.impl(), ib = bias.impl(), io = out.impl();
    tape->record([ix, ig, ib, io, xhat, inv_std, r, c] {
      const auto* g = out_grad(io);
      if (!g) return;
      if (wants_grad(ig)) {
        auto& gg = ig->ensure_grad();
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j)
            gg[static_cast<std::size_t>(j)] += (*g)[i * c + j] * (*xhat)[i * c + j];
      }
      if (wants_grad(ib)) {
        auto& gb = ib->ensure_grad();
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j) gb[static_cast<std::size_t>(j)] += (*g)[i * c + j];
      }
      if (wants_grad(ix)) {
        auto& gx = ix->ensure_grad();
        for (std::int64_t i = 0; i < r; ++i) {
          double m1 = 0.0, m2 = 0.0;
          for (std::int64_t j = 0; j < c; ++j) {
            const double dxh = (*g)[i * c + j] * ig->data[static_cast<std::size_t>(j)];
            m1 += dxh;
            m2 += dxh * (*xhat)[i * c + j];
          }
          m1 /= static_cast<double>(c);
          m2 /= static_cast<double>(c);
          const double inv = (*inv_std)[static_cast<std::size_t>(i)];
          for (std::int64_t j = 0; j < c; ++j) {
            const double dxh = (*g)[i * c + j] * ig->data[static_cast<std::size_t>(j)];
            gx[i * c + j] += inv * (dxh - m1 - (*xhat)[i * c + j] * m2);
          }
        }
      }
    });
  }
  return out;
}

// --- dropout -----------------------------------------------------------------

Tensor dropout(Tape* tape, const Tensor& x, double rate, bool training, Rng* rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout: rate must lie in [0,1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  if (rng == nullptr) throw ConfigError("dropout: rng required in training mode");
  const std::int64_t n = x.numel();
  const double keep_scale = 1.0 / (1.0 - rate);
  auto keep = std::make_shared<std::vector<std::uint8_t>>(static_cast<std::size_t>(n));
  Tensor out = make_out(x.shape(), tape, {&x});
  for (std::int64_t i = 0; i < n; ++i) {
    const bool k = rng->uniform() >= rate;
    (*keep)[static_cast<std::size_t>(i)] = k;
    out.at(i) = k ? x.at(i) * keep_scale : 0.0;
  }
  if (out.requires_grad()) {
    Impl ix = x.impl(), io = out.impl();
    tape->record([ix, io, keep, n, keep_scale] {
      const auto* g = out_grad(io);
      if (!g || !wants_grad(ix)) return;
      auto& gx = ix->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        if ((*keep)[static_cast<std::size_t>(i)]) gx[i] += (*g)[i] * keep_scale;
      }
    });
  }
  return out;
}

// --- embedding lookup ----------------------------------------------------------

Tensor embedding_lookup(Tape* tape, const Tensor& table, std::span<const std::int32_t> ids,
                        std::int32_t pad_id) {
  require_rank2("embedding_lookup", table);
  const std::int64_t v = table.rows(), d = table.cols();
  const std::int64_t n = static_cast<std::int64_t>(ids.size());
  for (std::int64_t t = 0; t < n; ++t) {
    if (ids[t] < 0 || ids[t] >= v) {
      throw IndexError("embedding_lookup: id " + std::to_string(ids[t]) + " out of range [0," +
                       std::to_string(v) + ") at position " + std::to_string(t));
    }
  }
  Tensor out = make_out({n, d}, tape, {&table});
  for (std::int64_t t = 0; t < n; ++t) {
    if (ids[t] == pad_id) continue;  // PAD contributes exactly zero
    const double* row = table.data() + static_cast<std::int64_t>(ids[t]) * d;
    double* o = out.data() + t * d;
    std::copy(row, row + d, o);
  }
  if (out.requires_grad()) {
    Impl it = table.impl(), io = out.impl();
    std::vector<std::int32_t> ids_copy(ids.begin(), ids.end());
    tape->record([it, io, ids_copy = std::move(ids_copy), d, pad_id] {
      const auto* g = out_grad(io);
      if (!g || !wants_grad(it)) return;
      auto& gt = it->ensure_grad();
      const bool fault =
          testhooks::backward_fault() == testhooks::BackwardFault::embedding_lookup;
      for (std::size_t t = 0; t < ids_copy.size(); ++t) {
        if (ids_copy[t] == pad_id) continue;  // PAD embedding stays frozen
        const std::int64_t base = static_cast<std::int64_t>(ids_copy[t]) * d;
        for (std::int64_t j = 0; j < d; ++j) {
          double contrib = (*g)[static_cast<std::int64_t>(t) * d + j];
          if (fault) contrib *= 1.5;
          gt[base + j] += contrib;
        }
      }
    });
  }
  return out;
}

// --- concat / slice ---------------------------------------------------------

Tensor concat_cols(Tape* tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::int64_t r = parts.front().rows();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    require_rank2("concat_cols", p);
    if (p.rows() != r) throw ShapeError("concat_cols: row count mismatch");
    total += p.cols();
  }
  bool rg = false;
  if (tape) {
    for (const auto& p : parts) rg = rg || p.requires_grad();
  }
  Tensor out({r, total}, 0.0, rg);
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const std::int64_t c = p.cols();
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) out.at(i, off + j) = p.at(i, j);
    off += c;
  }
  if (rg) {
    std::vector<Impl> imps;
    for (const auto& p : parts) imps.push_back(p.impl());
    Impl io = out.impl();
    tape->record([imps, io, r, total] {
      const auto* g = out_grad(io);
      if (!g) return;
      std::int64_t off = 0;
      for (const auto& ip : imps) {
        const std::int64_t c = static_cast<std::int64_t>(ip->shape.back());
        if (wants_grad(ip)) {
          auto& gp = ip->ensure_grad();
          for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < c; ++j) gp[i * c + j] += (*g)[i * total + off + j];
        }
        off += c;
      }
    });
  }
  return out;
}

Tensor concat_rows(Tape* tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::int64_t c = parts.front().cols();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) throw ShapeError("concat_rows: column count mismatch");
    total += p.rows();
  }
  bool rg = false;
  if (tape) {
    for (const auto& p : parts) rg = rg || p.requires_grad();
  }
  Tensor out({total, c}, 0.0, rg);
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const std::int64_t r = p.rows();
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) out.at(off + i, j) = p.at(i * c + j);
    off += r;
  }
  if (rg) {
    std::vector<Impl> imps;
    std::vector<std::int64_t> rows_per;
    for (const auto& p : parts) {
      imps.push_back(p.impl());
      rows_per.push_back(p.rows());
    }
    Impl io = out.impl();
    tape->record([imps, rows_per, io, c] {
      const auto* g = out_grad(io);
      if (!g) return;
      std::int64_t off = 0;
      for (std::size_t pi = 0; pi < imps.size(); ++pi) {
        const std::int64_t r = rows_per[pi];
        if (wants_grad(imps[pi])) {
          auto& gp = imps[pi]->ensure_grad();
          for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < c; ++j) gp[i * c + j] += (*g)[(off + i) * c + j];
        }
        off += r;
      }
    });
  }
  return out;
}

Tensor slice_cols(Tape* tape, const Tensor& x, std::int64_t c0, std::int64_t c1) {
  require_rank2("slice_cols", x);
  const std::int64_t r = x.rows(), c = x.cols();
  if (c0 < 0 || c1 > c || c0 >= c1) {
    throw ShapeError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") out of " + shape_str(x.shape()));
  }
  const std::int64_t w = c1 - c0;
  Tensor out = make_out({r, w}, tape, {&x});
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < w; ++j) out.at(i, j) = x.at(i, c0 + j);
  if (out.requires_grad()) {
    Impl ix = x.impl(), io = out.impl();
    tape->record([ix, io, r, c, c0, w] {
      const auto* g = out_grad(io);
      if (!g || !wants_grad(ix)) return;
      auto& gx = ix->ensure_grad();
      for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < w; ++j) gx[i * c + c0 + j] += (*g)[i * w + j];
    });
  }
  return out;
}

// --- reductions ---------------------------------------------------------------

Tensor sum_all(Tape* tape, const Tensor& x) {
  Tensor out = make_out({1, 1}, tape, {&x});
  double s = 0.0;
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) s += x.at(i);
  out.at(0) = s;
  if (out.requires_grad()) {
    Impl ix = x.impl(), io = out.impl();
    tape->record([ix, io, n] {
      const auto* g = out_grad(io);
      if (!g || !wants_grad(ix)) return;
      auto& gx = ix->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += (*g)[0];
    });
  }
  return out;
}

Tensor mean_all(Tape* tape, const Tensor& x) {
  return scale(tape, sum_all(tape, x), 1.0 / static_cast<double>(x.numel()));
}

// --- gate softmax ----------------------------------------------------------------

Tensor gate_softmax(Tape* tape, const Tensor& g, std::int64_t k) {
  require_rank2("gate_softmax", g);
  const std::int64_t r = g.rows(), kc = g.cols();
  if (k < 1 || kc % k != 0) {
    throw ShapeError("gate_softmax: width " + std::to_string(kc) + " not divisible by k=" +
                     std::to_string(k));
  }
  const std::int64_t d = kc / k;
  Tensor out = make_out(g.shape(), tape, {&g});
  for (std::int64_t i = 0; i < r; ++i) {
    for (std::int64_t j = 0; j < d; ++j) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t t = 0; t < k; ++t) mx = std::max(mx, g.at(i, t * d + j));
      double sum = 0.0;
      for (std::int64_t t = 0; t < k; ++t) {
        const double e = std::exp(g.at(i, t * d + j) - mx);
        out.at(i, t * d + j) = e;
        sum += e;
      }
      for (std::int64_t t = 0; t < k; ++t) out.at(i, t * d + j) /= sum;
    }
  }
  if (out.requires_grad()) {
    Impl ig = g.impl(), io = out.impl();
    tape->record([ig, io, r, d, k, kc] {
      const auto* gr = out_grad(io);
      if (!gr || !wants_grad(ig)) return;
      auto& gg = ig->ensure_grad();
      for (std::int64_t i = 0; i < r; ++i) {
        for (std::int64_t j = 0; j < d; ++j) {
          double dot = 0.0;
          for (std::int64_t t = 0; t < k; ++t) {
            const std::int64_t idx = i * kc + t * d + j;
            dot += (*gr)[idx] * io->data[idx];
          }
          for (std::int64_t t = 0; t < k; ++t) {
            const std::int64_t idx = i * kc + t * d + j;
            gg[idx] += io->data[idx] * ((*gr)[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

// --- gradient checking -------------------------------------------------------------

namespace {

double rel_error(double a, double b, double denom_floor) {
  return std::abs(a - b) / std::max({denom_floor, std::abs(a), std::abs(b)});
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(Tape*, const Tensor&)>& f, Tensor x,
                           double h, double tol, double denom_floor) {
  x.set_requires_grad(true);
  x.zero_grad();
  Tape tape;
  Tensor loss = f(&tape, x);
  if (loss.numel() != 1) throw ConfigError("grad_check: f must return a scalar");
  tape.backward(loss);
  std::vector<double> g = x.grad();

  GradCheckReport report;
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const double save = x.at(i);
    x.at(i) = save + h;
    const double lp = f(nullptr, x).at(0);
    x.at(i) = save - h;
    const double lm = f(nullptr, x).at(0);
    x.at(i) = save;
    const double fd = (lp - lm) / (2.0 * h);
    const double e = rel_error(g[i], fd, denom_floor);
    if (e > report.max_rel_error) {
      report.max_rel_error = e;
      report.worst_index = i;
    }
  }
  report.pass = report.max_rel_error <= tol;
  return report;
}

GradCheckReport grad_check_params(const std::function<Tensor(Tape*)>& loss_fn,
                                  const std::vector<Tensor>& params, double h, double tol,
                                  double denom_floor, int entry_stride) {
  if (entry_stride < 1) entry_stride = 1;
  for (const auto& p : params) {
    if (!p.requires_grad()) throw ConfigError("grad_check_params: parameter without grad");
  }
  for (auto p : params) p.zero_grad();
  Tape tape;
  Tensor loss = loss_fn(&tape);
  if (loss.numel() != 1) throw ConfigError("grad_check_params: loss must be scalar");
  tape.backward(loss);

  std::vector<std::vector<double>> tape_grads;
  tape_grads.reserve(params.size());
  for (auto p : params) tape_grads.push_back(p.grad());

  GradCheckReport report;
  std::int64_t flat = 0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    const std::int64_t n = p.numel();
    for (std::int64_t i = 0; i < n; ++i, ++flat) {
      if (flat % entry_stride != 0) continue;
      const double save = p.at(i);
      p.at(i) = save + h;
      const double lp = loss_fn(nullptr).at(0);
      p.at(i) = save - h;
      const double lm = loss_fn(nullptr).at(0);
      p.at(i) = save;
      const double fd = (lp - lm) / (2.0 * h);
      const double e = rel_error(tape_grads[pi][i], fd, denom_floor);
      if (e > report.max_rel_error) {
        report.max_rel_error = e;
        report.worst_index = flat;
      }
    }
  }
  report.pass = report.max_rel_error <= tol;
  return report;
}

}  // namespace mmt
