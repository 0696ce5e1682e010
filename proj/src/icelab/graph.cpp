#include "icelab/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "icelab/errors.hpp"

namespace icelab::ad {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool same_size(const Shape& a, const Shape& b) { return shape_size(a) == shape_size(b); }

}  // namespace

Var Graph::push(Shape shape, std::vector<double> value, bool requires_grad) {
  if (nodes_.size() >= std::numeric_limits<std::uint32_t>::max()) {
    throw SizeError("compute graph node limit reached");
  }
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.requires_grad = record_ && requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

bool Graph::any_grad(std::initializer_list<Var> vars) const {
  if (!record_) return false;
  return std::any_of(vars.begin(), vars.end(),
                     [&](Var v) { return nodes_[v.index].requires_grad; });
}

std::size_t Graph::rows_of(Var v) const {
  const auto& s = nodes_[v.index].shape;
  return s.size() == 2 ? s[0] : 1;
}

std::size_t Graph::cols_of(Var v) const {
  const auto& s = nodes_[v.index].shape;
  return s.size() == 2 ? s[1] : shape_size(s);
}

void Graph::require_matrix(Var v, const char* op) const {
  if (nodes_[v.index].shape.size() != 2) {
    throw ShapeError(std::string(op) + " expects a 2-D tensor, got " +
                     shape_string(nodes_[v.index].shape));
  }
}

double Graph::scalar(Var v) const {
  const auto& n = nodes_[v.index];
  if (n.value.size() != 1) {
    throw ShapeError("scalar() on tensor of shape " + shape_string(n.shape));
  }
  return n.value[0];
}

Var Graph::constant(Tensor t) {
  auto values = t.values();
  return push(t.shape(), std::vector<double>(values.begin(), values.end()), false);
}

Var Graph::constant(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size()) {
    throw ShapeError("constant of shape " + shape_string(shape) + " given " +
                     std::to_string(values.size()) + " values");
  }
  return push(std::move(shape), std::move(values), false);
}

Var Graph::leaf(Tensor& t) {
  auto values = t.values();
  Var v = push(t.shape(), std::vector<double>(values.begin(), values.end()), t.requires_grad());
  if (nodes_[v.index].requires_grad) nodes_[v.index].bound = &t;
  return v;
}

Var Graph::detach(Var x) {
  return push(nodes_[x.index].shape, nodes_[x.index].value, false);
}

Var Graph::add(Var a, Var b) {
  if (!same_size(shape(a), shape(b))) {
    throw ShapeError("add: " + shape_string(shape(a)) + " vs " + shape_string(shape(b)));
  }
  const auto& av = nodes_[a.index].value;
  const auto& bv = nodes_[b.index].value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Var o = push(shape(a), std::move(out), any_grad({a, b}));
  if (requires_grad(o)) {
    node(o).backward = [this, a, b, o] {
      const auto& g = nodes_[o.index].grad;
      for (Var p : {a, b}) {
        auto& n = nodes_[p.index];
        if (!n.requires_grad) continue;
        for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
      }
    };
  }
  return o;
}

Var Graph::sub(Var a, Var b) {
  if (!same_size(shape(a), shape(b))) {
    throw ShapeError("sub: " + shape_string(shape(a)) + " vs " + shape_string(shape(b)));
  }
  const auto& av = nodes_[a.index].value;
  const auto& bv = nodes_[b.index].value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  Var o = push(shape(a), std::move(out), any_grad({a, b}));
  if (requires_grad(o)) {
    node(o).backward = [this, a, b, o] {
      const auto& g = nodes_[o.index].grad;
      auto& na = nodes_[a.index];
      auto& nb = nodes_[b.index];
      if (na.requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i];
      if (nb.requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) nb.grad[i] -= g[i];
    };
  }
  return o;
}

Var Graph::mul(Var a, Var b) {
  if (!same_size(shape(a), shape(b))) {
    throw ShapeError("mul: " + shape_string(shape(a)) + " vs " + shape_string(shape(b)));
  }
  const auto& av = nodes_[a.index].value;
  const auto& bv = nodes_[b.index].value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Var o = push(shape(a), std::move(out), any_grad({a, b}));
  if (requires_grad(o)) {
    node(o).backward = [this, a, b, o] {
      const auto& g = nodes_[o.index].grad;
      auto& na = nodes_[a.index];
      auto& nb = nodes_[b.index];
      if (na.requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] * nb.value[i];
      if (nb.requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) nb.grad[i] += g[i] * na.value[i];
    };
  }
  return o;
}

Var Graph::scale(Var a, double factor) {
  const auto& av = nodes_[a.index].value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  Var o = push(shape(a), std::move(out), any_grad({a}));
  if (requires_grad(o)) {
    node(o).backward = [this, a, o, factor] {
      const auto& g = nodes_[o.index].grad;
      auto& na = nodes_[a.index];
      for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] * factor;
    };
  }
  return o;
}

Var Graph::add_row(Var m, Var row) {
  require_matrix(m, "add_row");
  const std::size_t r = rows_of(m), c = cols_of(m);
  if (shape_size(shape(row)) != c) {
    throw ShapeError("add_row: row of " + shape_string(shape(row)) + " for matrix " +
                     shape_string(shape(m)));
  }
  const auto& mv = nodes_[m.index].value;
  const auto& rv = nodes_[row.index].value;
  std::vector<double> out(mv.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = mv[i * c + j] + rv[j];
  Var o = push(shape(m), std::move(out), any_grad({m, row}));
  if (requires_grad(o)) {
    node(o).backward = [this, m, row, o, r, c] {
      const auto& g = nodes_[o.index].grad;
      auto& nm = nodes_[m.index];
      auto& nr = nodes_[row.index];
      if (nm.requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) nm.grad[i] += g[i];
      if (nr.requires_grad)
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) nr.grad[j] += g[i * c + j];
    };
  }
  return o;
}

Var Graph::matmul(Var a, Var b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t n = rows_of(a), k = cols_of(a), m = cols_of(b);
  if (rows_of(b) != k) {
    throw ShapeError("matmul: " + shape_string(shape(a)) + " x " + shape_string(shape(b)));
  }
  const auto& av = nodes_[a.index].value;
  const auto& bv = nodes_[b.index].value;
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  Var o = push({n, m}, std::move(out), any_grad({a, b}));
  if (requires_grad(o)) {
    node(o).backward = [this, a, b, o, n, k, m] {
      const auto& g = nodes_[o.index].grad;
      auto& na = nodes_[a.index];
      auto& nb = nodes_[b.index];
      if (na.requires_grad) {
        // dA = G * B^T
        for (std::size_t i = 0; i < n; ++i) {
          const double* grow = g.data() + i * m;
          for (std::size_t p = 0; p < k; ++p) {
            const double* brow = nb.value.data() + p * m;
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
            na.grad[i * k + p] += acc;
          }
        }
      }
      if (nb.requires_grad) {
        // dB = A^T * G
        for (std::size_t i = 0; i < n; ++i) {
          const double* grow = g.data() + i * m;
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = na.value[i * k + p];
            if (aip == 0.0) continue;
            double* bgrow = nb.grad.data() + p * m;
            for (std::size_t j = 0; j < m; ++j) bgrow[j] += aip * grow[j];
          }
        }
      }
    };
  }
  return o;
}

Var Graph::matmul_nt(Var a, Var b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t n = rows_of(a), k = cols_of(a), m = rows_of(b);
  if (cols_of(b) != k) {
    throw ShapeError("matmul_nt: " + shape_string(shape(a)) + " x " + shape_string(shape(b)) +
                     "^T");
  }
  const auto& av = nodes_[a.index].value;
  const auto& bv = nodes_[b.index].value;
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += av[i * k + p] * bv[j * k + p];
      out[i * m + j] = acc;
    }
  Var o = push({n, m}, std::move(out), any_grad({a, b}));
  if (requires_grad(o)) {
    node(o).backward = [this, a, b, o, n, k, m] {
      const auto& g = nodes_[o.index].grad;
      auto& na = nodes_[a.index];
      auto& nb = nodes_[b.index];
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const double gij = g[i * m + j];
          if (gij == 0.0) continue;
          if (na.requires_grad)
            for (std::size_t p = 0; p < k; ++p) na.grad[i * k + p] += gij * nb.value[j * k + p];
          if (nb.requires_grad)
            for (std::size_t p = 0; p < k; ++p) nb.grad[j * k + p] += gij * na.value[i * k + p];
        }
    };
  }
  return o;
}

Var Graph::tanh(Var a) {
  const auto& av = nodes_[a.index].value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
  Var o = push(shape(a), std::move(out), any_grad({a}));
  if (requires_grad(o)) {
    node(o).backward = [this, a, o] {
      const auto& g = nodes_[o.index].grad;
      const auto& y = nodes_[o.index].value;
      auto& na = nodes_[a.index];
      for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] * (1.0 - y[i] * y[i]);
    };
  }
  return o;
}

Var Graph::gelu(Var a) {
  // tanh approximation
  constexpr double kC = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double kA = 0.044715;
  const auto& av = nodes_[a.index].value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = av[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
  }
  Var o = push(shape(a), std::move(out), any_grad({a}));
  if (requires_grad(o)) {
    node(o).backward = [this, a, o] {
      const auto& g = nodes_[o.index].grad;
      auto& na = nodes_[a.index];
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = na.value[i];
        const double t = std::tanh(kC * (x + kA * x * x * x));
        const double dt = (1.0 - t * t) * kC * (1.0 + 3.0 * kA * x * x);
        na.grad[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * x * dt);
      }
    };
  }
  return o;
}

Var Graph::layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  require_matrix(x, "layer_norm_rows");
  const std::size_t r = rows_of(x), c = cols_of(x);
  if (shape_size(shape(gain)) != c || shape_size(shape(bias)) != c) {
    throw ShapeError("layer_norm_rows: gain/bias must have " + std::to_string(c) + " entries");
  }
  const auto& xv = nodes_[x.index].value;
  const auto& gv = nodes_[gain.index].value;
  const auto& bv = nodes_[bias.index].value;
  std::vector<double> out(r * c);
  std::vector<double> xhat(r * c);
  std::vector<double> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xv[i * c + j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xv[i * c + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (xv[i * c + j] - mean) * inv_std[i];
      out[i * c + j] = xhat[i * c + j] * gv[j] + bv[j];
    }
  }
  Var o = push(shape(x), std::move(out), any_grad({x, gain, bias}));
  if (requires_grad(o)) {
    node(o).backward = [this, x, gain, bias, o, r, c, xhat = std::move(xhat),
                        inv_std = std::move(inv_std)] {
      const auto& g = nodes_[o.index].grad;
      auto& nx = nodes_[x.index];
      auto& ng = nodes_[gain.index];
      auto& nb = nodes_[bias.index];
      for (std::size_t i = 0; i < r; ++i) {
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          const double gij = g[i * c + j];
          if (ng.requires_grad) ng.grad[j] += gij * xhat[i * c + j];
          if (nb.requires_grad) nb.grad[j] += gij;
          const double dxhat = gij * ng.value[j];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat[i * c + j];
        }
        if (!nx.requires_grad) continue;
        const double inv_c = 1.0 / static_cast<double>(c);
        for (std::size_t j = 0; j < c; ++j) {
          const double dxhat = g[i * c + j] * ng.value[j];
          nx.grad[i * c + j] += inv_std[i] * (dxhat - inv_c * sum_dxhat -
                                              xhat[i * c + j] * inv_c * sum_dxhat_xhat);
        }
      }
    };
  }
  return o;
}

Var Graph::causal_softmax_rows(Var scores) {
  require_matrix(scores, "causal_softmax_rows");
  const std::size_t r = rows_of(scores), c = cols_of(scores);
  const auto& sv = nodes_[scores.index].value;
  std::vector<double> out(r * c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t upto = std::min(c, i + 1);
    double mx = kNegInf;
    for (std::size_t j = 0; j < upto; ++j) mx = std::max(mx, sv[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < upto; ++j) {
      out[i * c + j] = std::exp(sv[i * c + j] - mx);
      z += out[i * c + j];
    }
    for (std::size_t j = 0; j < upto; ++j) out[i * c + j] /= z;
  }
  Var o = push(shape(scores), std::move(out), any_grad({scores}));
  if (requires_grad(o)) {
    node(o).backward = [this, scores, o, r, c] {
      const auto& g = nodes_[o.index].grad;
      const auto& y = nodes_[o.index].value;
      auto& ns = nodes_[scores.index];
      for (std::size_t i = 0; i < r; ++i) {
        const std::size_t upto = std::min(c, i + 1);
        double dot = 0.0;
        for (std::size_t j = 0; j < upto; ++j) dot += g[i * c + j] * y[i * c + j];
        for (std::size_t j = 0; j < upto; ++j)
          ns.grad[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
      }
    };
  }
  return o;
}

Var Graph::log_softmax_rows(Var logits) {
  require_matrix(logits, "log_softmax_rows");
  const std::size_t r = rows_of(logits), c = cols_of(logits);
  const auto& lv = nodes_[logits.index].value;
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = kNegInf;
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, lv[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(lv[i * c + j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = lv[i * c + j] - lse;
  }
  Var o = push(shape(logits), std::move(out), any_grad({logits}));
  if (requires_grad(o)) {
    node(o).backward = [this, logits, o, r, c] {
      const auto& g = nodes_[o.index].grad;
      const auto& y = nodes_[o.index].value;
      auto& nl = nodes_[logits.index];
      for (std::size_t i = 0; i < r; ++i) {
        double gsum = 0.0;
        for (std::size_t j = 0; j < c; ++j) gsum += g[i * c + j];
        for (std::size_t j = 0; j < c; ++j)
          nl.grad[i * c + j] += g[i * c + j] - std::exp(y[i * c + j]) * gsum;
      }
    };
  }
  return o;
}

Var Graph::gather_rows(Var table, std::span<const int> rows) {
  require_matrix(table, "gather_rows");
  const std::size_t tr = rows_of(table), c = cols_of(table);
  const auto& tv = nodes_[table.index].value;
  std::vector<double> out(rows.size() * c);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= tr) {
      throw ShapeError("gather_rows: index " + std::to_string(rows[i]) + " outside " +
                       std::to_string(tr) + " rows");
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(rows[i] * c), c,
                out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  Var o = push({rows.size(), c}, std::move(out), any_grad({table}));
  if (requires_grad(o)) {
    node(o).backward = [this, table, o, c, idx = std::vector<int>(rows.begin(), rows.end())] {
      const auto& g = nodes_[o.index].grad;
      auto& nt = nodes_[table.index];
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) nt.grad[idx[i] * c + j] += g[i * c + j];
    };
  }
  return o;
}

Var Graph::slice_rows(Var m, std::size_t begin, std::size_t end) {
  require_matrix(m, "slice_rows");
  const std::size_t r = rows_of(m), c = cols_of(m);
  if (begin > end || end > r) throw ShapeError("slice_rows: bad range");
  const auto& mv = nodes_[m.index].value;
  std::vector<double> out(mv.begin() + static_cast<std::ptrdiff_t>(begin * c),
                          mv.begin() + static_cast<std::ptrdiff_t>(end * c));
  Var o = push({end - begin, c}, std::move(out), any_grad({m}));
  if (requires_grad(o)) {
    node(o).backward = [this, m, o, begin, c] {
      const auto& g = nodes_[o.index].grad;
      auto& nm = nodes_[m.index];
      for (std::size_t i = 0; i < g.size(); ++i) nm.grad[begin * c + i] += g[i];
    };
  }
  return o;
}

Var Graph::slice_cols(Var m, std::size_t begin, std::size_t end) {
  require_matrix(m, "slice_cols");
  const std::size_t r = rows_of(m), c = cols_of(m);
  if (begin > end || end > c) throw ShapeError("slice_cols: bad range");
  const std::size_t w = end - begin;
  const auto& mv = nodes_[m.index].value;
  std::vector<double> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = mv[i * c + begin + j];
  Var o = push({r, w}, std::move(out), any_grad({m}));
  if (requires_grad(o)) {
    node(o).backward = [this, m, o, r, c, w, begin] {
      const auto& g = nodes_[o.index].grad;
      auto& nm = nodes_[m.index];
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) nm.grad[i * c + begin + j] += g[i * w + j];
    };
  }
  return o;
}

Var Graph::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  for (Var p : parts) require_matrix(p, "concat_cols");
  const std::size_t r = rows_of(parts[0]);
  std::size_t c = 0;
  bool grad = false;
  for (Var p : parts) {
    if (rows_of(p) != r) throw ShapeError("concat_cols: row mismatch");
    c += cols_of(p);
    grad = grad || (record_ && requires_grad(p));
  }
  std::vector<double> out(r * c);
  std::size_t off = 0;
  for (Var p : parts) {
    const std::size_t w = cols_of(p);
    const auto& pv = nodes_[p.index].value;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * c + off + j] = pv[i * w + j];
    off += w;
  }
  Var o = push({r, c}, std::move(out), grad);
  if (requires_grad(o)) {
    node(o).backward = [this, o, r, c, ps = std::vector<Var>(parts.begin(), parts.end())] {
      const auto& g = nodes_[o.index].grad;
      std::size_t off = 0;
      for (Var p : ps) {
        auto& np = nodes_[p.index];
        const std::size_t w = cols_of(p);
        if (np.requires_grad)
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) np.grad[i * w + j] += g[i * c + off + j];
        off += w;
      }
    };
  }
  return o;
}

Var Graph::pick(Var m, std::span<const std::pair<std::size_t, std::size_t>> positions) {
  const std::size_t r = rows_of(m), c = cols_of(m);
  const auto& mv = nodes_[m.index].value;
  std::vector<double> out(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const auto [pr, pc] = positions[i];
    if (pr >= r || pc >= c) throw ShapeError("pick: position outside tensor");
    out[i] = mv[pr * c + pc];
  }
  Var o = push({positions.size()}, std::move(out), any_grad({m}));
  if (requires_grad(o)) {
    node(o).backward = [this, m, o, c,
                        pos = std::vector<std::pair<std::size_t, std::size_t>>(
                            positions.begin(), positions.end())] {
      const auto& g = nodes_[o.index].grad;
      auto& nm = nodes_[m.index];
      for (std::size_t i = 0; i < pos.size(); ++i)
        nm.grad[pos[i].first * c + pos[i].second] += g[i];
    };
  }
  return o;
}

Var Graph::sum(Var a) {
  const auto& av = nodes_[a.index].value;
  double s = 0.0;
  for (double v : av) s += v;
  Var o = push({}, {s}, any_grad({a}));
  if (requires_grad(o)) {
    node(o).backward = [this, a, o] {
      const double g = nodes_[o.index].grad[0];
      auto& na = nodes_[a.index];
      for (double& x : na.grad) x += g;
    };
  }
  return o;
}

Var Graph::kl_onehot_weighted(Var target_log_weights, Var model_log_probs) {
  if (shape_size(shape(target_log_weights)) != shape_size(shape(model_log_probs))) {
    throw ShapeError("kl_onehot_weighted: " + shape_string(shape(target_log_weights)) + " vs " +
                     shape_string(shape(model_log_probs)));
  }
  if (requires_grad(target_log_weights)) {
    throw ContractViolation("kl_onehot_weighted: target weights must be detached");
  }
  const auto& tv = nodes_[target_log_weights.index].value;
  const auto& mv = nodes_[model_log_probs.index].value;
  double s = 0.0;
  for (std::size_t i = 0; i < tv.size(); ++i) {
    if (tv[i] == kNegInf) continue;  // 0 * log 0 = 0
    s += std::exp(tv[i]) * (tv[i] - mv[i]);
  }
  Var o = push({}, {s}, any_grad({model_log_probs}));
  if (requires_grad(o)) {
    node(o).backward = [this, target_log_weights, model_log_probs, o] {
      const double g = nodes_[o.index].grad[0];
      const auto& t = nodes_[target_log_weights.index].value;
      auto& nm = nodes_[model_log_probs.index];
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] == kNegInf) continue;
        nm.grad[i] -= g * std::exp(t[i]);
      }
    };
  }
  return o;
}

void Graph::backward(Var loss) {
  if (shape_size(shape(loss)) != 1) {
    throw ContractViolation("backward: loss must be scalar, got " + shape_string(shape(loss)));
  }
  if (backward_done_) throw ContractViolation("backward: already run on this graph");
  backward_done_ = true;
  if (!requires_grad(loss)) return;
  for (std::size_t i = 0; i <= loss.index; ++i) {
    auto& n = nodes_[i];
    if (n.requires_grad) n.grad.assign(n.value.size(), 0.0);
  }
  nodes_[loss.index].grad[0] = 1.0;
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad) continue;
    if (n.backward) n.backward();
    if (n.bound) n.bound->accumulate_grad(n.grad);
  }
}

}  // namespace icelab::ad
