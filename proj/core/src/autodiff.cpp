#include "drakes/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace drakes::ad {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

Array::Array(Shape s, double fill) : shape(std::move(s)), values(numel(shape), fill) {}

Array::Array(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  if (values.size() != numel(shape)) {
    throw ShapeError("Array: shape " + to_string(shape) + " does not hold " + std::to_string(values.size()) +
                     " values");
  }
}

double Array::item() const {
  if (values.size() != 1) throw ShapeError("item(): array of shape " + to_string(shape) + " is not a scalar");
  return values[0];
}

bool Array::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

Array& Node::grad_buffer() {
  if (grad.values.empty()) grad = Array(value.shape, 0.0);
  return grad;
}

void Node::accumulate(std::span<const double> g) {
  Array& buf = grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf.values[i] += g[i];
}

Array Gradients::of(const Var& leaf) const {
  auto it = grads_.find(leaf.node());
  if (it == grads_.end()) return Array(leaf.shape(), 0.0);
  return it->second;
}

Var Tape::variable(Array value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->tape = this;
  leaves_.push_back(node);
  return Var(node);
}

Gradients Tape::backward(const Var& loss) {
  if (consumed_) throw std::logic_error("backward(): tape already consumed");
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward(): loss must be a scalar, got shape " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  consumed_ = true;
  Gradients out;
  if (!loss.requires_grad()) {
    return out;  // detached loss: every leaf has zero gradient
  }
  if (loss.node()->tape != this) throw std::logic_error("backward(): loss was recorded on another tape");
  loss.node()->grad_buffer().values[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    Node& n = **it;
    if (n.grad.values.empty() || !n.backward) continue;
    n.backward(n);
  }
  for (const auto& leaf : leaves_) {
    if (!leaf->grad.values.empty()) out.grads_.emplace(leaf.get(), std::move(leaf->grad));
  }
  ops_.clear();
  leaves_.clear();
  return out;
}

Var constant(Array value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(node);
}

Var constant_scalar(double v) { return constant(Array::scalar(v)); }

Var detach(const Var& x) { return constant(x.value()); }

Var make_op(Array value, std::initializer_list<Var> inputs, std::function<void(Node&)> backward) {
  Tape* tape = nullptr;
  for (const Var& in : inputs) {
    if (!in.requires_grad()) continue;
    Tape* t = in.node()->tape;
    if (tape && t != tape) throw std::logic_error("make_op(): inputs live on different tapes");
    tape = t;
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (tape && tape->recording()) {
    node->requires_grad = true;
    node->tape = tape;
    node->inputs.reserve(inputs.size());
    for (const Var& in : inputs) node->inputs.push_back(in.handle());
    node->backward = std::move(backward);
    tape->record(node);
  }
  return Var(node);
}

namespace {

bool live(const Node& n, std::size_t i) { return n.inputs[i]->requires_grad; }

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Flat index into `in` for every flat index of `out`. Empty means identity.
std::vector<std::size_t> broadcast_map(const Shape& out, const Shape& in) {
  if (in == out) return {};
  const std::size_t n = numel(out);
  std::vector<std::size_t> map(n, 0);
  if (numel(in) == 1) return map;
  const std::size_t rank = out.size();
  const std::size_t offset = rank - in.size();
  std::vector<std::size_t> in_stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > offset;) {
    const std::size_t d = in[i - offset];
    in_stride[i] = d == 1 ? 0 : s;
    s *= d;
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t pos = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    map[flat] = pos;
    for (std::size_t i = rank; i-- > 0;) {
      ++idx[i];
      pos += in_stride[i];
      if (idx[i] < out[i]) break;
      pos -= in_stride[i] * idx[i];
      idx[i] = 0;
    }
  }
  return map;
}

inline std::size_t at(const std::vector<std::size_t>& map, std::size_t i) { return map.empty() ? i : map[i]; }

template <class F, class DA, class DB>
Var binary(const Var& a, const Var& b, const char* name, F f, DA dfa, DB dfb) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  auto ma = std::make_shared<std::vector<std::size_t>>(broadcast_map(out_shape, a.shape()));
  auto mb = std::make_shared<std::vector<std::size_t>>(broadcast_map(out_shape, b.shape()));
  Array out(out_shape);
  const auto& av = a.value().values;
  const auto& bv = b.value().values;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[at(*ma, i)], bv[at(*mb, i)]);
  return make_op(std::move(out), {a, b}, [ma, mb, dfa, dfb](Node& n) {
    const auto& av = n.inputs[0]->value.values;
    const auto& bv = n.inputs[1]->value.values;
    const auto& g = n.grad.values;
    const auto& o = n.value.values;
    if (live(n, 0)) {
      auto& ga = n.inputs[0]->grad_buffer().values;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::size_t ia = at(*ma, i), ib = at(*mb, i);
        ga[ia] += g[i] * dfa(av[ia], bv[ib], o[i]);
      }
    }
    if (live(n, 1)) {
      auto& gb = n.inputs[1]->grad_buffer().values;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::size_t ia = at(*ma, i), ib = at(*mb, i);
        gb[ib] += g[i] * dfb(av[ia], bv[ib], o[i]);
      }
    }
  });
}

template <class F, class D>
Var unary(const Var& x, F f, D df) {
  Array out(x.shape());
  const auto& xv = x.value().values;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_op(std::move(out), {x}, [df](Node& n) {
    const auto& xv = n.inputs[0]->value.values;
    const auto& g = n.grad.values;
    const auto& o = n.value.values;
    auto& gx = n.inputs[0]->grad_buffer().values;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += df(g[i], xv[i], o[i]);
  });
}

std::size_t last_dim(const Var& x, const char* op) {
  if (x.shape().empty()) throw ShapeError(std::string(op) + ": scalar input has no last axis");
  return x.shape().back();
}

// C[m,n] += A[m,k] * B[k,n]; every output entry accumulates over k in order,
// so a row's result does not depend on how many rows are processed together.
void gemm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    double* __restrict c0 = C + i * n;
    double* __restrict c1 = c0 + n;
    double* __restrict c2 = c1 + n;
    double* __restrict c3 = c2 + n;
    const double* a = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double a0 = a[p], a1 = a[k + p], a2 = a[2 * k + p], a3 = a[3 * k + p];
      if (a0 == 0.0 && a1 == 0.0 && a2 == 0.0 && a3 == 0.0) continue;
      const double* __restrict b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double bv = b[j];
        c0[j] += a0 * bv;
        c1[j] += a1 * bv;
        c2[j] += a2 * bv;
        c3[j] += a3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    double* __restrict c = C + i * n;
    const double* a = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p];
      if (av == 0.0) continue;
      const double* __restrict b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m,k] += G[m,n] * B[k,n]^T
void gemm_nt(const double* G, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = B[p * n + j];
  gemm_nn(G, bt.data(), C, m, n, k);
}

// C[k,n] += A[m,k]^T * G[m,n]
void gemm_tn(const double* A, const double* G, double* C, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    const double* __restrict g = G + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p];
      if (av == 0.0) continue;
      double* __restrict c = C + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * g[j];
    }
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Var div(const Var& a, const Var& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double o) { return -o / y; });
}

Var maximum(const Var& a, const Var& b) {
  return binary(
      a, b, "maximum", [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y, double) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x >= y ? 0.0 : 1.0; });
}

Var scale(const Var& x, double s) {
  return unary(
      x, [s](double v) { return v * s; }, [s](double g, double, double) { return g * s; });
}

Var add_scalar(const Var& x, double s) {
  return unary(
      x, [s](double v) { return v + s; }, [](double g, double, double) { return g; });
}

Var neg(const Var& x) { return scale(x, -1.0); }

Var exp(const Var& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double g, double, double o) { return g * o; });
}

Var log(const Var& x) {
  // A zero upstream gradient contributes nothing even where x == 0, so that
  // log(0) = -inf entries feeding a zero-probability softmax slot stay finite.
  return unary(
      x, [](double v) { return std::log(v); }, [](double g, double v, double) { return g == 0.0 ? 0.0 : g / v; });
}

Var tanh(const Var& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double g, double, double o) { return g * (1.0 - o * o); });
}

Var softmax(const Var& x) {
  const std::size_t n = last_dim(x, "softmax");
  Array out(x.shape());
  const auto& xv = x.value().values;
  const std::size_t rows = n == 0 ? 0 : xv.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double* o = out.values.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, in[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = in[j] == -std::numeric_limits<double>::infinity() ? 0.0 : std::exp(in[j] - mx);
      z += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  return make_op(std::move(out), {x}, [n, rows](Node& n_) {
    const auto& y = n_.value.values;
    const auto& g = n_.grad.values;
    auto& gx = n_.inputs[0]->grad_buffer().values;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[base + j] * y[base + j];
      for (std::size_t j = 0; j < n; ++j) gx[base + j] += y[base + j] * (g[base + j] - dot);
    }
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values) s += v;
  return make_op(Array::scalar(s), {x}, [](Node& n) {
    const double g = n.grad.values[0];
    for (double& v : n.inputs[0]->grad_buffer().values) v += g;
  });
}

Var mean(const Var& x) {
  if (x.size() == 0) throw ShapeError("mean: empty input");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Var sum_last(const Var& x) {
  const std::size_t n = last_dim(x, "sum_last");
  Shape s = x.shape();
  s.back() = 1;
  Array out(s);
  const auto& xv = x.value().values;
  for (std::size_t r = 0; r < out.size(); ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += xv[r * n + j];
    out[r] = acc;
  }
  return make_op(std::move(out), {x}, [n](Node& node) {
    const auto& g = node.grad.values;
    auto& gx = node.inputs[0]->grad_buffer().values;
    for (std::size_t r = 0; r < g.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[r];
  });
}

Var matmul(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const auto fail = [&] {
    throw ShapeError("matmul: incompatible shapes " + to_string(sa) + " and " + to_string(sb));
  };
  if (sa.size() < 2 || sa.size() > 3 || sb.size() < 2 || sb.size() > 3) fail();
  const std::size_t m = sa[sa.size() - 2], k = sa.back();
  const std::size_t kb = sb[sb.size() - 2], n = sb.back();
  if (k != kb) fail();
  const std::size_t ba = sa.size() == 3 ? sa[0] : 0;
  const std::size_t bb = sb.size() == 3 ? sb[0] : 0;
  if (ba && bb && ba != bb) fail();
  const std::size_t batch = std::max<std::size_t>({ba, bb, 1});
  Shape out_shape = (ba || bb) ? Shape{batch, m, n} : Shape{m, n};
  Array out(out_shape);
  const double* A = a.value().values.data();
  const double* B = b.value().values.data();
  double* C = out.values.data();
  if (!bb) {
    // Batch of A (if any) folds into the row dimension.
    gemm_nn(A, B, C, (ba ? ba : 1) * m, k, n);
  } else {
    for (std::size_t i = 0; i < batch; ++i)
      gemm_nn(A + (ba ? i * m * k : 0), B + i * k * n, C + i * m * n, m, k, n);
  }
  return make_op(std::move(out), {a, b}, [ba, bb, batch, m, k, n](Node& node) {
    const double* A = node.inputs[0]->value.values.data();
    const double* B = node.inputs[1]->value.values.data();
    const double* G = node.grad.values.data();
    if (live(node, 0)) {
      double* GA = node.inputs[0]->grad_buffer().values.data();
      if (!bb) {
        gemm_nt(G, B, GA, (ba ? ba : 1) * m, k, n);
      } else {
        for (std::size_t i = 0; i < batch; ++i) gemm_nt(G + i * m * n, B + i * k * n, GA + (ba ? i * m * k : 0), m, k, n);
      }
    }
    if (live(node, 1)) {
      double* GB = node.inputs[1]->grad_buffer().values.data();
      if (!bb) {
        gemm_tn(A, G, GB, (ba ? ba : 1) * m, k, n);
      } else {
        for (std::size_t i = 0; i < batch; ++i) gemm_tn(A + (ba ? i * m * k : 0), G + i * m * n, GB + i * k * n, m, k, n);
      }
    }
  });
}

Var concat_last(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: no inputs");
  Shape lead = parts[0].shape();
  if (lead.empty()) throw ShapeError("concat_last: scalar input");
  lead.pop_back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    Shape l = p.shape();
    if (l.empty()) throw ShapeError("concat_last: scalar input");
    const std::size_t w = l.back();
    l.pop_back();
    if (l != lead) {
      throw ShapeError("concat_last: leading shapes differ, " + to_string(parts[0].shape()) + " vs " +
                       to_string(p.shape()));
    }
    widths.push_back(w);
    total += w;
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  Array out(out_shape);
  const std::size_t rows = numel(lead);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p].value().values;
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[p], widths[p], out.values.data() + r * total + offset);
    offset += widths[p];
  }
  // make_op takes an initializer_list, so chain pairwise-free by building the node directly.
  Tape* tape = nullptr;
  for (const Var& p : parts)
    if (p.requires_grad()) tape = p.node()->tape;
  auto node = std::make_shared<Node>();
  node->value = std::move(out);
  if (tape && tape->recording()) {
    node->requires_grad = true;
    node->tape = tape;
    for (const Var& p : parts) node->inputs.push_back(p.handle());
    node->backward = [widths, rows, total](Node& n) {
      std::size_t off = 0;
      for (std::size_t p = 0; p < n.inputs.size(); ++p) {
        if (n.inputs[p]->requires_grad) {
          auto& gp = n.inputs[p]->grad_buffer().values;
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < widths[p]; ++j) gp[r * widths[p] + j] += n.grad.values[r * total + off + j];
        }
        off += widths[p];
      }
    };
    tape->record(node);
  }
  return Var(node);
}

Var slice_last(const Var& x, std::size_t begin, std::size_t end) {
  const std::size_t n = last_dim(x, "slice_last");
  if (begin >= end || end > n) {
    throw ShapeError("slice_last: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for shape " + to_string(x.shape()));
  }
  const std::size_t w = end - begin;
  Shape s = x.shape();
  s.back() = w;
  Array out(s);
  const std::size_t rows = x.size() / n;
  const auto& xv = x.value().values;
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(xv.data() + r * n + begin, w, out.values.data() + r * w);
  return make_op(std::move(out), {x}, [n, w, begin, rows](Node& node) {
    auto& gx = node.inputs[0]->grad_buffer().values;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) gx[r * n + begin + j] += node.grad.values[r * w + j];
  });
}

Var index_select(const Var& x, const std::vector<std::size_t>& rows) {
  if (x.shape().empty()) throw ShapeError("index_select: scalar input");
  const std::size_t n0 = x.shape()[0];
  const std::size_t stride = x.size() / std::max<std::size_t>(n0, 1);
  for (std::size_t r : rows)
    if (r >= n0) {
      throw ShapeError("index_select: index " + std::to_string(r) + " out of range for shape " + to_string(x.shape()));
    }
  Shape s = x.shape();
  s[0] = rows.size();
  Array out(s);
  const auto& xv = x.value().values;
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(xv.data() + rows[i] * stride, stride, out.values.data() + i * stride);
  return make_op(std::move(out), {x}, [rows, stride](Node& node) {
    auto& gx = node.inputs[0]->grad_buffer().values;
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < stride; ++j) gx[rows[i] * stride + j] += node.grad.values[i * stride + j];
  });
}

Var reshape(const Var& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  Array out(std::move(shape), x.value().values);
  return make_op(std::move(out), {x}, [](Node& node) { node.inputs[0]->accumulate(node.grad.values); });
}

}  // namespace drakes::ad
