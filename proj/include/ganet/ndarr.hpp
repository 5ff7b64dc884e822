#pragma once

// Dense row-major arrays and a small reverse-mode differentiation engine.
//
// Every operation exists twice: once on plain `Arr` values (pure forward
// evaluation, used by the benchmarks) and once on `Var` handles, which record
// the operation in a `Graph` so gradients can be propagated back with
// `Graph::backward`. Both overloads share the same kernels, so the two paths
// produce bit-identical forward values.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ganet {

using Shape = std::vector<std::size_t>;
using Index = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct GraphError : std::logic_error {
  using std::logic_error::logic_error;
};

class Arr {
 public:
  Arr() : shape_{1}, data_(1, 0.0) {}

  explicit Arr(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    data_.assign(checked_size(shape_), fill);
  }

  Arr(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_size(shape_) != data_.size()) {
      throw ShapeError("Arr: shape " + shape_str(shape_) + " does not match " +
                       std::to_string(data_.size()) + " values");
    }
  }

  static Arr scalar(double v) { return Arr({1}, std::vector<double>{v}); }

  static Arr matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> d;
    d.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("Arr::matrix: ragged rows");
      d.insert(d.end(), row.begin(), row.end());
    }
    return Arr({r, c}, std::move(d));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t last() const { return shape_.back(); }
  // Number of vectors along the last axis.
  std::size_t rows() const { return data_.size() / shape_.back(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_.back() + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_.back() + j]; }

  double item() const {
    if (data_.size() != 1) throw ShapeError("item(): array has shape " + shape_str(shape_));
    return data_[0];
  }

  Arr reshaped(Shape s) const& {
    Arr out = *this;
    out.reshape_in_place(std::move(s));
    return out;
  }
  Arr reshaped(Shape s) && {
    reshape_in_place(std::move(s));
    return std::move(*this);
  }

  bool operator==(const Arr&) const = default;

 private:
  void reshape_in_place(Shape s) {
    if (checked_size(s) != data_.size()) {
      throw ShapeError("reshape: " + shape_str(shape_) + " -> " + shape_str(s));
    }
    shape_ = std::move(s);
  }

  static std::size_t checked_size(const Shape& s) {
    if (s.empty()) throw ShapeError("Arr: rank must be >= 1");
    std::size_t n = 1;
    for (auto e : s) {
      if (e == 0) throw ShapeError("Arr: zero extent in " + shape_str(s));
      n *= e;
    }
    return n;
  }

  Shape shape_;
  std::vector<double> data_;
};

inline double max_abs_diff(const Arr& a, const Arr& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Kernels on plain arrays.
// ---------------------------------------------------------------------------
namespace kernel {

namespace detail {

inline Shape with_tail(const Shape& lead_from, std::size_t drop, std::initializer_list<std::size_t> tail) {
  Shape s(lead_from.begin(), lead_from.end() - static_cast<std::ptrdiff_t>(drop));
  s.insert(s.end(), tail);
  return s;
}

inline void check_batch(const Arr& a, const Arr& b, const char* op) {
  if (a.rank() < 2 || a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
}

// c[m,p] += a[m,k] * b[k,p], tiled over k and p.
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t p) {
  constexpr std::size_t kTile = 64;
  constexpr std::size_t pTile = 256;
  for (std::size_t p0 = 0; p0 < p; p0 += pTile) {
    const std::size_t p1 = std::min(p, p0 + pTile);
    for (std::size_t k0 = 0; k0 < k; k0 += kTile) {
      const std::size_t k1 = std::min(k, k0 + kTile);
      for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * p;
        const double* ai = a + i * k;
        for (std::size_t kk = k0; kk < k1; ++kk) {
          const double aik = ai[kk];
          const double* bk = b + kk * p;
          for (std::size_t j = p0; j < p1; ++j) ci[j] += aik * bk[j];
        }
      }
    }
  }
}

// c[m,p] += a[m,k] * b[p,k]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t p) {
  constexpr std::size_t pTile = 128;
  for (std::size_t p0 = 0; p0 < p; p0 += pTile) {
    const std::size_t p1 = std::min(p, p0 + pTile);
    for (std::size_t i = 0; i < m; ++i) {
      const double* ai = a + i * k;
      double* ci = c + i * p;
      for (std::size_t j = p0; j < p1; ++j) {
        const double* bj = b + j * k;
        double s = 0.0;
        for (std::size_t kk = 0; kk < k; ++kk) s += ai[kk] * bj[kk];
        ci[j] += s;
      }
    }
  }
}

// c[m,p] += a[k,m]^T * b[k,p]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t p) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double* ak = a + kk * m;
    const double* bk = b + kk * p;
    for (std::size_t i = 0; i < m; ++i) {
      const double aki = ak[i];
      double* ci = c + i * p;
      for (std::size_t j = 0; j < p; ++j) ci[j] += aki * bk[j];
    }
  }
}

}  // namespace detail

// a[...,M,K] x b[...,K,P]
inline Arr matmul(const Arr& a, const Arr& b) {
  detail::check_batch(a, b, "matmul");
  const std::size_t r = a.rank();
  const std::size_t m = a.extent(r - 2), k = a.extent(r - 1), p = b.extent(r - 1);
  if (b.extent(r - 2) != k) {
    throw ShapeError("matmul: inner extents differ in " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Arr c(detail::with_tail(a.shape(), 2, {m, p}));
  const std::size_t batch = a.size() / (m * k);
  for (std::size_t s = 0; s < batch; ++s) {
    detail::gemm_nn(a.data().data() + s * m * k, b.data().data() + s * k * p,
                    c.data().data() + s * m * p, m, k, p);
  }
  return c;
}

// a[...,M,K] x b[...,P,K]^T
inline Arr matmul_bt(const Arr& a, const Arr& b) {
  detail::check_batch(a, b, "matmul_bt");
  const std::size_t r = a.rank();
  const std::size_t m = a.extent(r - 2), k = a.extent(r - 1), p = b.extent(r - 2);
  if (b.extent(r - 1) != k) {
    throw ShapeError("matmul_bt: inner extents differ in " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + "^T");
  }
  Arr c(detail::with_tail(a.shape(), 2, {m, p}));
  const std::size_t batch = a.size() / (m * k);
  for (std::size_t s = 0; s < batch; ++s) {
    detail::gemm_nt(a.data().data() + s * m * k, b.data().data() + s * p * k,
                    c.data().data() + s * m * p, m, k, p);
  }
  return c;
}

// a[...,K,M]^T x b[...,K,P]
inline Arr matmul_at(const Arr& a, const Arr& b) {
  detail::check_batch(a, b, "matmul_at");
  const std::size_t r = a.rank();
  const std::size_t k = a.extent(r - 2), m = a.extent(r - 1), p = b.extent(r - 1);
  if (b.extent(r - 2) != k) {
    throw ShapeError("matmul_at: inner extents differ in " + shape_str(a.shape()) + "^T x " +
                     shape_str(b.shape()));
  }
  Arr c(detail::with_tail(a.shape(), 2, {m, p}));
  const std::size_t batch = a.size() / (m * k);
  for (std::size_t s = 0; s < batch; ++s) {
    detail::gemm_tn(a.data().data() + s * k * m, b.data().data() + s * k * p,
                    c.data().data() + s * m * p, m, k, p);
  }
  return c;
}

inline Arr transpose01(const Arr& a) {
  if (a.rank() < 2) throw ShapeError("transpose01: rank too small for " + shape_str(a.shape()));
  const std::size_t d0 = a.extent(0), d1 = a.extent(1);
  const std::size_t inner = a.size() / (d0 * d1);
  Shape s = a.shape();
  std::swap(s[0], s[1]);
  Arr out(std::move(s));
  for (std::size_t i = 0; i < d0; ++i) {
    for (std::size_t j = 0; j < d1; ++j) {
      const double* src = a.data().data() + (i * d1 + j) * inner;
      std::copy(src, src + inner, out.data().data() + (j * d0 + i) * inner);
    }
  }
  return out;
}

inline void check_rows(const Arr& a, const char* op) {
  if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected rank 2, got " + shape_str(a.shape()));
}

inline Arr gather_rows(const Arr& a, std::span<const std::size_t> idx) {
  check_rows(a, "gather_rows");
  const std::size_t n = a.extent(0), c = a.extent(1);
  if (idx.empty()) throw ShapeError("gather_rows: empty index list");
  Arr out({idx.size(), c});
  for (std::size_t m = 0; m < idx.size(); ++m) {
    if (idx[m] >= n) {
      throw IndexError("gather_rows: index " + std::to_string(idx[m]) + " out of range [0," +
                       std::to_string(n) + ")");
    }
    const double* src = a.data().data() + idx[m] * c;
    std::copy(src, src + c, out.data().data() + m * c);
  }
  return out;
}

inline Arr scatter_add_rows(const Arr& a, std::span<const std::size_t> idx, std::size_t n) {
  check_rows(a, "scatter_add_rows");
  if (idx.size() != a.extent(0)) {
    throw ShapeError("scatter_add_rows: " + std::to_string(idx.size()) + " indices for " +
                     shape_str(a.shape()));
  }
  const std::size_t c = a.extent(1);
  Arr out({n, c});
  for (std::size_t m = 0; m < idx.size(); ++m) {
    if (idx[m] >= n) {
      throw IndexError("scatter_add_rows: index " + std::to_string(idx[m]) + " out of range [0," +
                       std::to_string(n) + ")");
    }
    const double* src = a.data().data() + m * c;
    double* dst = out.data().data() + idx[m] * c;
    for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
  }
  return out;
}

inline void check_same(const Arr& a, const Arr& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
}

inline Arr add(const Arr& a, const Arr& b) {
  check_same(a, b, "add");
  Arr out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

inline Arr mul(const Arr& a, const Arr& b) {
  check_same(a, b, "mul");
  Arr out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

inline Arr scale(const Arr& a, double s) {
  Arr out = a;
  for (auto& v : out.data()) v *= s;
  return out;
}

inline void check_row_vector(const Arr& a, const Arr& b, const char* op) {
  const bool ok = (b.rank() == 1 || (b.rank() == 2 && b.extent(0) == 1)) && b.size() == a.last();
  if (!ok) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
}

// a[...,C] * b[C] broadcast over every row of a.
inline Arr bcast_mul_row(const Arr& a, const Arr& b) {
  check_row_vector(a, b, "bcast_mul_row");
  const std::size_t c = a.last();
  Arr out = a;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] *= b[j];
  }
  return out;
}

// a[...,C] * s[...,1]: scale each row by its own scalar.
inline Arr scale_rows(const Arr& a, const Arr& s) {
  if (s.last() != 1 || s.size() != a.rows()) {
    throw ShapeError("scale_rows: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(s.shape()));
  }
  const std::size_t c = a.last();
  Arr out = a;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] *= s[r];
  }
  return out;
}

inline Arr relu(const Arr& a) {
  Arr out = a;
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

inline void softmax_rows_in_place(Arr& a) {
  const std::size_t k = a.last();
  double* d = a.data().data();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double* row = d + r * k;
    const double mx = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < k; ++j) row[j] *= inv;
  }
}

inline Arr softmax_rows(const Arr& a) {
  Arr out = a;
  softmax_rows_in_place(out);
  return out;
}

// Sum of the terms in ascending order; the result depends only on the
// multiset of values, not on their order.
inline double sorted_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double v : terms) s += v;
  return s;
}

// softmax_rows with an order-independent normalizer.
inline Arr softmax_rows_invariant(const Arr& a) {
  Arr out = a;
  const std::size_t k = out.last();
  double* d = out.data().data();
  std::vector<double> terms(k);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double* row = d + r * k;
    const double mx = *std::max_element(row, row + k);
    for (std::size_t j = 0; j < k; ++j) terms[j] = row[j] = std::exp(row[j] - mx);
    const double inv = 1.0 / sorted_sum(terms);
    for (std::size_t j = 0; j < k; ++j) row[j] *= inv;
  }
  return out;
}

// w[1,N] . f[N,C] -> [1,C], each channel summed in sorted order.
inline Arr pool(const Arr& w, const Arr& f) {
  if (w.rank() != 2 || w.extent(0) != 1 || f.rank() != 2 || w.extent(1) != f.extent(0)) {
    throw ShapeError("pool: weights " + shape_str(w.shape()) + " for features " + shape_str(f.shape()));
  }
  const std::size_t n = f.extent(0), c = f.extent(1);
  Arr out({1, c});
  std::vector<double> terms(n);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t j = 0; j < n; ++j) terms[j] = w[j] * f[j * c + ch];
    out[ch] = sorted_sum(terms);
  }
  return out;
}

// y = x W + b over the last axis; W is [Cin,Cout], b is [Cout].
inline Arr pointwise_linear(const Arr& x, const Arr& w, const Arr& b) {
  if (w.rank() != 2 || x.last() != w.extent(0) || b.size() != w.extent(1)) {
    throw ShapeError("pointwise_linear: input " + shape_str(x.shape()) + " vs weight " +
                     shape_str(w.shape()) + " and bias " + shape_str(b.shape()));
  }
  const std::size_t rows = x.rows(), cin = w.extent(0), cout = w.extent(1);
  Shape s = x.shape();
  s.back() = cout;
  Arr y(std::move(s));
  double* yd = y.data().data();
  for (std::size_t r = 0; r < rows; ++r) std::copy(b.data().begin(), b.data().end(), yd + r * cout);
  detail::gemm_nn(x.data().data(), w.data().data(), yd, rows, cin, cout);
  return y;
}

struct LayerNormCache {
  Arr normalized;           // (x - mean) / std
  std::vector<double> inv;  // 1 / std per vector
};

inline Arr layer_norm(const Arr& x, const Arr& gamma, const Arr& beta, double eps,
                      LayerNormCache* cache = nullptr) {
  const std::size_t c = x.last();
  if (gamma.size() != c || beta.size() != c) {
    throw ShapeError("layer_norm: input " + shape_str(x.shape()) + " vs gamma " +
                     shape_str(gamma.shape()) + " and beta " + shape_str(beta.shape()));
  }
  Arr xhat = x;
  std::vector<double> inv(x.rows());
  Arr y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double* v = xhat.data().data() + r * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += v[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (v[j] - mean) * (v[j] - mean);
    var /= static_cast<double>(c);
    inv[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      v[j] = (v[j] - mean) * inv[r];
      y[r * c + j] = v[j] * gamma[j] + beta[j];
    }
  }
  if (cache) *cache = {std::move(xhat), std::move(inv)};
  return y;
}

inline Arr concat_last(const Arr& a, const Arr& b) {
  if (a.rank() != b.rank() || a.rows() != b.rows() ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    throw ShapeError("concat_last: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t ca = a.last(), cb = b.last();
  Shape s = a.shape();
  s.back() = ca + cb;
  Arr out(std::move(s));
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::copy_n(a.data().data() + r * ca, ca, out.data().data() + r * (ca + cb));
    std::copy_n(b.data().data() + r * cb, cb, out.data().data() + r * (ca + cb) + ca);
  }
  return out;
}

inline Arr select_col(const Arr& a, std::size_t col) {
  if (col >= a.last()) {
    throw IndexError("select_col: column " + std::to_string(col) + " out of range for " +
                     shape_str(a.shape()));
  }
  Shape s = a.shape();
  s.back() = 1;
  Arr out(std::move(s));
  for (std::size_t r = 0; r < a.rows(); ++r) out[r] = a[r * a.last() + col];
  return out;
}

inline Arr sum(const Arr& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Arr::scalar(s);
}

inline Arr dot(const Arr& a, const Arr& b) {
  check_same(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return Arr::scalar(s);
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// Differentiation graph.
// ---------------------------------------------------------------------------

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : g_(g), id_(id) {}

  Graph& graph() const { return *g_; }
  std::size_t id() const { return id_; }
  const Arr& value() const;
  const Shape& shape() const { return value().shape(); }
  const Arr& grad() const;

 private:
  Graph* g_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  // Receives the gradient flowing into the node and pushes contributions to
  // its parents through Graph::accumulate.
  using Backward = std::function<void(Graph&, const Arr& out_grad)>;

  struct Node {
    Arr value;
    std::string_view op;
    std::vector<std::size_t> parents;
    Backward backward;
    bool requires_grad = false;
    std::optional<Arr> grad;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Arr v) { return push({std::move(v), "const", {}, {}, false, {}}); }

  Var variable(Arr v) { return push({std::move(v), "leaf", {}, {}, true, {}}); }

  // Leaf bound to an external parameter array; the same array always maps to
  // the same node, so reused weights accumulate a single gradient.
  Var param(const Arr& p) {
    if (auto it = params_.find(&p); it != params_.end()) return Var(this, it->second);
    Var v = variable(p);
    params_.emplace(&p, v.id());
    return v;
  }

  bool has_param(const Arr& p) const { return params_.count(&p) != 0; }

  Var record(Arr value, std::string_view op, std::vector<Var> parents, Backward bw) {
    Node n{std::move(value), op, {}, {}, false, {}};
    n.parents.reserve(parents.size());
    for (const Var& p : parents) {
      if (&p.graph() != this) throw GraphError(std::string(op) + ": operand from another graph");
      n.parents.push_back(p.id());
      n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(bw);
    return push(std::move(n));
  }

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  const Arr& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  void accumulate(std::size_t id, const Arr& delta) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (delta.shape() != n.value.shape()) {
      throw GraphError("gradient shape " + shape_str(delta.shape()) + " for node '" +
                       std::string(n.op) + "' of shape " + shape_str(n.value.shape()));
    }
    if (!n.grad) {
      n.grad = delta;
      return;
    }
    for (std::size_t i = 0; i < delta.size(); ++i) (*n.grad)[i] += delta[i];
  }

  void accumulate(std::size_t id, Arr&& delta) {
    Node& n = nodes_[id];
    if (n.requires_grad && !n.grad && delta.shape() == n.value.shape()) {
      n.grad = std::move(delta);
      return;
    }
    accumulate(id, static_cast<const Arr&>(delta));
  }

  // Seeds d(loss)/d(loss) = 1 and walks nodes in reverse creation order,
  // which is a reverse topological order since parents always precede
  // children. Each reached node's backward runs exactly once.
  void backward(const Var& loss) {
    if (&loss.graph() != this) throw GraphError("backward: loss from another graph");
    const Arr& lv = nodes_[loss.id()].value;
    if (lv.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(lv.shape()));
    for (auto& n : nodes_) n.grad.reset();
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad = Arr(lv.shape(), 1.0);
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.grad || !n.backward) continue;
      for (std::size_t p : n.parents) {
        if (p >= id) throw GraphError("backward: cycle detected at node " + std::to_string(id));
      }
      const Arr g = *n.grad;
      n.backward(*this, g);
    }
  }

  // Gradient of a node after backward; zeros if the node was not reached.
  const Arr& grad(std::size_t id) const {
    Node& n = nodes_.at(id);
    if (!n.grad) {
      n.grad = Arr(n.value.shape(), 0.0);
    }
    return *n.grad;
  }

  Arr grad_of(const Arr& param) const {
    auto it = params_.find(&param);
    if (it == params_.end()) return Arr(param.shape(), 0.0);
    return grad(it->second);
  }

 private:
  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  // grad is a lazily materialized cache, hence mutable.
  mutable std::vector<Node> nodes_;
  std::unordered_map<const Arr*, std::size_t> params_;
};

inline const Arr& Var::value() const { return g_->value(id_); }
inline const Arr& Var::grad() const { return g_->grad(id_); }

// ---------------------------------------------------------------------------
// Operations. Arr overloads evaluate; Var overloads also record.
// ---------------------------------------------------------------------------

inline Arr matmul(const Arr& a, const Arr& b) { return kernel::matmul(a, b); }
inline Var matmul(const Var& a, const Var& b) {
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(kernel::matmul(a.value(), b.value()), "matmul", {a, b},
                          [ia, ib](Graph& g, const Arr& dy) {
                            if (g.requires_grad(ia)) g.accumulate(ia, kernel::matmul_bt(dy, g.value(ib)));
                            if (g.requires_grad(ib)) g.accumulate(ib, kernel::matmul_at(g.value(ia), dy));
                          });
}

// a x b^T; the attention score product.
inline Arr matmul_bt(const Arr& a, const Arr& b) { return kernel::matmul_bt(a, b); }
inline Var matmul_bt(const Var& a, const Var& b) {
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(kernel::matmul_bt(a.value(), b.value()), "matmul_bt", {a, b},
                          [ia, ib](Graph& g, const Arr& dy) {
                            if (g.requires_grad(ia)) g.accumulate(ia, kernel::matmul(dy, g.value(ib)));
                            if (g.requires_grad(ib)) g.accumulate(ib, kernel::matmul_at(dy, g.value(ia)));
                          });
}

inline Arr transpose01(const Arr& a) { return kernel::transpose01(a); }
inline Var transpose01(const Var& a) {
  const std::size_t ia = a.id();
  return a.graph().record(kernel::transpose01(a.value()), "transpose01", {a},
                          [ia](Graph& g, const Arr& dy) { g.accumulate(ia, kernel::transpose01(dy)); });
}

inline Arr reshape(const Arr& a, Shape s) { return a.reshaped(std::move(s)); }
inline Var reshape(const Var& a, Shape s) {
  const std::size_t ia = a.id();
  return a.graph().record(a.value().reshaped(std::move(s)), "reshape", {a},
                          [ia](Graph& g, const Arr& dy) {
                            g.accumulate(ia, dy.reshaped(g.value(ia).shape()));
                          });
}

inline Arr gather_rows(const Arr& a, std::span<const std::size_t> idx) {
  return kernel::gather_rows(a, idx);
}
inline Var gather_rows(const Var& a, const Index& idx) {
  const std::size_t ia = a.id();
  return a.graph().record(kernel::gather_rows(a.value(), idx), "gather_rows", {a},
                          [ia, idx](Graph& g, const Arr& dy) {
                            g.accumulate(ia, kernel::scatter_add_rows(dy, idx, g.value(ia).extent(0)));
                          });
}

inline Arr scatter_add_rows(const Arr& a, std::span<const std::size_t> idx, std::size_t n) {
  return kernel::scatter_add_rows(a, idx, n);
}
inline Var scatter_add_rows(const Var& a, const Index& idx, std::size_t n) {
  const std::size_t ia = a.id();
  return a.graph().record(kernel::scatter_add_rows(a.value(), idx, n), "scatter_add_rows", {a},
                          [ia, idx](Graph& g, const Arr& dy) {
                            g.accumulate(ia, kernel::gather_rows(dy, idx));
                          });
}

enum class EwKind { add, mul, bcast_mul_row };

inline Arr ew(EwKind kind, const Arr& a, const Arr& b) {
  switch (kind) {
    case EwKind::add: return kernel::add(a, b);
    case EwKind::mul: return kernel::mul(a, b);
    case EwKind::bcast_mul_row: return kernel::bcast_mul_row(a, b);
  }
  throw std::invalid_argument("ew: unknown kind");
}

inline Var ew(EwKind kind, const Var& a, const Var& b) {
  const std::size_t ia = a.id(), ib = b.id();
  Arr y = ew(kind, a.value(), b.value());
  switch (kind) {
    case EwKind::add:
      return a.graph().record(std::move(y), "add", {a, b}, [ia, ib](Graph& g, const Arr& dy) {
        g.accumulate(ia, dy);
        g.accumulate(ib, dy);
      });
    case EwKind::mul:
      return a.graph().record(std::move(y), "mul", {a, b}, [ia, ib](Graph& g, const Arr& dy) {
        if (g.requires_grad(ia)) g.accumulate(ia, kernel::mul(dy, g.value(ib)));
        if (g.requires_grad(ib)) g.accumulate(ib, kernel::mul(dy, g.value(ia)));
      });
    case EwKind::bcast_mul_row:
      return a.graph().record(std::move(y), "bcast_mul_row", {a, b}, [ia, ib](Graph& g, const Arr& dy) {
        const Arr& av = g.value(ia);
        const Arr& bv = g.value(ib);
        if (g.requires_grad(ia)) g.accumulate(ia, kernel::bcast_mul_row(dy, bv));
        if (g.requires_grad(ib)) {
          Arr db(bv.shape());
          const std::size_t c = av.last();
          for (std::size_t r = 0; r < av.rows(); ++r) {
            for (std::size_t j = 0; j < c; ++j) db[j] += dy[r * c + j] * av[r * c + j];
          }
          g.accumulate(ib, std::move(db));
        }
      });
  }
  throw std::invalid_argument("ew: unknown kind");
}

template <class T>
T add(const T& a, const T& b) { return ew(EwKind::add, a, b); }
template <class T>
T mul(const T& a, const T& b) { return ew(EwKind::mul, a, b); }
template <class T>
T bcast_mul_row(const T& a, const T& b) { return ew(EwKind::bcast_mul_row, a, b); }

inline Arr scale_rows(const Arr& a, const Arr& s) { return kernel::scale_rows(a, s); }
inline Var scale_rows(const Var& a, const Var& s) {
  const std::size_t ia = a.id(), is = s.id();
  return a.graph().record(kernel::scale_rows(a.value(), s.value()), "scale_rows", {a, s},
                          [ia, is](Graph& g, const Arr& dy) {
                            const Arr& av = g.value(ia);
                            const Arr& sv = g.value(is);
                            if (g.requires_grad(ia)) g.accumulate(ia, kernel::scale_rows(dy, sv));
                            if (g.requires_grad(is)) {
                              Arr ds(sv.shape());
                              const std::size_t c = av.last();
                              for (std::size_t r = 0; r < av.rows(); ++r) {
                                for (std::size_t j = 0; j < c; ++j) ds[r] += dy[r * c + j] * av[r * c + j];
                              }
                              g.accumulate(is, std::move(ds));
                            }
                          });
}

inline Arr relu(const Arr& a) { return kernel::relu(a); }
inline Var relu(const Var& a) {
  const std::size_t ia = a.id();
  return a.graph().record(kernel::relu(a.value()), "relu", {a}, [ia](Graph& g, const Arr& dy) {
    const Arr& x = g.value(ia);
    Arr dx = dy;
    // Subgradient at exactly 0 is 0.
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (!(x[i] > 0.0)) dx[i] = 0.0;
    }
    g.accumulate(ia, std::move(dx));
  });
}

namespace detail {

inline Var record_softmax(const Var& a, Arr y, std::string_view op) {
  const std::size_t ia = a.id();
  const std::size_t iy = a.graph().size();
  return a.graph().record(std::move(y), op, {a}, [ia, iy](Graph& g, const Arr& dy) {
    const Arr& y = g.value(iy);
    const std::size_t k = y.last();
    Arr dx(y.shape());
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += dy[r * k + j] * y[r * k + j];
      for (std::size_t j = 0; j < k; ++j) dx[r * k + j] = y[r * k + j] * (dy[r * k + j] - s);
    }
    g.accumulate(ia, std::move(dx));
  });
}

}  // namespace detail

inline Arr softmax_rows(const Arr& a) { return kernel::softmax_rows(a); }
inline Var softmax_rows(const Var& a) {
  return detail::record_softmax(a, kernel::softmax_rows(a.value()), "softmax_rows");
}

inline Arr softmax_rows_invariant(const Arr& a) { return kernel::softmax_rows_invariant(a); }
inline Var softmax_rows_invariant(const Var& a) {
  return detail::record_softmax(a, kernel::softmax_rows_invariant(a.value()), "softmax_rows_invariant");
}

inline Arr pool(const Arr& w, const Arr& f) { return kernel::pool(w, f); }
inline Var pool(const Var& w, const Var& f) {
  const std::size_t iw = w.id(), iff = f.id();
  return w.graph().record(kernel::pool(w.value(), f.value()), "pool", {w, f},
                          [iw, iff](Graph& g, const Arr& dy) {
                            const Arr& wv = g.value(iw);
                            const Arr& fv = g.value(iff);
                            const std::size_t n = fv.extent(0), c = fv.extent(1);
                            Arr dw(wv.shape()), df(fv.shape());
                            for (std::size_t j = 0; j < n; ++j) {
                              double s = 0.0;
                              for (std::size_t ch = 0; ch < c; ++ch) {
                                s += dy[ch] * fv[j * c + ch];
                                df[j * c + ch] = wv[j] * dy[ch];
                              }
                              dw[j] = s;
                            }
                            g.accumulate(iw, std::move(dw));
                            g.accumulate(iff, std::move(df));
                          });
}

inline Arr pointwise_linear(const Arr& x, const Arr& w, const Arr& b) {
  return kernel::pointwise_linear(x, w, b);
}
inline Var pointwise_linear(const Var& x, const Var& w, const Var& b) {
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  return x.graph().record(
      kernel::pointwise_linear(x.value(), w.value(), b.value()), "pointwise_linear", {x, w, b},
      [ix, iw, ib](Graph& g, const Arr& dy) {
        const Arr& xv = g.value(ix);
        const Arr& wv = g.value(iw);
        const std::size_t rows = xv.rows(), cin = wv.extent(0), cout = wv.extent(1);
        const Arr dy2 = dy.reshaped({rows, cout});
        if (g.requires_grad(ix)) {
          g.accumulate(ix, kernel::matmul_bt(dy2, wv).reshaped(xv.shape()));
        }
        if (g.requires_grad(iw)) g.accumulate(iw, kernel::matmul_at(xv.reshaped({rows, cin}), dy2));
        if (g.requires_grad(ib)) {
          Arr db(g.value(ib).shape());
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < cout; ++j) db[j] += dy2[r * cout + j];
          }
          g.accumulate(ib, std::move(db));
        }
      });
}

inline Arr layer_norm(const Arr& x, const Arr& gamma, const Arr& beta, double eps) {
  return kernel::layer_norm(x, gamma, beta, eps);
}
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  auto cache = std::make_shared<kernel::LayerNormCache>();
  Arr y = kernel::layer_norm(x.value(), gamma.value(), beta.value(), eps, cache.get());
  const std::size_t ix = x.id(), igm = gamma.id(), ibt = beta.id();
  return x.graph().record(std::move(y), "layer_norm", {x, gamma, beta},
                          [ix, igm, ibt, cache](Graph& g, const Arr& dy) {
                            const Arr& xhat = cache->normalized;
                            const Arr& gm = g.value(igm);
                            const std::size_t c = xhat.last();
                            Arr dx(xhat.shape()), dgamma(gm.shape()), dbeta(gm.shape());
                            for (std::size_t r = 0; r < xhat.rows(); ++r) {
                              double mean_d = 0.0, mean_dx = 0.0;
                              for (std::size_t j = 0; j < c; ++j) {
                                const double d = dy[r * c + j] * gm[j];
                                mean_d += d;
                                mean_dx += d * xhat[r * c + j];
                                dgamma[j] += dy[r * c + j] * xhat[r * c + j];
                                dbeta[j] += dy[r * c + j];
                              }
                              mean_d /= static_cast<double>(c);
                              mean_dx /= static_cast<double>(c);
                              for (std::size_t j = 0; j < c; ++j) {
                                const double d = dy[r * c + j] * gm[j];
                                dx[r * c + j] = cache->inv[r] * (d - mean_d - xhat[r * c + j] * mean_dx);
                              }
                            }
                            g.accumulate(ix, std::move(dx));
                            g.accumulate(igm, std::move(dgamma));
                            g.accumulate(ibt, std::move(dbeta));
                          });
}

inline Arr concat_last(const Arr& a, const Arr& b) { return kernel::concat_last(a, b); }
inline Var concat_last(const Var& a, const Var& b) {
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(kernel::concat_last(a.value(), b.value()), "concat_last", {a, b},
                          [ia, ib](Graph& g, const Arr& dy) {
                            const Arr& av = g.value(ia);
                            const Arr& bv = g.value(ib);
                            const std::size_t ca = av.last(), cb = bv.last();
                            Arr da(av.shape()), db(bv.shape());
                            for (std::size_t r = 0; r < av.rows(); ++r) {
                              std::copy_n(dy.data().data() + r * (ca + cb), ca, da.data().data() + r * ca);
                              std::copy_n(dy.data().data() + r * (ca + cb) + ca, cb, db.data().data() + r * cb);
                            }
                            g.accumulate(ia, std::move(da));
                            g.accumulate(ib, std::move(db));
                          });
}

inline Arr select_col(const Arr& a, std::size_t col) { return kernel::select_col(a, col); }
inline Var select_col(const Var& a, std::size_t col) {
  const std::size_t ia = a.id();
  return a.graph().record(kernel::select_col(a.value(), col), "select_col", {a},
                          [ia, col](Graph& g, const Arr& dy) {
                            const Arr& av = g.value(ia);
                            Arr da(av.shape());
                            for (std::size_t r = 0; r < av.rows(); ++r) da[r * av.last() + col] = dy[r];
                            g.accumulate(ia, std::move(da));
                          });
}

inline Arr sum(const Arr& a) { return kernel::sum(a); }
inline Var sum(const Var& a) {
  const std::size_t ia = a.id();
  return a.graph().record(kernel::sum(a.value()), "sum", {a}, [ia](Graph& g, const Arr& dy) {
    g.accumulate(ia, Arr(g.value(ia).shape(), dy[0]));
  });
}

// Inner product with a fixed array; the standard scalar probe for gradient checks.
inline Arr dot(const Arr& a, const Arr& w) { return kernel::dot(a, w); }
inline Var dot(const Var& a, const Arr& w) {
  const std::size_t ia = a.id();
  return a.graph().record(kernel::dot(a.value(), w), "dot", {a}, [ia, w](Graph& g, const Arr& dy) {
    g.accumulate(ia, kernel::scale(w, dy[0]));
  });
}

// Mean over rows of -log softmax(logits)[label].
inline double cross_entropy_value(const Arr& logits, std::span<const std::size_t> labels,
                                  Arr* probs_out = nullptr) {
  kernel::check_rows(logits, "cross_entropy");
  const std::size_t n = logits.extent(0), k = logits.extent(1);
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     shape_str(logits.shape()));
  }
  Arr p = kernel::softmax_rows(logits);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) {
      throw IndexError("cross_entropy: label " + std::to_string(labels[i]) + " out of range [0," +
                       std::to_string(k) + ")");
    }
    const double* row = logits.data().data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    loss += mx + std::log(s) - row[labels[i]];
  }
  if (probs_out) *probs_out = std::move(p);
  return loss / static_cast<double>(n);
}

inline Arr cross_entropy(const Arr& logits, std::span<const std::size_t> labels) {
  return Arr::scalar(cross_entropy_value(logits, labels));
}
inline Var cross_entropy(const Var& logits, const Index& labels) {
  auto probs = std::make_shared<Arr>();
  const double loss = cross_entropy_value(logits.value(), labels, probs.get());
  const std::size_t il = logits.id();
  return logits.graph().record(Arr::scalar(loss), "cross_entropy", {logits},
                               [il, labels, probs](Graph& g, const Arr& dy) {
                                 Arr dz = *probs;
                                 const std::size_t n = dz.extent(0), k = dz.extent(1);
                                 for (std::size_t i = 0; i < n; ++i) dz[i * k + labels[i]] -= 1.0;
                                 g.accumulate(il, kernel::scale(dz, dy[0] / static_cast<double>(n)));
                               });
}

}  // namespace ganet
