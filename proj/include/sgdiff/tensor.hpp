#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sgdiff/common.hpp"
#include "sgdiff/rng.hpp"

namespace sgdiff {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major tensor with value semantics over shared storage. A tensor
// with requires_grad owns a persistent gradient accumulator of the same shape;
// backward() adds into it, zero_grad() clears it.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(shape_numel(shape_),
                                                    quantize(fill))) {}

  static Tensor from_data(Shape shape, std::vector<double> values) {
    SG_CHECK(shape_numel(shape) == values.size(),
             "tensor: data length ", values.size(),
             " does not match shape ", shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    for (auto& v : values) v = quantize(v);
    t.data_ = std::make_shared<std::vector<double>>(std::move(values));
    return t;
  }

  static Tensor scalar(double v) { return from_data({1}, {v}); }

  static Tensor randn(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = quantize(rng.normal());
    return t;
  }

  static Tensor rand_uniform(Shape shape, double lo, double hi, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = quantize(rng.uniform(lo, hi));
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_ ? data_->size() : 0; }
  bool defined() const { return static_cast<bool>(data_); }

  std::vector<double>& data() { return *data_; }
  const std::vector<double>& cdata() const { return *data_; }

  double at(std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t r, std::size_t c) const {
    return (*data_)[r * shape_[1] + c];
  }

  bool requires_grad() const { return static_cast<bool>(grad_); }

  void set_requires_grad(bool b) {
    if (b && !grad_) grad_ = std::make_shared<std::vector<double>>(numel(), 0.0);
    if (!b) grad_.reset();
  }

  std::vector<double>& grad() {
    SG_CHECK(grad_, "tensor: gradient requested but requires_grad is off");
    return *grad_;
  }
  const std::vector<double>& cgrad() const {
    SG_CHECK(grad_, "tensor: gradient requested but requires_grad is off");
    return *grad_;
  }
  std::shared_ptr<std::vector<double>> grad_ptr() const { return grad_; }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<double>>(*data_);
    return t;
  }

  // Storage identity; used by the tape to recognize repeated inputs.
  const void* id() const { return data_.get(); }
  std::shared_ptr<const std::vector<double>> data_ptr() const { return data_; }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  std::shared_ptr<std::vector<double>> grad_;
};

// Reverse-mode tape. Ops append nodes in evaluation order, so the node list is
// already a valid topological order for the backward sweep. Ops record only
// when called with a non-null tape and at least one tracked input; evaluation
// without a tape is plain arithmetic.
class Tape {
 public:
  using ParentGrads = std::vector<std::vector<double>*>;
  using BackwardFn =
      std::function<void(const std::vector<double>& out_grad, ParentGrads&)>;

  struct Node {
    std::shared_ptr<const std::vector<double>> out_data;  // keeps id stable
    std::shared_ptr<std::vector<double>> leaf_grad;       // leaves only
    Shape shape;
    std::vector<int> parents;
    BackwardFn backward;  // empty for leaves
  };

  bool tracks(const Tensor& t) const {
    return t.requires_grad() || index_.count(t.id()) > 0;
  }

  int node_of(const Tensor& t) const {
    auto it = index_.find(t.id());
    return it == index_.end() ? -1 : it->second;
  }

  std::size_t size() const { return nodes_.size(); }

  int ensure_leaf(const Tensor& t) {
    int id = node_of(t);
    if (id >= 0) return id;
    SG_CHECK(t.requires_grad(), "tape: leaf registration requires grad");
    Node n;
    n.out_data = t.data_ptr();
    n.leaf_grad = t.grad_ptr();
    n.shape = t.shape();
    nodes_.push_back(std::move(n));
    id = static_cast<int>(nodes_.size()) - 1;
    index_[t.id()] = id;
    return id;
  }

  // Registers `out` as the result of an op over `inputs`. Untracked inputs
  // become -1 parents and receive no gradient.
  void record(const Tensor& out, std::initializer_list<const Tensor*> inputs,
              BackwardFn fn) {
    Node n;
    n.out_data = out.data_ptr();
    n.shape = out.shape();
    for (const Tensor* in : inputs)
      n.parents.push_back(tracks(*in) ? ensure_leaf_or_node(*in) : -1);
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    index_[out.id()] = static_cast<int>(nodes_.size()) - 1;
  }

  // Same as record() for a dynamic operand list (concat).
  void record_multi(const Tensor& out, const std::vector<Tensor>& inputs,
                    BackwardFn fn) {
    Node n;
    n.out_data = out.data_ptr();
    n.shape = out.shape();
    for (const Tensor& in : inputs)
      n.parents.push_back(tracks(in) ? ensure_leaf_or_node(in) : -1);
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    index_[out.id()] = static_cast<int>(nodes_.size()) - 1;
  }

  // Populates leaf gradient accumulators with d(loss)/d(leaf). Repeated calls
  // without zero_grad accumulate.
  void backward(const Tensor& loss) {
    SG_CHECK(!nodes_.empty(), "backward: tape is empty");
    SG_CHECK(loss.numel() == 1, "backward: loss must be scalar, got shape ",
             shape_str(loss.shape()));
    const int root = node_of(loss);
    SG_CHECK(root >= 0, "backward: loss tensor is not recorded on this tape");

    std::vector<std::vector<double>> bufs(nodes_.size());
    bufs[root].assign(1, 1.0);
    for (int i = root; i >= 0; --i) {
      if (bufs[i].empty()) continue;
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.backward) {
        if (n.leaf_grad) {
          auto& acc = *n.leaf_grad;
          const auto& g = bufs[i];
          for (std::size_t k = 0; k < acc.size(); ++k)
            acc[k] = quantize(acc[k] + g[k]);
        }
        bufs[i].clear();
        continue;
      }
      ParentGrads pgs(n.parents.size(), nullptr);
      for (std::size_t p = 0; p < n.parents.size(); ++p) {
        const int pid = n.parents[p];
        if (pid < 0) continue;
        auto& pbuf = bufs[static_cast<std::size_t>(pid)];
        if (pbuf.empty())
          pbuf.assign(shape_numel(nodes_[static_cast<std::size_t>(pid)].shape),
                      0.0);
        pgs[p] = &pbuf;
      }
      n.backward(bufs[i], pgs);
      bufs[i].clear();
    }
  }

 private:
  int ensure_leaf_or_node(const Tensor& t) {
    const int id = node_of(t);
    return id >= 0 ? id : ensure_leaf(t);
  }

  std::vector<Node> nodes_;
  std::unordered_map<const void*, int> index_;
};

inline void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

namespace detail {

inline bool want_record(Tape* tape, std::initializer_list<const Tensor*> ins) {
  if (!tape) return false;
  for (const Tensor* t : ins)
    if (tape->tracks(*t)) return true;
  return false;
}

inline void axpy(std::vector<double>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// C(MxN) += op(A) * op(B) with optional transposes on the stored operands.
inline void mm_accum(const double* a, bool ta, const double* b, bool tb,
                     std::size_t m, std::size_t k, std::size_t n, double* c) {
  if (!ta && !tb) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[i * k + p];
        if (av == 0.0) continue;
        const double* brow = b + p * n;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
  } else if (!ta && tb) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double* arow = a + i * k;
        const double* brow = b + j * k;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        c[i * n + j] += acc;
      }
  } else if (ta && !tb) {
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t i = 0; i < m; ++i) {
        const double av = a[p * m + i];
        if (av == 0.0) continue;
        const double* brow = b + p * n;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
  } else {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[j * k + p];
        c[i * n + j] += acc;
      }
  }
}

}  // namespace detail

// out = op(a) @ op(b); 2-D operands only, transposes resolved by flags.
inline Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b,
                     bool trans_a = false, bool trans_b = false) {
  SG_CHECK(a.rank() == 2 && b.rank() == 2, "matmul: expects 2-D operands, got ",
           shape_str(a.shape()), " and ", shape_str(b.shape()));
  const std::size_t m = trans_a ? a.shape()[1] : a.shape()[0];
  const std::size_t ka = trans_a ? a.shape()[0] : a.shape()[1];
  const std::size_t kb = trans_b ? b.shape()[1] : b.shape()[0];
  const std::size_t n = trans_b ? b.shape()[0] : b.shape()[1];
  SG_CHECK(ka == kb, "matmul: inner dimensions disagree, ",
           shape_str(a.shape()), (trans_a ? "^T" : ""), " vs ",
           shape_str(b.shape()), (trans_b ? "^T" : ""));

  Tensor out(Shape{m, n});
  detail::mm_accum(a.cdata().data(), trans_a, b.cdata().data(), trans_b, m, ka,
                   n, out.data().data());
  for (auto& v : out.data()) v = quantize(v);

  if (detail::want_record(tape, {&a, &b})) {
    const Tensor asnap = a;
    const Tensor bsnap = b;
    const std::size_t K = ka;
    tape->record(out, {&a, &b},
                 [asnap, bsnap, m, K, n, trans_a, trans_b](
                     const std::vector<double>& g, Tape::ParentGrads& pg) {
                   // dA = g @ B^T (layout-adjusted), dB = A^T @ g
                   if (pg[0]) {
                     if (!trans_a)
                       detail::mm_accum(g.data(), false, bsnap.cdata().data(),
                                        !trans_b, m, n, K, pg[0]->data());
                     else
                       detail::mm_accum(bsnap.cdata().data(), trans_b, g.data(),
                                        true, K, n, m, pg[0]->data());
                   }
                   if (pg[1]) {
                     if (!trans_b)
                       detail::mm_accum(asnap.cdata().data(), !trans_a,
                                        g.data(), false, K, m, n,
                                        pg[1]->data());
                     else
                       detail::mm_accum(g.data(), true, asnap.cdata().data(),
                                        trans_a, n, m, K, pg[1]->data());
                   }
                 });
  }
  return out;
}

namespace detail {

template <typename Fwd, typename Bwd>
Tensor binary_elementwise(Tape* tape, const Tensor& a, const Tensor& b,
                          const char* name, Fwd fwd, Bwd bwd) {
  SG_CHECK(a.shape() == b.shape(), name, ": shape mismatch ",
           shape_str(a.shape()), " vs ", shape_str(b.shape()));
  Tensor out(a.shape());
  const auto& x = a.cdata();
  const auto& y = b.cdata();
  auto& o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = quantize(fwd(x[i], y[i]));
  if (want_record(tape, {&a, &b})) {
    const Tensor asnap = a, bsnap = b;
    tape->record(out, {&a, &b},
                 [asnap, bsnap, bwd](const std::vector<double>& g,
                                     Tape::ParentGrads& pg) {
                   const auto& x = asnap.cdata();
                   const auto& y = bsnap.cdata();
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     auto [da, db] = bwd(x[i], y[i]);
                     if (pg[0]) (*pg[0])[i] += da * g[i];
                     if (pg[1]) (*pg[1])[i] += db * g[i];
                   }
                 });
  }
  return out;
}

template <typename Fwd, typename Bwd>
Tensor unary_elementwise(Tape* tape, const Tensor& a, Fwd fwd, Bwd bwd) {
  Tensor out(a.shape());
  const auto& x = a.cdata();
  auto& o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = quantize(fwd(x[i]));
  if (want_record(tape, {&a})) {
    const Tensor asnap = a, osnap = out;
    tape->record(out, {&a},
                 [asnap, osnap, bwd](const std::vector<double>& g,
                                     Tape::ParentGrads& pg) {
                   if (!pg[0]) return;
                   const auto& x = asnap.cdata();
                   const auto& y = osnap.cdata();
                   for (std::size_t i = 0; i < g.size(); ++i)
                     (*pg[0])[i] += bwd(x[i], y[i]) * g[i];
                 });
  }
  return out;
}

}  // namespace detail

inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  return detail::binary_elementwise(
      tape, a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return std::pair<double, double>{1.0, 1.0}; });
}

inline Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  return detail::binary_elementwise(
      tape, a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return std::pair<double, double>{1.0, -1.0}; });
}

inline Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  return detail::binary_elementwise(
      tape, a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y) { return std::pair<double, double>{y, x}; });
}

inline Tensor scale(Tape* tape, const Tensor& a, double c) {
  return detail::unary_elementwise(
      tape, a, [c](double x) { return c * x; },
      [c](double, double) { return c; });
}

inline Tensor tanh_op(Tape* tape, const Tensor& a) {
  return detail::unary_elementwise(
      tape, a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Tensor relu(Tape* tape, const Tensor& a) {
  return detail::unary_elementwise(
      tape, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor square(Tape* tape, const Tensor& a) {
  return detail::unary_elementwise(
      tape, a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

inline Tensor sqrt_op(Tape* tape, const Tensor& a) {
  return detail::unary_elementwise(
      tape, a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

inline constexpr double kLogFloor = 1e-12;

// log with an input clamp floor; the gradient is zero below the floor.
inline Tensor log_op(Tape* tape, const Tensor& a) {
  return detail::unary_elementwise(
      tape, a, [](double x) { return std::log(x < kLogFloor ? kLogFloor : x); },
      [](double x, double) { return x < kLogFloor ? 0.0 : 1.0 / x; });
}

// softmax over the last axis (rows of a matrix, or a whole vector)
inline Tensor softmax_lastaxis(Tape* tape, const Tensor& a) {
  SG_CHECK(a.rank() >= 1 && a.rank() <= 2,
           "softmax: expects 1-D or 2-D input, got ", shape_str(a.shape()));
  const std::size_t cols = a.shape().back();
  const std::size_t rows = a.numel() / cols;
  Tensor out(a.shape());
  const auto& x = a.cdata();
  auto& o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double* orow = o.data() + r * cols;
    double mx = xr[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      orow[c] = std::exp(xr[c] - mx);
      sum += orow[c];
    }
    for (std::size_t c = 0; c < cols; ++c) orow[c] = quantize(orow[c] / sum);
  }
  if (detail::want_record(tape, {&a})) {
    const Tensor osnap = out;
    tape->record(out, {&a},
                 [osnap, rows, cols](const std::vector<double>& g,
                                     Tape::ParentGrads& pg) {
                   if (!pg[0]) return;
                   const auto& y = osnap.cdata();
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* yr = y.data() + r * cols;
                     const double* gr = g.data() + r * cols;
                     double dot = 0.0;
                     for (std::size_t c = 0; c < cols; ++c) dot += yr[c] * gr[c];
                     double* pr = pg[0]->data() + r * cols;
                     for (std::size_t c = 0; c < cols; ++c)
                       pr[c] += yr[c] * (gr[c] - dot);
                   }
                 });
  }
  return out;
}

// mean over one axis; 2-D input reduces to a vector, 1-D to a scalar
inline Tensor mean_axis(Tape* tape, const Tensor& a, std::size_t axis) {
  SG_CHECK(a.rank() >= 1 && a.rank() <= 2, "mean: expects 1-D or 2-D input");
  SG_CHECK(axis < a.rank(), "mean: axis ", axis, " out of range for ",
           shape_str(a.shape()));
  const auto& x = a.cdata();
  Tensor out;
  std::size_t rows, cols;
  if (a.rank() == 1) {
    rows = a.shape()[0];
    cols = 1;
    out = Tensor(Shape{1});
    double s = 0.0;
    for (std::size_t i = 0; i < rows; ++i) s += x[i];
    out.data()[0] = quantize(s / static_cast<double>(rows));
  } else {
    rows = a.shape()[0];
    cols = a.shape()[1];
    if (axis == 0) {
      out = Tensor(Shape{cols});
      for (std::size_t c = 0; c < cols; ++c) {
        double s = 0.0;
        for (std::size_t r = 0; r < rows; ++r) s += x[r * cols + c];
        out.data()[c] = quantize(s / static_cast<double>(rows));
      }
    } else {
      out = Tensor(Shape{rows});
      for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += x[r * cols + c];
        out.data()[r] = quantize(s / static_cast<double>(cols));
      }
    }
  }
  if (detail::want_record(tape, {&a})) {
    const std::size_t rank = a.rank();
    tape->record(out, {&a},
                 [rank, rows, cols, axis](const std::vector<double>& g,
                                          Tape::ParentGrads& pg) {
                   if (!pg[0]) return;
                   auto& p = *pg[0];
                   if (rank == 1) {
                     const double w = g[0] / static_cast<double>(rows);
                     for (std::size_t i = 0; i < rows; ++i) p[i] += w;
                   } else if (axis == 0) {
                     const double inv = 1.0 / static_cast<double>(rows);
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t c = 0; c < cols; ++c)
                         p[r * cols + c] += g[c] * inv;
                   } else {
                     const double inv = 1.0 / static_cast<double>(cols);
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t c = 0; c < cols; ++c)
                         p[r * cols + c] += g[r] * inv;
                   }
                 });
  }
  return out;
}

// concatenate along an axis; all operands must agree on the other axis
inline Tensor concat(Tape* tape, const std::vector<Tensor>& parts,
                     std::size_t axis) {
  SG_CHECK(!parts.empty(), "concat: no operands");
  const std::size_t rank = parts[0].rank();
  SG_CHECK(axis < rank, "concat: axis out of range");
  for (const auto& p : parts)
    SG_CHECK(p.rank() == rank, "concat: rank mismatch ",
             shape_str(parts[0].shape()), " vs ", shape_str(p.shape()));

  Shape oshape = parts[0].shape();
  oshape[axis] = 0;
  for (const auto& p : parts) {
    for (std::size_t d = 0; d < rank; ++d)
      if (d != axis)
        SG_CHECK(p.shape()[d] == parts[0].shape()[d],
                 "concat: shape mismatch ", shape_str(parts[0].shape()),
                 " vs ", shape_str(p.shape()));
    oshape[axis] += p.shape()[axis];
  }

  Tensor out(oshape);
  std::vector<std::size_t> col_offsets(parts.size(), 0);
  if (rank == 1 || axis == 0) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      std::copy(p.cdata().begin(), p.cdata().end(), out.data().begin() + off);
      off += p.numel();
    }
  } else {
    const std::size_t rows = oshape[0];
    const std::size_t ocols = oshape[1];
    std::size_t coff = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      const auto& p = parts[pi];
      col_offsets[pi] = coff;
      const std::size_t pcols = p.shape()[1];
      for (std::size_t r = 0; r < rows; ++r)
        std::copy(p.cdata().begin() + r * pcols,
                  p.cdata().begin() + (r + 1) * pcols,
                  out.data().begin() + r * ocols + coff);
      coff += pcols;
    }
  }

  bool any_tracked = false;
  if (tape)
    for (const auto& p : parts) any_tracked |= tape->tracks(p);
  if (any_tracked) {
    std::vector<Shape> pshapes;
    for (const auto& p : parts) pshapes.push_back(p.shape());
    const std::size_t orows = rank == 2 ? oshape[0] : 1;
    const std::size_t ocols = rank == 2 ? oshape[1] : oshape[0];
    tape->record_multi(out, parts,
                       [rank, axis, pshapes, orows, ocols, col_offsets](
                           const std::vector<double>& g,
                           Tape::ParentGrads& pg) {
                         if (rank == 1 || axis == 0) {
                           std::size_t off = 0;
                           for (std::size_t pi = 0; pi < pshapes.size(); ++pi) {
                             const std::size_t n = shape_numel(pshapes[pi]);
                             if (pg[pi])
                               for (std::size_t i = 0; i < n; ++i)
                                 (*pg[pi])[i] += g[off + i];
                             off += n;
                           }
                         } else {
                           for (std::size_t pi = 0; pi < pshapes.size(); ++pi) {
                             if (!pg[pi]) continue;
                             const std::size_t pcols = pshapes[pi][1];
                             for (std::size_t r = 0; r < orows; ++r)
                               for (std::size_t c = 0; c < pcols; ++c)
                                 (*pg[pi])[r * pcols + c] +=
                                     g[r * ocols + col_offsets[pi] + c];
                           }
                         }
                       });
  }
  return out;
}

// gather rows of a matrix by index; indices are structural constants
inline Tensor row_gather(Tape* tape, const Tensor& a,
                         const std::vector<std::size_t>& rows) {
  SG_CHECK(a.rank() == 2, "row_gather: expects 2-D input, got ",
           shape_str(a.shape()));
  const std::size_t cols = a.shape()[1];
  for (auto r : rows)
    SG_CHECK(r < a.shape()[0], "row_gather: row ", r, " out of range for ",
             shape_str(a.shape()));
  Tensor out(Shape{rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(a.cdata().begin() + rows[i] * cols,
              a.cdata().begin() + (rows[i] + 1) * cols,
              out.data().begin() + i * cols);
  if (detail::want_record(tape, {&a})) {
    tape->record(out, {&a},
                 [rows, cols](const std::vector<double>& g,
                              Tape::ParentGrads& pg) {
                   if (!pg[0]) return;
                   for (std::size_t i = 0; i < rows.size(); ++i)
                     for (std::size_t c = 0; c < cols; ++c)
                       (*pg[0])[rows[i] * cols + c] += g[i * cols + c];
                 });
  }
  return out;
}

// adds a vector to every row of a matrix
inline Tensor broadcast_add_rows(Tape* tape, const Tensor& mat,
                                 const Tensor& vec) {
  SG_CHECK(mat.rank() == 2 && vec.rank() == 1,
           "broadcast_add_rows: expects matrix and vector, got ",
           shape_str(mat.shape()), " and ", shape_str(vec.shape()));
  SG_CHECK(mat.shape()[1] == vec.shape()[0],
           "broadcast_add_rows: width mismatch ", shape_str(mat.shape()),
           " vs ", shape_str(vec.shape()));
  const std::size_t rows = mat.shape()[0], cols = mat.shape()[1];
  Tensor out(mat.shape());
  const auto& x = mat.cdata();
  const auto& v = vec.cdata();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out.data()[r * cols + c] = quantize(x[r * cols + c] + v[c]);
  if (detail::want_record(tape, {&mat, &vec})) {
    tape->record(out, {&mat, &vec},
                 [rows, cols](const std::vector<double>& g,
                              Tape::ParentGrads& pg) {
                   if (pg[0]) detail::axpy(*pg[0], g);
                   if (pg[1])
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t c = 0; c < cols; ++c)
                         (*pg[1])[c] += g[r * cols + c];
                 });
  }
  return out;
}

// numel-preserving reshape (copying view; no arithmetic)
inline Tensor reshape(Tape* tape, const Tensor& a, Shape shape) {
  SG_CHECK(shape_numel(shape) == a.numel(), "reshape: cannot view ",
           shape_str(a.shape()), " as ", shape_str(shape));
  Tensor out = Tensor::from_data(std::move(shape),
                                 std::vector<double>(a.cdata()));
  if (detail::want_record(tape, {&a})) {
    tape->record(out, {&a},
                 [](const std::vector<double>& g, Tape::ParentGrads& pg) {
                   if (pg[0]) detail::axpy(*pg[0], g);
                 });
  }
  return out;
}

// ---------------------------------------------------------------------------
// composites
// ---------------------------------------------------------------------------

inline Tensor mean_all(Tape* tape, const Tensor& a) {
  Tensor t = a;
  if (a.rank() == 2) t = mean_axis(tape, t, 1);
  return mean_axis(tape, t, 0);
}

inline Tensor sum_all(Tape* tape, const Tensor& a) {
  return scale(tape, mean_all(tape, a), static_cast<double>(a.numel()));
}

// clamp-below as relu(x - floor) + floor; gradient is zero under the floor
inline Tensor clamp_min(Tape* tape, const Tensor& a, double floor) {
  Tensor shifted = detail::unary_elementwise(
      tape, a, [floor](double x) { return x - floor; },
      [](double, double) { return 1.0; });
  Tensor r = relu(tape, shifted);
  return detail::unary_elementwise(
      tape, r, [floor](double x) { return x + floor; },
      [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

// Max relative error between analytic gradients and central differences,
// taken over every coordinate of x. Runs in 64-bit precision; f must be
// scalar-valued and deterministic. order 2 is the classic two-point stencil;
// order 4 uses the five-point stencil, which tolerates the larger steps
// needed to keep roundoff below tiny gradient coordinates.
inline double grad_check(const std::function<Tensor(Tape*, const Tensor&)>& f,
                         const Tensor& x, double step, int order = 2) {
  SG_CHECK(order == 2 || order == 4, "grad_check: order must be 2 or 4");
  PrecisionGuard precision(Precision::f64);
  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  Tape tape;
  Tensor loss = f(&tape, probe);
  SG_CHECK(loss.numel() == 1, "grad_check: f must be scalar-valued");
  tape.backward(loss);
  const std::vector<double> analytic = probe.cgrad();

  auto eval_at = [&f, &x](std::size_t i, double delta) {
    Tensor shifted = x.clone();
    shifted.data()[i] += delta;
    return f(nullptr, shifted).cdata()[0];
  };

  double max_rel = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    double numeric;
    if (order == 2) {
      numeric = (eval_at(i, step) - eval_at(i, -step)) / (2.0 * step);
    } else {
      numeric = (-eval_at(i, 2.0 * step) + 8.0 * eval_at(i, step) -
                 8.0 * eval_at(i, -step) + eval_at(i, -2.0 * step)) /
                (12.0 * step);
    }
    SG_CHECK(std::isfinite(numeric) && std::isfinite(analytic[i]),
             "grad_check: non-finite derivative at coordinate ", i);
    const double denom =
        std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
  }
  return max_rel;
}

}  // namespace sgdiff
