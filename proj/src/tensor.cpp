#include "pgnmt/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <utility>

#include "pgnmt/errors.hpp"
#include "pgnmt/util.hpp"

namespace pgnmt {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EMat>;
using ConstMatMap = Eigen::Map<const EMat>;
using ArrMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrMap = Eigen::Map<const Eigen::ArrayXd>;

bool want_tape(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void accumulate(TensorNode& node, std::span<const double> delta) {
  node.ensure_grad();
  for (std::size_t i = 0; i < delta.size(); ++i) node.grad[i] += delta[i];
}

thread_local Tape* g_active_tape = nullptr;

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << '}';
  return os.str();
}

Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return from_data(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = static_cast<std::size_t>(shape_numel(shape));
  return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  for (Index d : shape)
    if (d < 0) throw DimensionError("tensor: negative dimension in shape " + shape_str(shape));
  auto n = static_cast<std::size_t>(shape_numel(shape));
  if (data.empty()) data.assign(n, 0.0);
  if (data.size() != n)
    throw DimensionError("tensor: shape " + shape_str(shape) + " wants " + std::to_string(n) +
                         " values, got " + std::to_string(data.size()));
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item: tensor has shape " + shape_str(shape()));
  return node_->values[0];
}

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::shared_ptr<TensorNode> out, std::function<void()> backward) {
  entries_.push_back({std::move(out), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward: loss must be a defined scalar");
  // Intermediate grads are scratch; leaf grads persist and accumulate.
  for (Entry& e : entries_) e.out->grad.clear();
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->out->grad.empty()) it->fn();
  }
}

// ---- elementwise ----

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  const auto n = static_cast<std::size_t>(a.numel());
  std::vector<double> out(n);
  ArrMap(out.data(), n) = ConstArrMap(a.values().data(), n) + ConstArrMap(b.values().data(), n);
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (want_tape({&a, &b})) {
    r.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), rn = r.node();
    Tape::active()->record(rn, [an, bn, rn] {
      if (an->requires_grad) accumulate(*an, rn->grad);
      if (bn->requires_grad) accumulate(*bn, rn->grad);
    });
  }
  return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  const auto n = static_cast<std::size_t>(a.numel());
  std::vector<double> out(n);
  ArrMap(out.data(), n) = ConstArrMap(a.values().data(), n) - ConstArrMap(b.values().data(), n);
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (want_tape({&a, &b})) {
    r.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), rn = r.node();
    Tape::active()->record(rn, [an, bn, rn] {
      if (an->requires_grad) accumulate(*an, rn->grad);
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < rn->grad.size(); ++i) bn->grad[i] -= rn->grad[i];
      }
    });
  }
  return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  const auto n = static_cast<std::size_t>(a.numel());
  std::vector<double> out(n);
  ArrMap(out.data(), n) = ConstArrMap(a.values().data(), n) * ConstArrMap(b.values().data(), n);
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (want_tape({&a, &b})) {
    r.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), rn = r.node();
    Tape::active()->record(rn, [an, bn, rn] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < rn->grad.size(); ++i) an->grad[i] += rn->grad[i] * bn->values[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < rn->grad.size(); ++i) bn->grad[i] += rn->grad[i] * an->values[i];
      }
    });
  }
  return r;
}

Tensor scale(const Tensor& a, double c) {
  const auto n = static_cast<std::size_t>(a.numel());
  std::vector<double> out(n);
  ArrMap(out.data(), n) = ConstArrMap(a.values().data(), n) * c;
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (want_tape({&a})) {
    r.set_requires_grad(true);
    auto an = a.node(), rn = r.node();
    Tape::active()->record(rn, [an, rn, c] {
      an->ensure_grad();
      for (std::size_t i = 0; i < rn->grad.size(); ++i) an->grad[i] += rn->grad[i] * c;
    });
  }
  return r;
}

Tensor add_scalar(const Tensor& a, double c) {
  const auto n = static_cast<std::size_t>(a.numel());
  std::vector<double> out(n);
  ArrMap(out.data(), n) = ConstArrMap(a.values().data(), n) + c;
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (want_tape({&a})) {
    r.set_requires_grad(true);
    auto an = a.node(), rn = r.node();
    Tape::active()->record(rn, [an, rn] { accumulate(*an, rn->grad); });
  }
  return r;
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor log(const Tensor& a) {
  const auto n = static_cast<std::size_t>(a.numel());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = a.values()[i];
    if (!(x > 0.0))
      throw ContractError("log: non-positive input " + std::to_string(x) + " at index " +
                          std::to_string(i));
    out[i] = std::log(x);
  }
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (want_tape({&a})) {
    r.set_requires_grad(true);
    auto an = a.node(), rn = r.node();
    Tape::active()->record(rn, [an, rn] {
      an->ensure_grad();
      for (std::size_t i = 0; i < rn->grad.size(); ++i) an->grad[i] += rn->grad[i] / an->values[i];
    });
  }
  return r;
}

Tensor relu(const Tensor& a) {
  const auto n = static_cast<std::size_t>(a.numel());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (want_tape({&a})) {
    r.set_requires_grad(true);
    auto an = a.node(), rn = r.node();
    Tape::active()->record(rn, [an, rn] {
      an->ensure_grad();
      for (std::size_t i = 0; i < rn->grad.size(); ++i)
        if (an->values[i] > 0.0) an->grad[i] += rn->grad[i];
    });
  }
  return r;
}

Tensor sigmoid(const Tensor& a) {
  const auto n = static_cast<std::size_t>(a.numel());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = a.values()[i];
    // Branch on sign so neither exp can overflow; large negatives land in
    // the denormal range instead of flushing to zero.
    if (x >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      double e = std::exp(x);
      out[i] = e / (1.0 + e);
    }
  }
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (want_tape({&a})) {
    r.set_requires_grad(true);
    auto an = a.node(), rn = r.node();
    Tape::active()->record(rn, [an, rn] {
      an->ensure_grad();
      for (std::size_t i = 0; i < rn->grad.size(); ++i) {
        double s = rn->values[i];
        an->grad[i] += rn->grad[i] * s * (1.0 - s);
      }
    });
  }
  return r;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  Tensor r = Tensor::from_data(std::move(shape), std::move(out));
  if (want_tape({&a})) {
    r.set_requires_grad(true);
    auto an = a.node(), rn = r.node();
    Tape::active()->record(rn, [an, rn] { accumulate(*an, rn->grad); });
  }
  return r;
}

Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2) throw DimensionError("transpose: expected 2-D, got " + shape_str(a.shape()));
  const Index r = a.dim(0), c = a.dim(1);
  std::vector<double> out(static_cast<std::size_t>(r * c));
  MatMap(out.data(), c, r) = ConstMatMap(a.values().data(), r, c).transpose();
  Tensor t = Tensor::from_data({c, r}, std::move(out));
  if (want_tape({&a})) {
    t.set_requires_grad(true);
    auto an = a.node(), tn = t.node();
    Tape::active()->record(tn, [an, tn, r, c] {
      an->ensure_grad();
      MatMap(an->grad.data(), r, c) += ConstMatMap(tn->grad.data(), c, r).transpose();
    });
  }
  return t;
}

Tensor concat_lastdim(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (first.empty()) throw DimensionError("concat: inputs must have at least one axis");
  Shape lead(first.begin(), first.end() - 1);
  Index last_total = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != parts[0].ndim() ||
        !std::equal(lead.begin(), lead.end(), p.shape().begin()))
      throw DimensionError("concat: shape mismatch " + shape_str(first) + " vs " +
                           shape_str(p.shape()));
    last_total += p.shape().back();
  }
  Index outer = 1;
  for (Index d : lead) outer *= d;
  Shape out_shape = lead;
  out_shape.push_back(last_total);
  std::vector<double> out(static_cast<std::size_t>(outer * last_total));
  Index off = 0;
  for (const Tensor& p : parts) {
    const Index lp = p.shape().back();
    for (Index o = 0; o < outer; ++o)
      std::copy_n(p.values().data() + o * lp, lp, out.data() + o * last_total + off);
    off += lp;
  }

  bool tape = false;
  for (const Tensor& p : parts) tape = tape || want_tape({&p});
  Tensor r = Tensor::from_data(std::move(out_shape), std::move(out));
  if (tape) {
    r.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorNode>> ins;
    ins.reserve(parts.size());
    for (const Tensor& p : parts) ins.push_back(p.node());
    auto rn = r.node();
    Tape::active()->record(rn, [ins, rn, outer, last_total] {
      Index off2 = 0;
      for (const auto& in : ins) {
        const Index lp = in->shape.back();
        if (in->requires_grad) {
          in->ensure_grad();
          for (Index o = 0; o < outer; ++o) {
            const double* g = rn->grad.data() + o * last_total + off2;
            double* dst = in->grad.data() + o * lp;
            for (Index j = 0; j < lp; ++j) dst[j] += g[j];
          }
        }
        off2 += lp;
      }
    });
  }
  return r;
}

Tensor slice_lastdim(const Tensor& a, Index offset, Index length) {
  if (a.ndim() < 1) throw DimensionError("slice: input must have at least one axis");
  const Index last = a.shape().back();
  if (offset < 0 || length < 0 || offset + length > last)
    throw DimensionError("slice: range [" + std::to_string(offset) + "," +
                         std::to_string(offset + length) + ") outside axis of size " +
                         std::to_string(last));
  Index outer = a.numel() / last;
  Shape out_shape = a.shape();
  out_shape.back() = length;
  std::vector<double> out(static_cast<std::size_t>(outer * length));
  for (Index o = 0; o < outer; ++o)
    std::copy_n(a.values().data() + o * last + offset, length, out.data() + o * length);
  Tensor r = Tensor::from_data(std::move(out_shape), std::move(out));
  if (want_tape({&a})) {
    r.set_requires_grad(true);
    auto an = a.node(), rn = r.node();
    Tape::active()->record(rn, [an, rn, outer, last, offset, length] {
      an->ensure_grad();
      for (Index o = 0; o < outer; ++o) {
        const double* g = rn->grad.data() + o * length;
        double* dst = an->grad.data() + o * last + offset;
        for (Index j = 0; j < length; ++j) dst[j] += g[j];
      }
    });
  }
  return r;
}

Tensor masked_fill(const Tensor& a, std::span<const std::uint8_t> mask, double value) {
  const auto n = static_cast<std::size_t>(a.numel());
  if (mask.size() != n)
    throw DimensionError("masked_fill: mask length " + std::to_string(mask.size()) +
                         " vs tensor " + shape_str(a.shape()));
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = mask[i] ? value : a.values()[i];
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (want_tape({&a})) {
    r.set_requires_grad(true);
    auto an = a.node(), rn = r.node();
    std::vector<std::uint8_t> m(mask.begin(), mask.end());
    Tape::active()->record(rn, [an, rn, m = std::move(m)] {
      an->ensure_grad();
      for (std::size_t i = 0; i < rn->grad.size(); ++i)
        if (!m[i]) an->grad[i] += rn->grad[i];
    });
  }
  return r;
}

Tensor dropout(const Tensor& a, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0)
    throw ValidationError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return a;
  const auto n = static_cast<std::size_t>(a.numel());
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<std::uint8_t> keep(n);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    keep[i] = uniform01(rng) >= rate ? 1 : 0;
    out[i] = keep[i] ? a.values()[i] * keep_scale : 0.0;
  }
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (want_tape({&a})) {
    r.set_requires_grad(true);
    auto an = a.node(), rn = r.node();
    Tape::active()->record(rn, [an, rn, keep = std::move(keep), keep_scale] {
      an->ensure_grad();
      for (std::size_t i = 0; i < rn->grad.size(); ++i)
        if (keep[i]) an->grad[i] += rn->grad[i] * keep_scale;
    });
  }
  return r;
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
  KahanSum acc;
  for (double x : a.values()) acc.add(x);
  Tensor r = Tensor::scalar(acc.value());
  if (want_tape({&a})) {
    r.set_requires_grad(true);
    auto an = a.node(), rn = r.node();
    Tape::active()->record(rn, [an, rn] {
      an->ensure_grad();
      for (double& g : an->grad) g += rn->grad[0];
    });
  }
  return r;
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ContractError("mean: empty tensor");
  KahanSum acc;
  for (double x : a.values()) acc.add(x);
  const double inv = 1.0 / static_cast<double>(a.numel());
  Tensor r = Tensor::scalar(acc.value() * inv);
  if (want_tape({&a})) {
    r.set_requires_grad(true);
    auto an = a.node(), rn = r.node();
    Tape::active()->record(rn, [an, rn, inv] {
      an->ensure_grad();
      for (double& g : an->grad) g += rn->grad[0] * inv;
    });
  }
  return r;
}

Tensor softmax(const Tensor& a, int axis) {
  const int nd = a.ndim();
  if (nd == 0) throw DimensionError("softmax: scalar input");
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd)
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(a.shape()));
  Index outer = 1, inner = 1;
  const Index n = a.dim(axis);
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < nd; ++i) inner *= a.dim(i);
  if (n == 0) throw DimensionError("softmax: reduction axis has size 0");

  std::vector<double> out(static_cast<std::size_t>(a.numel()));
  const double* x = a.values().data();
  for (Index o = 0; o < outer; ++o) {
    for (Index in = 0; in < inner; ++in) {
      const Index base = o * n * inner + in;
      double mx = x[base];
      for (Index j = 1; j < n; ++j) mx = std::max(mx, x[base + j * inner]);
      KahanSum denom;
      for (Index j = 0; j < n; ++j) {
        double e = std::exp(x[base + j * inner] - mx);
        out[static_cast<std::size_t>(base + j * inner)] = e;
        denom.add(e);
      }
      const double inv = 1.0 / denom.value();
      for (Index j = 0; j < n; ++j) out[static_cast<std::size_t>(base + j * inner)] *= inv;
    }
  }
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (want_tape({&a})) {
    r.set_requires_grad(true);
    auto an = a.node(), rn = r.node();
    Tape::active()->record(rn, [an, rn, outer, n, inner] {
      an->ensure_grad();
      const double* s = rn->values.data();
      const double* g = rn->grad.data();
      for (Index o = 0; o < outer; ++o) {
        for (Index in = 0; in < inner; ++in) {
          const Index base = o * n * inner + in;
          double dot = 0.0;
          for (Index j = 0; j < n; ++j) dot += g[base + j * inner] * s[base + j * inner];
          for (Index j = 0; j < n; ++j) {
            const Index k = base + j * inner;
            an->grad[static_cast<std::size_t>(k)] += s[k] * (g[k] - dot);
          }
        }
      }
    });
  }
  return r;
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw DimensionError("matmul: expected 2-D operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const Index m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  MatMap(out.data(), m, n).noalias() =
      ConstMatMap(a.values().data(), m, k) * ConstMatMap(b.values().data(), k, n);
  Tensor r = Tensor::from_data({m, n}, std::move(out));
  if (want_tape({&a, &b})) {
    r.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), rn = r.node();
    Tape::active()->record(rn, [an, bn, rn, m, k, n] {
      ConstMatMap g(rn->grad.data(), m, n);
      if (an->requires_grad) {
        an->ensure_grad();
        MatMap(an->grad.data(), m, k).noalias() += g * ConstMatMap(bn->values.data(), k, n).transpose();
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        MatMap(bn->grad.data(), k, n).noalias() += ConstMatMap(an->values.data(), m, k).transpose() * g;
      }
    });
  }
  return r;
}

Tensor add_rowvec(const Tensor& m, const Tensor& b) {
  if (m.ndim() != 2 || b.ndim() != 1 || b.dim(0) != m.dim(1))
    throw DimensionError("add_rowvec: shapes " + shape_str(m.shape()) + " vs " +
                         shape_str(b.shape()));
  const Index r = m.dim(0), c = m.dim(1);
  std::vector<double> out(static_cast<std::size_t>(r * c));
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j)
      out[static_cast<std::size_t>(i * c + j)] = m.values()[static_cast<std::size_t>(i * c + j)] + b.values()[static_cast<std::size_t>(j)];
  Tensor t = Tensor::from_data({r, c}, std::move(out));
  if (want_tape({&m, &b})) {
    t.set_requires_grad(true);
    auto mn = m.node(), bn = b.node(), tn = t.node();
    Tape::active()->record(tn, [mn, bn, tn, r, c] {
      if (mn->requires_grad) accumulate(*mn, tn->grad);
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (Index i = 0; i < r; ++i)
          for (Index j = 0; j < c; ++j) bn->grad[static_cast<std::size_t>(j)] += tn->grad[static_cast<std::size_t>(i * c + j)];
      }
    });
  }
  return t;
}

Tensor scale_rows(const Tensor& m, const Tensor& v) {
  if (m.ndim() != 2 || v.ndim() != 1 || v.dim(0) != m.dim(0))
    throw DimensionError("scale_rows: shapes " + shape_str(m.shape()) + " vs " +
                         shape_str(v.shape()));
  const Index r = m.dim(0), c = m.dim(1);
  std::vector<double> out(static_cast<std::size_t>(r * c));
  for (Index i = 0; i < r; ++i) {
    const double s = v.values()[static_cast<std::size_t>(i)];
    for (Index j = 0; j < c; ++j)
      out[static_cast<std::size_t>(i * c + j)] = m.values()[static_cast<std::size_t>(i * c + j)] * s;
  }
  Tensor t = Tensor::from_data({r, c}, std::move(out));
  if (want_tape({&m, &v})) {
    t.set_requires_grad(true);
    auto mn = m.node(), vn = v.node(), tn = t.node();
    Tape::active()->record(tn, [mn, vn, tn, r, c] {
      if (mn->requires_grad) {
        mn->ensure_grad();
        for (Index i = 0; i < r; ++i) {
          const double s = vn->values[static_cast<std::size_t>(i)];
          for (Index j = 0; j < c; ++j)
            mn->grad[static_cast<std::size_t>(i * c + j)] += tn->grad[static_cast<std::size_t>(i * c + j)] * s;
        }
      }
      if (vn->requires_grad) {
        vn->ensure_grad();
        for (Index i = 0; i < r; ++i) {
          double dot = 0.0;
          for (Index j = 0; j < c; ++j)
            dot += tn->grad[static_cast<std::size_t>(i * c + j)] * mn->values[static_cast<std::size_t>(i * c + j)];
          vn->grad[static_cast<std::size_t>(i)] += dot;
        }
      }
    });
  }
  return t;
}

// ---- indexed ops ----

Tensor gather_rows(const Tensor& table, std::span<const Index> ids) {
  if (table.ndim() != 2)
    throw DimensionError("gather_rows: table must be 2-D, got " + shape_str(table.shape()));
  const Index v = table.dim(0), h = table.dim(1);
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] < 0 || ids[i] >= v)
      throw ContractError("gather_rows: id " + std::to_string(ids[i]) + " at position " +
                          std::to_string(i) + " outside [0," + std::to_string(v) + ")");
  const auto rows = static_cast<Index>(ids.size());
  std::vector<double> out(static_cast<std::size_t>(rows * h));
  for (Index i = 0; i < rows; ++i)
    std::copy_n(table.values().data() + ids[static_cast<std::size_t>(i)] * h, h, out.data() + i * h);
  Tensor r = Tensor::from_data({rows, h}, std::move(out));
  if (want_tape({&table})) {
    r.set_requires_grad(true);
    auto tn = table.node(), rn = r.node();
    std::vector<Index> idv(ids.begin(), ids.end());
    Tape::active()->record(rn, [tn, rn, idv = std::move(idv), h] {
      tn->ensure_grad();
      for (std::size_t i = 0; i < idv.size(); ++i) {
        const double* g = rn->grad.data() + static_cast<Index>(i) * h;
        double* dst = tn->grad.data() + idv[i] * h;
        for (Index j = 0; j < h; ++j) dst[j] += g[j];
      }
    });
  }
  return r;
}

Tensor scatter_add(std::span<const Index> ids, const Tensor& weights, Index size) {
  if (weights.ndim() != 1)
    throw DimensionError("scatter_add: weights must be 1-D, got " + shape_str(weights.shape()));
  if (static_cast<Index>(ids.size()) != weights.dim(0))
    throw DimensionError("scatter_add: " + std::to_string(ids.size()) + " ids vs weights " +
                         shape_str(weights.shape()));
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] < 0 || ids[i] >= size)
      throw ContractError("scatter_add: id " + std::to_string(ids[i]) + " at position " +
                          std::to_string(i) + " outside [0," + std::to_string(size) + ")");
  std::vector<double> out(static_cast<std::size_t>(size), 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i) out[static_cast<std::size_t>(ids[i])] += weights.values()[i];
  Tensor r = Tensor::from_data({size}, std::move(out));
  if (want_tape({&weights})) {
    r.set_requires_grad(true);
    auto wn = weights.node(), rn = r.node();
    std::vector<Index> idv(ids.begin(), ids.end());
    Tape::active()->record(rn, [wn, rn, idv = std::move(idv)] {
      wn->ensure_grad();
      for (std::size_t i = 0; i < idv.size(); ++i)
        wn->grad[i] += rn->grad[static_cast<std::size_t>(idv[i])];
    });
  }
  return r;
}

Tensor scatter_add_rows(const Tensor& m, std::span<const Index> ids, Index size,
                        std::span<const std::uint8_t> keep) {
  if (m.ndim() != 2)
    throw DimensionError("scatter_add_rows: expected 2-D, got " + shape_str(m.shape()));
  const Index t = m.dim(0), s = m.dim(1);
  if (static_cast<Index>(ids.size()) != s)
    throw DimensionError("scatter_add_rows: " + std::to_string(ids.size()) + " ids vs " +
                         shape_str(m.shape()));
  if (!keep.empty() && static_cast<Index>(keep.size()) != s)
    throw DimensionError("scatter_add_rows: keep mask length " + std::to_string(keep.size()) +
                         " vs " + std::to_string(s) + " columns");
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] < 0 || ids[i] >= size)
      throw ContractError("scatter_add_rows: id " + std::to_string(ids[i]) + " at position " +
                          std::to_string(i) + " outside [0," + std::to_string(size) + ")");
  std::vector<double> out(static_cast<std::size_t>(t * size), 0.0);
  for (Index row = 0; row < t; ++row) {
    const double* src = m.values().data() + row * s;
    double* dst = out.data() + row * size;
    for (Index j = 0; j < s; ++j) {
      if (!keep.empty() && !keep[static_cast<std::size_t>(j)]) continue;
      dst[ids[static_cast<std::size_t>(j)]] += src[j];
    }
  }
  Tensor r = Tensor::from_data({t, size}, std::move(out));
  if (want_tape({&m})) {
    r.set_requires_grad(true);
    auto mn = m.node(), rn = r.node();
    std::vector<Index> idv(ids.begin(), ids.end());
    std::vector<std::uint8_t> kv(keep.begin(), keep.end());
    Tape::active()->record(rn, [mn, rn, idv = std::move(idv), kv = std::move(kv), t, s, size] {
      mn->ensure_grad();
      for (Index row = 0; row < t; ++row) {
        const double* g = rn->grad.data() + row * size;
        double* dst = mn->grad.data() + row * s;
        for (Index j = 0; j < s; ++j) {
          if (!kv.empty() && !kv[static_cast<std::size_t>(j)]) continue;
          dst[j] += g[idv[static_cast<std::size_t>(j)]];
        }
      }
    });
  }
  return r;
}

Tensor pick_per_row(const Tensor& m, std::span<const Index> ids) {
  if (m.ndim() != 2)
    throw DimensionError("pick_per_row: expected 2-D, got " + shape_str(m.shape()));
  const Index t = m.dim(0), c = m.dim(1);
  if (static_cast<Index>(ids.size()) != t)
    throw DimensionError("pick_per_row: " + std::to_string(ids.size()) + " ids vs " +
                         shape_str(m.shape()));
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] < 0 || ids[i] >= c)
      throw ContractError("pick_per_row: id " + std::to_string(ids[i]) + " at position " +
                          std::to_string(i) + " outside [0," + std::to_string(c) + ")");
  std::vector<double> out(static_cast<std::size_t>(t));
  for (Index i = 0; i < t; ++i) out[static_cast<std::size_t>(i)] = m.values()[static_cast<std::size_t>(i * c + ids[static_cast<std::size_t>(i)])];
  Tensor r = Tensor::from_data({t}, std::move(out));
  if (want_tape({&m})) {
    r.set_requires_grad(true);
    auto mn = m.node(), rn = r.node();
    std::vector<Index> idv(ids.begin(), ids.end());
    Tape::active()->record(rn, [mn, rn, idv = std::move(idv), c] {
      mn->ensure_grad();
      for (std::size_t i = 0; i < idv.size(); ++i)
        mn->grad[static_cast<std::size_t>(static_cast<Index>(i) * c + idv[i])] += rn->grad[i];
    });
  }
  return r;
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  if (a.ndim() < 1) throw DimensionError("layer_norm: scalar input");
  const Index h = a.shape().back();
  if (gain.ndim() != 1 || gain.dim(0) != h || bias.ndim() != 1 || bias.dim(0) != h)
    throw DimensionError("layer_norm: input " + shape_str(a.shape()) + " vs gain " +
                         shape_str(gain.shape()) + " and bias " + shape_str(bias.shape()));
  const Index rows = a.numel() / h;
  std::vector<double> out(static_cast<std::size_t>(a.numel()));
  std::vector<double> mu(static_cast<std::size_t>(rows)), istd(static_cast<std::size_t>(rows));
  const double* x = a.values().data();
  for (Index r = 0; r < rows; ++r) {
    const double* xr = x + r * h;
    double m = 0.0;
    for (Index j = 0; j < h; ++j) m += xr[j];
    m /= static_cast<double>(h);
    double var = 0.0;
    for (Index j = 0; j < h; ++j) {
      const double d = xr[j] - m;
      var += d * d;
    }
    var /= static_cast<double>(h);
    const double r_i = 1.0 / std::sqrt(var + eps);
    mu[static_cast<std::size_t>(r)] = m;
    istd[static_cast<std::size_t>(r)] = r_i;
    for (Index j = 0; j < h; ++j)
      out[static_cast<std::size_t>(r * h + j)] =
          (xr[j] - m) * r_i * gain.values()[static_cast<std::size_t>(j)] + bias.values()[static_cast<std::size_t>(j)];
  }
  Tensor t = Tensor::from_data(a.shape(), std::move(out));
  if (want_tape({&a, &gain, &bias})) {
    t.set_requires_grad(true);
    auto an = a.node(), gn = gain.node(), bn = bias.node(), tn = t.node();
    Tape::active()->record(tn, [an, gn, bn, tn, rows, h, mu = std::move(mu), istd = std::move(istd)] {
      const double* g = tn->grad.data();
      for (Index r = 0; r < rows; ++r) {
        const double* xr = an->values.data() + r * h;
        const double* gr = g + r * h;
        const double m = mu[static_cast<std::size_t>(r)];
        const double ri = istd[static_cast<std::size_t>(r)];
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (Index j = 0; j < h; ++j)
            gn->grad[static_cast<std::size_t>(j)] += gr[j] * (xr[j] - m) * ri;
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (Index j = 0; j < h; ++j) bn->grad[static_cast<std::size_t>(j)] += gr[j];
        }
        if (an->requires_grad) {
          an->ensure_grad();
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (Index j = 0; j < h; ++j) {
            const double xhat = (xr[j] - m) * ri;
            const double dxhat = gr[j] * gn->values[static_cast<std::size_t>(j)];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat;
          }
          mean_dxhat /= static_cast<double>(h);
          mean_dxhat_xhat /= static_cast<double>(h);
          for (Index j = 0; j < h; ++j) {
            const double xhat = (xr[j] - m) * ri;
            const double dxhat = gr[j] * gn->values[static_cast<std::size_t>(j)];
            an->grad[static_cast<std::size_t>(r * h + j)] +=
                ri * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
          }
        }
      }
    });
  }
  return t;
}

Tensor xavier_uniform(Index rows, Index cols, Rng& rng) {
  if (rows <= 0 || cols <= 0)
    throw DimensionError("xavier_uniform: non-positive shape {" + std::to_string(rows) + "," +
                         std::to_string(cols) + "}");
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::vector<double> data(static_cast<std::size_t>(rows * cols));
  for (double& x : data) x = uniform(rng, -limit, limit);
  return Tensor::from_data({rows, cols}, std::move(data), true);
}

void adam_step(std::span<Tensor> params, AdamState& state) {
  std::size_t total = 0;
  for (const Tensor& p : params) total += static_cast<std::size_t>(p.numel());
  if (state.m.empty()) {
    state.m.assign(total, 0.0);
    state.v.assign(total, 0.0);
  } else if (state.m.size() != total || state.v.size() != total) {
    throw ContractError("adam_step: moment size " + std::to_string(state.m.size()) +
                        " vs parameter count " + std::to_string(total));
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  std::size_t off = 0;
  for (Tensor& p : params) {
    auto vals = p.values_mut();
    const auto& grad = p.node()->grad;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      double& m = state.m[off + i];
      double& v = state.v[off + i];
      m = state.beta1 * m + (1.0 - state.beta1) * g;
      v = state.beta2 * v + (1.0 - state.beta2) * g * g;
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      vals[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
    off += vals.size();
  }
}

void zero_grad(std::span<Tensor> params) {
  for (Tensor& p : params) p.zero_grad();
}

}  // namespace pgnmt
