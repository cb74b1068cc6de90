#include "dilbench/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "dilbench/error.hpp"

namespace dilbench {

namespace {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t last_of(const Shape& s) { return s.empty() ? 1 : s.back(); }

std::size_t rows_of(const Shape& s) { return s.empty() ? 1 : s.front(); }

}  // namespace

std::size_t shape_size(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_size(shape_) != values_.size()) {
    throw Error(ErrorKind::ShapeMismatch,
                "shape " + shape_str(shape_) + " does not hold " + std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw Error(ErrorKind::ShapeMismatch, "ragged matrix literal");
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(v));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) t.values_[i * n + i] = 1.0;
  return t;
}

std::size_t Tensor::last_dim() const noexcept { return last_of(shape_); }

std::size_t Tensor::outer_size() const noexcept {
  const auto last = last_dim();
  return last == 0 ? 0 : size() / last;
}

double Tensor::at(std::size_t row, std::size_t col) const { return values_.at(row * last_dim() + col); }

double Tensor::item() const {
  if (values_.size() != 1) throw Error(ErrorKind::NotScalar, "tensor of shape " + shape_str(shape_));
  return values_[0];
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (!on) grad_.reset();
}

std::span<const double> Tensor::grad() const {
  if (!grad_) return {};
  return *grad_;
}

std::span<double> Tensor::grad_buffer() {
  if (!grad_) grad_.emplace(values_.size(), 0.0);
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(static_cast<std::uint32_t>(nodes_.size() - 1));
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id() >= nodes_.size()) throw Error(ErrorKind::ShapeMismatch, "invalid tape handle");
  return nodes_[v.id()];
}

std::vector<double>& Tape::grad_of(std::uint32_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

Var Tape::constant(Tensor value) {
  Node n;
  n.shape = value.shape();
  n.value.assign(value.values().begin(), value.values().end());
  return push(std::move(n));
}

Var Tape::leaf(Tensor& tensor) {
  Node n;
  n.shape = tensor.shape();
  n.value.assign(tensor.values().begin(), tensor.values().end());
  if (tensor.requires_grad()) {
    n.sink = tensor.grad_buffer();
    n.needs_grad = true;
  }
  return push(std::move(n));
}

Var Tape::parameter(std::span<const double> values, Shape shape, std::span<double> grad_sink) {
  if (shape_size(shape) != values.size() || (!grad_sink.empty() && grad_sink.size() != values.size())) {
    throw Error(ErrorKind::ShapeMismatch, "parameter view does not match shape " + shape_str(shape));
  }
  Node n;
  n.shape = std::move(shape);
  n.value.assign(values.begin(), values.end());
  n.sink = grad_sink;
  n.needs_grad = !grad_sink.empty();
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  const auto& na = node(a);
  const auto& nb = node(b);
  if (na.shape.size() != 2 || nb.shape.size() != 2 || na.shape[1] != nb.shape[0]) {
    throw Error(ErrorKind::ShapeMismatch, "matmul " + shape_str(na.shape) + " x " + shape_str(nb.shape));
  }
  const std::size_t m = na.shape[0], k = na.shape[1], p = nb.shape[1];
  Node n;
  n.op = Op::MatMul;
  n.shape = {m, p};
  n.value.assign(m * p, 0.0);
  const double* A = na.value.data();
  const double* B = nb.value.data();
  double* C = n.value.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * p;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = A[i * k + kk];
      if (aik == 0.0) continue;
      const double* brow = B + kk * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
    }
  }
  n.lhs = a.id();
  n.rhs = b.id();
  n.needs_grad = na.needs_grad || nb.needs_grad;
  return push(std::move(n));
}

Var Tape::elementwise(Op op, Var a, Var b) {
  const auto& na = node(a);
  const auto& nb = node(b);
  // begin encodes broadcasting: 0 same shape, 1 lhs is scalar, 2 rhs is scalar.
  std::size_t mode = 0;
  if (na.shape != nb.shape) {
    if (nb.value.size() == 1) {
      mode = 2;
    } else if (na.value.size() == 1) {
      mode = 1;
    } else {
      throw Error(ErrorKind::ShapeMismatch, "elementwise " + shape_str(na.shape) + " vs " + shape_str(nb.shape));
    }
  }
  Node n;
  n.op = op;
  n.begin = mode;
  n.shape = mode == 1 ? nb.shape : na.shape;
  const std::size_t len = shape_size(n.shape);
  n.value.resize(len);
  for (std::size_t i = 0; i < len; ++i) {
    const double x = mode == 1 ? na.value[0] : na.value[i];
    const double y = mode == 2 ? nb.value[0] : nb.value[i];
    switch (op) {
      case Op::Add: n.value[i] = x + y; break;
      case Op::Sub: n.value[i] = x - y; break;
      default: n.value[i] = x * y; break;
    }
  }
  n.lhs = a.id();
  n.rhs = b.id();
  n.needs_grad = na.needs_grad || nb.needs_grad;
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) { return elementwise(Op::Add, a, b); }
Var Tape::sub(Var a, Var b) { return elementwise(Op::Sub, a, b); }
Var Tape::mul(Var a, Var b) { return elementwise(Op::Mul, a, b); }

Var Tape::scale(Var a, double factor) {
  const auto& na = node(a);
  Node n;
  n.op = Op::Scale;
  n.shape = na.shape;
  n.value.resize(na.value.size());
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = factor * na.value[i];
  n.factor = factor;
  n.lhs = a.id();
  n.needs_grad = na.needs_grad;
  return push(std::move(n));
}

Var Tape::concat_last(Var a, Var b) {
  const auto& na = node(a);
  const auto& nb = node(b);
  if (na.shape.empty() || na.shape.size() != nb.shape.size() ||
      !std::equal(na.shape.begin(), na.shape.end() - 1, nb.shape.begin())) {
    throw Error(ErrorKind::ShapeMismatch, "concat " + shape_str(na.shape) + " with " + shape_str(nb.shape));
  }
  const std::size_t ca = na.shape.back(), cb = nb.shape.back();
  const std::size_t rows = shape_size(Shape(na.shape.begin(), na.shape.end() - 1));
  Node n;
  n.op = Op::ConcatLast;
  n.shape = na.shape;
  n.shape.back() = ca + cb;
  n.value.resize(rows * (ca + cb));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(na.value.begin() + r * ca, ca, n.value.begin() + r * (ca + cb));
    std::copy_n(nb.value.begin() + r * cb, cb, n.value.begin() + r * (ca + cb) + ca);
  }
  n.lhs = a.id();
  n.rhs = b.id();
  n.needs_grad = na.needs_grad || nb.needs_grad;
  return push(std::move(n));
}

Var Tape::slice_last(Var a, std::size_t begin, std::size_t end) {
  const auto& na = node(a);
  const std::size_t c = last_of(na.shape);
  if (na.shape.empty() || begin > end || end > c) {
    throw Error(ErrorKind::ShapeMismatch, "slice [" + std::to_string(begin) + "," + std::to_string(end) +
                                              ") of " + shape_str(na.shape));
  }
  const std::size_t rows = c == 0 ? 0 : na.value.size() / c;
  const std::size_t w = end - begin;
  Node n;
  n.op = Op::SliceLast;
  n.shape = na.shape;
  n.shape.back() = w;
  n.value.resize(rows * w);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(na.value.begin() + r * c + begin, w, n.value.begin() + r * w);
  }
  n.begin = begin;
  n.end = end;
  n.lhs = a.id();
  n.needs_grad = na.needs_grad;
  return push(std::move(n));
}

Var Tape::slice_rows(Var a, std::size_t begin, std::size_t end) {
  const auto& na = node(a);
  const std::size_t r = rows_of(na.shape);
  if (na.shape.empty() || begin > end || end > r) {
    throw Error(ErrorKind::ShapeMismatch, "row slice [" + std::to_string(begin) + "," + std::to_string(end) +
                                              ") of " + shape_str(na.shape));
  }
  const std::size_t width = r == 0 ? 0 : na.value.size() / r;
  Node n;
  n.op = Op::SliceRows;
  n.shape = na.shape;
  n.shape.front() = end - begin;
  n.value.assign(na.value.begin() + begin * width, na.value.begin() + end * width);
  n.begin = begin;
  n.end = end;
  n.lhs = a.id();
  n.needs_grad = na.needs_grad;
  return push(std::move(n));
}

Var Tape::gather_rows(Var a, std::vector<std::size_t> rows) {
  const auto& na = node(a);
  const std::size_t r = rows_of(na.shape);
  if (na.shape.empty()) throw Error(ErrorKind::ShapeMismatch, "gather from scalar");
  const std::size_t width = r == 0 ? 0 : na.value.size() / r;
  Node n;
  n.op = Op::GatherRows;
  n.shape = na.shape;
  n.shape.front() = rows.size();
  n.value.resize(rows.size() * width);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= r) throw Error(ErrorKind::ShapeMismatch, "gather row out of range");
    std::copy_n(na.value.begin() + rows[i] * width, width, n.value.begin() + i * width);
  }
  n.rows = std::move(rows);
  n.lhs = a.id();
  n.needs_grad = na.needs_grad;
  return push(std::move(n));
}

Var Tape::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorKind::ShapeMismatch, "concat_rows of nothing");
  const Shape& first = node(parts.front()).shape;
  if (first.empty()) throw Error(ErrorKind::ShapeMismatch, "concat_rows of scalars");
  Node n;
  n.op = Op::ConcatRows;
  n.shape = first;
  n.shape.front() = 0;
  for (const Var p : parts) {
    const auto& np = node(p);
    if (np.shape.size() != first.size() || !std::equal(first.begin() + 1, first.end(), np.shape.begin() + 1)) {
      throw Error(ErrorKind::ShapeMismatch, "concat_rows " + shape_str(first) + " with " + shape_str(np.shape));
    }
    n.shape.front() += np.shape.front();
    n.value.insert(n.value.end(), np.value.begin(), np.value.end());
    n.parts.push_back(p.id());
    n.needs_grad = n.needs_grad || np.needs_grad;
  }
  return push(std::move(n));
}

Var Tape::sigmoid(Var x) {
  const auto& nx = node(x);
  Node n;
  n.op = Op::Sigmoid;
  n.shape = nx.shape;
  n.value.resize(nx.value.size());
  for (std::size_t i = 0; i < n.value.size(); ++i) {
    const double v = nx.value[i];
    // Split on sign so exp never overflows.
    if (v >= 0) {
      n.value[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      n.value[i] = e / (1.0 + e);
    }
  }
  n.lhs = x.id();
  n.needs_grad = nx.needs_grad;
  return push(std::move(n));
}

Var Tape::tanh(Var x) {
  const auto& nx = node(x);
  Node n;
  n.op = Op::Tanh;
  n.shape = nx.shape;
  n.value.resize(nx.value.size());
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = std::tanh(nx.value[i]);
  n.lhs = x.id();
  n.needs_grad = nx.needs_grad;
  return push(std::move(n));
}

Var Tape::softmax_last(Var x) {
  const auto& nx = node(x);
  const std::size_t c = last_of(nx.shape);
  const std::size_t rows = c == 0 ? 0 : nx.value.size() / c;
  Node n;
  n.op = Op::Softmax;
  n.shape = nx.shape;
  n.value.resize(nx.value.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = nx.value.data() + r * c;
    double* out = n.value.data() + r * c;
    const double mx = *std::max_element(in, in + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (out[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < c; ++j) out[j] /= z;
  }
  n.lhs = x.id();
  n.needs_grad = nx.needs_grad;
  return push(std::move(n));
}

Var Tape::log(Var x) {
  const auto& nx = node(x);
  Node n;
  n.op = Op::Log;
  n.shape = nx.shape;
  n.value.resize(nx.value.size());
  for (std::size_t i = 0; i < n.value.size(); ++i) {
    if (!(nx.value[i] > 0.0)) {
      throw Error(ErrorKind::DomainError, "log of non-positive value " + std::to_string(nx.value[i]));
    }
    n.value[i] = std::log(nx.value[i]);
  }
  n.lhs = x.id();
  n.needs_grad = nx.needs_grad;
  return push(std::move(n));
}

Var Tape::dropout(Var x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw Error(ErrorKind::InvalidRate, "dropout rate " + std::to_string(rate) + " outside [0,1)");
  }
  if (mode == Mode::eval || rate == 0.0) return x;
  const auto& nx = node(x);
  Node n;
  n.op = Op::Dropout;
  n.shape = nx.shape;
  n.value.resize(nx.value.size());
  n.saved.resize(nx.value.size());
  const double keep_scale = 1.0 / (1.0 - rate);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < n.value.size(); ++i) {
    n.saved[i] = unit(rng) < rate ? 0.0 : keep_scale;
    n.value[i] = nx.value[i] * n.saved[i];
  }
  n.lhs = x.id();
  n.needs_grad = nx.needs_grad;
  return push(std::move(n));
}

Var Tape::sum(Var x) {
  const auto& nx = node(x);
  Node n;
  n.op = Op::Sum;
  n.shape = {};
  n.value = {std::accumulate(nx.value.begin(), nx.value.end(), 0.0)};
  n.lhs = x.id();
  n.needs_grad = nx.needs_grad;
  return push(std::move(n));
}

Var Tape::affine(Var x, Var w, Var b) {
  const auto& nb = node(b);
  const auto& nw = node(w);
  if (nb.shape.size() != 2 || nw.shape.size() != 2 || nb.shape[0] != 1 || nb.shape[1] != nw.shape[1]) {
    throw Error(ErrorKind::ShapeMismatch, "bias " + shape_str(nb.shape) + " for weight " + shape_str(nw.shape));
  }
  const Var xw = matmul(x, w);
  const Var ones = constant(Tensor(Shape{shape(xw)[0], 1}, 1.0));
  return add(xw, matmul(ones, b));
}

Var Tape::scalar_function(Var input, double value, std::vector<double> derivative) {
  const auto& ni = node(input);
  if (derivative.size() != ni.value.size()) {
    throw Error(ErrorKind::ShapeMismatch, "derivative length does not match input");
  }
  Node n;
  n.op = Op::ScalarFn;
  n.shape = {};
  n.value = {value};
  n.saved = std::move(derivative);
  n.lhs = input.id();
  n.needs_grad = ni.needs_grad;
  return push(std::move(n));
}

const Shape& Tape::shape(Var v) const { return node(v).shape; }

std::span<const double> Tape::values(Var v) const { return node(v).value; }

Tensor Tape::tensor(Var v) const {
  const auto& n = node(v);
  return Tensor(n.shape, n.value);
}

double Tape::item(Var v) const {
  const auto& n = node(v);
  if (n.value.size() != 1) throw Error(ErrorKind::NotScalar, "value of shape " + shape_str(n.shape));
  return n.value[0];
}

bool Tape::requires_grad(Var v) const { return node(v).needs_grad; }

void Tape::backward(Var loss) {
  const auto& nl = node(loss);
  if (nl.value.size() != 1) throw Error(ErrorKind::NotScalar, "loss of shape " + shape_str(nl.shape));
  for (auto& n : nodes_) n.grad.clear();
  grad_of(loss.id())[0] = 1.0;
  for (std::uint32_t id = loss.id() + 1; id-- > 0;) {
    if (!nodes_[id].needs_grad || nodes_[id].grad.empty()) continue;
    backprop_node(id);
  }
}

void Tape::backprop_node(std::uint32_t id) {
  Node& n = nodes_[id];
  const std::vector<double>& g = n.grad;
  auto wants = [&](std::uint32_t in) { return in != Var::kInvalid && nodes_[in].needs_grad; };

  switch (n.op) {
    case Op::Leaf: {
      for (std::size_t i = 0; i < n.sink.size(); ++i) n.sink[i] += g[i];
      break;
    }
    case Op::MatMul: {
      const auto& A = nodes_[n.lhs].value;
      const auto& B = nodes_[n.rhs].value;
      const std::size_t m = nodes_[n.lhs].shape[0], k = nodes_[n.lhs].shape[1], p = nodes_[n.rhs].shape[1];
      if (wants(n.lhs)) {
        auto& ga = grad_of(n.lhs);
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * p;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double* brow = B.data() + kk * p;
            double acc = 0.0;
            for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
            ga[i * k + kk] += acc;
          }
        }
      }
      if (wants(n.rhs)) {
        auto& gb = grad_of(n.rhs);
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * p;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = A[i * k + kk];
            if (aik == 0.0) continue;
            double* gbrow = gb.data() + kk * p;
            for (std::size_t j = 0; j < p; ++j) gbrow[j] += aik * grow[j];
          }
        }
      }
      break;
    }
    case Op::Add:
    case Op::Sub:
    case Op::Mul: {
      const std::size_t mode = n.begin;
      const auto& a = nodes_[n.lhs].value;
      const auto& b = nodes_[n.rhs].value;
      const double sign = n.op == Op::Sub ? -1.0 : 1.0;
      if (wants(n.lhs)) {
        auto& ga = grad_of(n.lhs);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double d = n.op == Op::Mul ? g[i] * (mode == 2 ? b[0] : b[i]) : g[i];
          ga[mode == 1 ? 0 : i] += d;
        }
      }
      if (wants(n.rhs)) {
        auto& gb = grad_of(n.rhs);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double d = n.op == Op::Mul ? g[i] * (mode == 1 ? a[0] : a[i]) : sign * g[i];
          gb[mode == 2 ? 0 : i] += d;
        }
      }
      break;
    }
    case Op::Scale: {
      if (wants(n.lhs)) {
        auto& ga = grad_of(n.lhs);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.factor * g[i];
      }
      break;
    }
    case Op::ConcatLast: {
      const std::size_t ca = nodes_[n.lhs].shape.back();
      const std::size_t cb = nodes_[n.rhs].shape.back();
      const std::size_t w = ca + cb;
      const std::size_t rows = w == 0 ? 0 : g.size() / w;
      if (wants(n.lhs)) {
        auto& ga = grad_of(n.lhs);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < ca; ++j) ga[r * ca + j] += g[r * w + j];
      }
      if (wants(n.rhs)) {
        auto& gb = grad_of(n.rhs);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < cb; ++j) gb[r * cb + j] += g[r * w + ca + j];
      }
      break;
    }
    case Op::SliceLast: {
      if (wants(n.lhs)) {
        auto& ga = grad_of(n.lhs);
        const std::size_t c = nodes_[n.lhs].shape.back();
        const std::size_t w = n.end - n.begin;
        const std::size_t rows = w == 0 ? 0 : g.size() / w;
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < w; ++j) ga[r * c + n.begin + j] += g[r * w + j];
      }
      break;
    }
    case Op::SliceRows: {
      if (wants(n.lhs)) {
        auto& ga = grad_of(n.lhs);
        const std::size_t r = nodes_[n.lhs].shape.front();
        const std::size_t width = r == 0 ? 0 : ga.size() / r;
        for (std::size_t i = 0; i < g.size(); ++i) ga[n.begin * width + i] += g[i];
      }
      break;
    }
    case Op::GatherRows: {
      if (wants(n.lhs)) {
        auto& ga = grad_of(n.lhs);
        const std::size_t width = n.rows.empty() ? 0 : g.size() / n.rows.size();
        for (std::size_t i = 0; i < n.rows.size(); ++i)
          for (std::size_t j = 0; j < width; ++j) ga[n.rows[i] * width + j] += g[i * width + j];
      }
      break;
    }
    case Op::ConcatRows: {
      std::size_t offset = 0;
      for (const auto part : n.parts) {
        const std::size_t len = nodes_[part].value.size();
        if (wants(part)) {
          auto& gp = grad_of(part);
          for (std::size_t i = 0; i < len; ++i) gp[i] += g[offset + i];
        }
        offset += len;
      }
      break;
    }
    case Op::Sigmoid: {
      if (wants(n.lhs)) {
        auto& ga = grad_of(n.lhs);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
      }
      break;
    }
    case Op::Tanh: {
      if (wants(n.lhs)) {
        auto& ga = grad_of(n.lhs);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
      }
      break;
    }
    case Op::Softmax: {
      if (wants(n.lhs)) {
        auto& ga = grad_of(n.lhs);
        const std::size_t c = n.shape.back();
        const std::size_t rows = c == 0 ? 0 : g.size() / c;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = n.value.data() + r * c;
          const double* gr = g.data() + r * c;
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += gr[j] * y[j];
          for (std::size_t j = 0; j < c; ++j) ga[r * c + j] += y[j] * (gr[j] - dot);
        }
      }
      break;
    }
    case Op::Log: {
      if (wants(n.lhs)) {
        auto& ga = grad_of(n.lhs);
        const auto& x = nodes_[n.lhs].value;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
      }
      break;
    }
    case Op::Dropout: {
      if (wants(n.lhs)) {
        auto& ga = grad_of(n.lhs);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.saved[i];
      }
      break;
    }
    case Op::Sum: {
      if (wants(n.lhs)) {
        auto& ga = grad_of(n.lhs);
        for (auto& v : ga) v += g[0];
      }
      break;
    }
    case Op::ScalarFn: {
      if (wants(n.lhs)) {
        auto& ga = grad_of(n.lhs);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * n.saved[i];
      }
      break;
    }
  }
}

}  // namespace dilbench
