#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <vector>

#include "dilbench/rng.hpp"

namespace dilbench {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape) noexcept;

// Dense row-major tensor of doubles. A tensor with requires_grad set owns a
// gradient buffer of the same shape that Tape::backward accumulates into.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
  // Width of the last dimension (1 for scalars).
  [[nodiscard]] std::size_t last_dim() const noexcept;
  [[nodiscard]] std::size_t outer_size() const noexcept;

  [[nodiscard]] std::span<double> values() noexcept { return values_; }
  [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  [[nodiscard]] double at(std::size_t row, std::size_t col) const;
  [[nodiscard]] double item() const;

  [[nodiscard]] bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on);
  [[nodiscard]] bool has_grad() const noexcept { return grad_.has_value(); }
  [[nodiscard]] std::span<const double> grad() const;
  // Gradient storage, allocated (zeroed) on first use.
  std::span<double> grad_buffer();
  void zero_grad();

 private:
  Shape shape_;
  std::vector<double> values_;
  bool requires_grad_ = false;
  std::optional<std::vector<double>> grad_;
};

enum class Mode { train, eval };

// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  [[nodiscard]] bool valid() const noexcept { return id_ != kInvalid; }
  [[nodiscard]] std::uint32_t id() const noexcept { return id_; }

 private:
  friend class Tape;
  explicit Var(std::uint32_t id) : id_(id) {}
  static constexpr std::uint32_t kInvalid = 0xffffffffu;
  std::uint32_t id_ = kInvalid;
};

// Reverse-mode computation record. Every op appends one node; backward walks
// the nodes once in reverse execution order. Not thread-safe: one tape per
// thread of execution.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Records `tensor`; when it requires grad, backward accumulates into its
  // gradient buffer. The tensor must outlive any backward call.
  Var leaf(Tensor& tensor);
  // Parameter stored outside any Tensor (e.g. a view of a flat parameter
  // vector). Backward accumulates into `grad_sink`.
  Var parameter(std::span<const double> values, Shape shape, std::span<double> grad_sink);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var concat_last(Var a, Var b);
  Var slice_last(Var a, std::size_t begin, std::size_t end);
  Var slice_rows(Var a, std::size_t begin, std::size_t end);
  Var gather_rows(Var a, std::vector<std::size_t> rows);
  Var concat_rows(std::span<const Var> parts);

  Var sigmoid(Var x);
  Var tanh(Var x);
  Var softmax_last(Var x);
  Var log(Var x);
  Var dropout(Var x, double rate, Mode mode, Rng& rng);

  Var sum(Var x);
  // x @ w + 1 b, with b of shape 1 x cols(w).
  Var affine(Var x, Var w, Var b);
  // A scalar node whose value and derivative w.r.t. `input` were computed by
  // the caller (used for fused losses).
  Var scalar_function(Var input, double value, std::vector<double> derivative);

  void backward(Var loss);

  [[nodiscard]] const Shape& shape(Var v) const;
  [[nodiscard]] std::span<const double> values(Var v) const;
  [[nodiscard]] Tensor tensor(Var v) const;
  [[nodiscard]] double item(Var v) const;
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
  [[nodiscard]] bool requires_grad(Var v) const;

 private:
  enum class Op : std::uint8_t {
    Leaf, MatMul, Add, Sub, Mul, Scale, ConcatLast, SliceLast, SliceRows,
    GatherRows, ConcatRows, Sigmoid, Tanh, Softmax, Log, Dropout, Sum, ScalarFn,
  };

  struct Node {
    Op op = Op::Leaf;
    bool needs_grad = false;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::uint32_t lhs = Var::kInvalid;
    std::uint32_t rhs = Var::kInvalid;
    std::vector<std::uint32_t> parts;
    std::size_t begin = 0;
    std::size_t end = 0;
    double factor = 0.0;
    std::vector<double> saved;
    std::vector<std::size_t> rows;
    std::span<double> sink;
  };

  Var push(Node node);
  const Node& node(Var v) const;
  std::vector<double>& grad_of(std::uint32_t id);
  Var elementwise(Op op, Var a, Var b);
  void backprop_node(std::uint32_t id);

  std::vector<Node> nodes_;
};

}  // namespace dilbench
