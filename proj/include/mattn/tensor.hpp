#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mattn/errors.hpp"

namespace mattn {

using Shape = std::vector<std::size_t>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixView = Eigen::Map<RowMatrix>;
using ConstMatrixView = Eigen::Map<const RowMatrix>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

// One vertex of the dynamically built tape. Interior nodes keep their
// parents alive and a closure that pushes this node's gradient into them.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  double* grad_buffer();  // allocates zeros on first use
};

inline thread_local int no_grad_depth = 0;

}  // namespace detail

/// Disables tape construction for its lifetime (evaluation, probing).
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

/// Dense row-major array of doubles with an optional reverse-mode tape.
///
/// A Tensor is a shared handle: copies alias the same storage and graph
/// vertex. Values are immutable after construction except through
/// `mutable_data()` on leaves (the optimizer) and the gradient slot.
/// Any rank >= 2 tensor can be viewed as a matrix of
/// `rows() = product of leading dims` by `cols() = last dim`.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor from_matrix(const Eigen::Ref<const RowMatrix>& m, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, double stddev, std::mt19937_64& rng, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const { return data().size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  ConstMatrixView matrix() const;
  RowMatrix to_matrix() const { return matrix(); }
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  /// Gradient values; zeros when nothing has been accumulated yet.
  std::vector<double> grad() const;
  ConstMatrixView grad_matrix() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Reverse-mode sweep from this scalar. Gradients accumulate into leaves.
  void backward() const;

  /// Same storage viewed under a new shape with equal element count.
  Tensor reshape(Shape shape) const;
  /// Copy of the values with no tape history.
  Tensor detach() const;

  const std::string& op() const;
  std::shared_ptr<detail::Node> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> node);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Builds the result vertex of an op. `parents` participate in the tape
/// only when gradients are enabled and at least one requires them; the
/// result's values must be finite or NonFiniteError is thrown.
Tensor make_result(std::string op, Shape shape, std::vector<double> values,
                   std::vector<Tensor> parents, std::function<void(detail::Node&)> backward);

// ---------------------------------------------------------------------------
// Differentiable operations.

/// [m x k] * [k x n]. `a` may have rank > 2; it is treated as rows() x cols().
Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T for 2-D operands.
Tensor matmul_transposed(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// Adds a length-cols() vector to every row.
Tensor add_row_vector(const Tensor& a, const Tensor& v);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor relu(const Tensor& a);

/// Row-wise softmax over the last dimension. Masked entries (mask value
/// false) are excluded and come out exactly zero. A fully masked row is an
/// error.
Tensor softmax_lastdim(const Tensor& x, const std::vector<bool>* mask = nullptr);

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

/// Gathers rows of `table` [V x d]; result has shape ids_shape + {d}.
Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids, Shape ids_shape);
/// Rows `index` of the matrix view of `x`, as a [index.size() x cols] tensor.
Tensor select_rows(const Tensor& x, std::span<const std::size_t> index);

/// Inverted dropout with a caller-owned generator. p == 0 is the identity.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

struct CrossEntropy {
  Tensor loss;                       // scalar mean
  std::vector<double> per_position;  // -log softmax(logits)[target] per row
};

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits` [N x V].
CrossEntropy cross_entropy_logits(const Tensor& logits, std::span<const std::int64_t> targets);

// ---------------------------------------------------------------------------
// Finite-difference checking.

/// Scalar-valued function of one tensor; must rebuild its graph per call.
using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Max over coordinates of |analytic - central difference| divided by
/// max(|analytic|, |fd|, 1e-8).
double grad_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

/// Same measure for many leaves at once: `loss` rebuilds the graph from the
/// current leaf values, which are perturbed in place.
double grad_check_params(const std::function<Tensor()>& loss, std::vector<Tensor> leaves, double h = 1e-5,
                         std::size_t max_coords_per_leaf = 0);

}  // namespace mattn
