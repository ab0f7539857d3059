#include "mattn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace mattn {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

double* detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad.data();
}

namespace {

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel(shape) != values.size()) {
    throw DimensionError("shape " + to_string(shape) + " does not hold " + std::to_string(values.size()) +
                         " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  node->op = "leaf";
  return node;
}

void require_defined(const std::shared_ptr<detail::Node>& n) {
  if (!n) throw ContractError("operation on an undefined tensor");
}

}  // namespace

Tensor Tensor::wrap(std::shared_ptr<detail::Node> node) { return Tensor(std::move(node)); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> v(mattn::numel(shape), 0.0);
  return Tensor(make_leaf(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(mattn::numel(shape), value);
  return Tensor(make_leaf(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::from_matrix(const Eigen::Ref<const RowMatrix>& m, bool requires_grad) {
  std::vector<double> v(static_cast<std::size_t>(m.size()));
  MatrixView(v.data(), m.rows(), m.cols()) = m;
  return from({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(v),
              requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::randn(Shape shape, double stddev, std::mt19937_64& rng, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(mattn::numel(shape));
  for (auto& x : v) x = dist(rng);
  return from(std::move(shape), std::move(v), requires_grad);
}

const Shape& Tensor::shape() const {
  require_defined(node_);
  return node_->shape;
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  return s.empty() ? 1 : s.back();
}

std::size_t Tensor::rows() const {
  const auto c = cols();
  return c == 0 ? 0 : numel() / c;
}

std::span<const double> Tensor::data() const {
  require_defined(node_);
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  require_defined(node_);
  return node_->data;
}

ConstMatrixView Tensor::matrix() const {
  return ConstMatrixView(data().data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return data()[0];
}

bool Tensor::requires_grad() const {
  require_defined(node_);
  return node_->requires_grad;
}

Tensor& Tensor::set_requires_grad(bool flag) {
  require_defined(node_);
  node_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const {
  require_defined(node_);
  return !node_->grad.empty();
}

std::vector<double> Tensor::grad() const {
  require_defined(node_);
  if (node_->grad.empty()) return std::vector<double>(node_->data.size(), 0.0);
  return node_->grad;
}

ConstMatrixView Tensor::grad_matrix() const {
  require_defined(node_);
  node_->grad_buffer();
  return ConstMatrixView(node_->grad.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
}

std::span<double> Tensor::mutable_grad() {
  require_defined(node_);
  node_->grad_buffer();
  return node_->grad;
}

void Tensor::zero_grad() {
  require_defined(node_);
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

const std::string& Tensor::op() const {
  require_defined(node_);
  return node_->op;
}

void Tensor::backward() const {
  require_defined(node_);
  if (numel() != 1) {
    throw ContractError("backward() needs a scalar root, got shape " + to_string(shape()));
  }
  if (!node_->requires_grad) return;  // constant loss: nothing to do

  // Post-order DFS gives a topological order; walk it in reverse.
  std::vector<detail::Node*> order;
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // Interior gradients are per-sweep scratch; leaves accumulate across calls.
  for (auto* n : order) {
    if (n->backward) std::fill(n->grad.begin(), n->grad.end(), 0.0);
  }
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

Tensor Tensor::reshape(Shape new_shape) const {
  if (mattn::numel(new_shape) != numel()) {
    throw DimensionError("cannot reshape " + to_string(shape()) + " to " + to_string(new_shape));
  }
  std::vector<double> values(data().begin(), data().end());
  return make_result("reshape", std::move(new_shape), std::move(values), {*this}, [](detail::Node& self) {
    auto* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor Tensor::detach() const {
  return from(shape(), std::vector<double>(data().begin(), data().end()), false);
}

Tensor make_result(std::string op, Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                   std::function<void(detail::Node&)> backward) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NonFiniteError("non-finite value produced by " + op);
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->op = std::move(op);
  bool track = false;
  if (grad_enabled()) {
    for (const auto& p : parents) track = track || p.requires_grad();
  }
  if (track) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Tensor::wrap(std::move(node));
}

double grad_check(const ScalarFn& f, const Tensor& x, double h) {
  if (!(h > 0)) throw ContractError("grad_check step must be positive");
  Tensor leaf = Tensor::from(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  Tensor loss = f(leaf);
  if (!std::isfinite(loss.item())) throw NonFiniteError("grad_check: function value is not finite");
  loss.backward();
  const std::vector<double> analytic = leaf.grad();

  double worst = 0.0;
  auto values = leaf.mutable_data();
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + h;
    const double up = f(leaf).item();
    values[i] = orig - h;
    const double down = f(leaf).item();
    values[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) throw NonFiniteError("grad_check: perturbed value not finite");
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(fd), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - fd) / denom);
  }
  return worst;
}

double grad_check_params(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves, double h,
                         std::size_t max_coords_per_leaf) {
  if (!(h > 0)) throw ContractError("grad_check step must be positive");
  for (auto& l : leaves) l.zero_grad();
  Tensor loss = loss_fn();
  if (!std::isfinite(loss.item())) throw NonFiniteError("grad_check: function value is not finite");
  loss.backward();

  double worst = 0.0;
  NoGradGuard no_grad;
  for (auto& leaf : leaves) {
    const std::vector<double> analytic = leaf.grad();
    auto values = leaf.mutable_data();
    const std::size_t n = values.size();
    const std::size_t stride = (max_coords_per_leaf == 0 || n <= max_coords_per_leaf) ? 1 : n / max_coords_per_leaf;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = values[i];
      values[i] = orig + h;
      const double up = loss_fn().item();
      values[i] = orig - h;
      const double down = loss_fn().item();
      values[i] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(fd), 1e-8});
      worst = std::max(worst, std::abs(analytic[i] - fd) / denom);
    }
  }
  return worst;
}

}  // namespace mattn
