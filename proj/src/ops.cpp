#include <algorithm>
#include <cmath>
#include <numbers>

#include "mattn/tensor.hpp"

namespace mattn {

namespace {

using detail::Node;
using Eigen::Index;

MatrixView grad_view(Node& n, Index rows, Index cols) { return MatrixView(n.grad_buffer(), rows, cols); }

ConstMatrixView value_view(const Node& n, Index rows, Index cols) { return ConstMatrixView(n.data.data(), rows, cols); }

Index irows(const Tensor& t) { return static_cast<Index>(t.rows()); }
Index icols(const Tensor& t) { return static_cast<Index>(t.cols()); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

template <class F>
Tensor unary_elementwise(const char* name, const Tensor& a, F forward_fn, double (*derivative)(double)) {
  std::vector<double> out(a.numel());
  auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward_fn(in[i]);
  return make_result(name, a.shape(), std::move(out), {a}, [derivative](Node& self) {
    Node& p = *self.parents[0];
    double* g = p.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * derivative(p.data[i]);
  });
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
double gelu_derivative(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double silu_value(double x) { return x * sigmoid(x); }
double silu_derivative(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}
double relu_value(double x) { return x > 0 ? x : 0.0; }
double relu_derivative(double x) { return x > 0 ? 1.0 : 0.0; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2 || a.rank() < 2) {
    throw DimensionError("matmul expects rank>=2 x rank-2 operands, got " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  if (a.cols() != b.shape()[0]) {
    throw DimensionError("matmul inner dimensions differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const Index m = irows(a), k = icols(a), n = static_cast<Index>(b.shape()[1]);
  std::vector<double> out(static_cast<std::size_t>(m * n));
  MatrixView(out.data(), m, n).noalias() = a.matrix() * b.matrix();
  Shape shape = a.shape();
  shape.back() = static_cast<std::size_t>(n);
  return make_result("matmul", std::move(shape), std::move(out), {a, b}, [m, k, n](Node& self) {
    ConstMatrixView g(self.grad.data(), m, n);
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) grad_view(pa, m, k).noalias() += g * value_view(pb, k, n).transpose();
    if (pb.requires_grad) grad_view(pb, k, n).noalias() += value_view(pa, m, k).transpose() * g;
  });
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw DimensionError("matmul_transposed: incompatible " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const Index m = irows(a), k = icols(a), n = irows(b);
  std::vector<double> out(static_cast<std::size_t>(m * n));
  MatrixView(out.data(), m, n).noalias() = a.matrix() * b.matrix().transpose();
  return make_result("matmul_transposed", {static_cast<std::size_t>(m), static_cast<std::size_t>(n)}, std::move(out),
                     {a, b}, [m, k, n](Node& self) {
                       ConstMatrixView g(self.grad.data(), m, n);
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       if (pa.requires_grad) grad_view(pa, m, k).noalias() += g * value_view(pb, n, k);
                       if (pb.requires_grad) grad_view(pb, n, k).noalias() += g.transpose() * value_view(pa, m, k);
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      double* g = p->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) {
      double* g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      double* g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      double* g = pa.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      double* g = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pa.data[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  return make_result("scale", a.shape(), std::move(out), {a}, [s](Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += s * self.grad[i];
  });
}

Tensor add_row_vector(const Tensor& a, const Tensor& v) {
  if (v.numel() != a.cols()) {
    throw DimensionError("add_row_vector: vector of " + std::to_string(v.numel()) + " for rows of " +
                         std::to_string(a.cols()));
  }
  const Index r = irows(a), c = icols(a);
  std::vector<double> out(a.numel());
  MatrixView(out.data(), r, c) = a.matrix().rowwise() + Eigen::Map<const Eigen::RowVectorXd>(v.data().data(), c);
  return make_result("add_row_vector", a.shape(), std::move(out), {a, v}, [r, c](Node& self) {
    ConstMatrixView g(self.grad.data(), r, c);
    if (self.parents[0]->requires_grad) grad_view(*self.parents[0], r, c) += g;
    if (self.parents[1]->requires_grad) grad_view(*self.parents[1], 1, c) += g.colwise().sum();
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result("sum", {}, {s}, {a}, [](Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.parents[0]->data.size(); ++i) g[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor gelu(const Tensor& a) { return unary_elementwise("gelu", a, gelu_value, gelu_derivative); }
Tensor silu(const Tensor& a) { return unary_elementwise("silu", a, silu_value, silu_derivative); }
Tensor relu(const Tensor& a) { return unary_elementwise("relu", a, relu_value, relu_derivative); }

Tensor softmax_lastdim(const Tensor& x, const std::vector<bool>* mask) {
  if (mask && mask->size() != x.numel()) {
    throw DimensionError("softmax mask has " + std::to_string(mask->size()) + " entries for tensor " +
                         to_string(x.shape()));
  }
  const std::size_t r = x.rows(), c = x.cols();
  auto in = x.data();
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t off = i * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask || (*mask)[off + j]) mx = std::max(mx, in[off + j]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw DegenerateError("softmax row " + std::to_string(i) + " is fully masked");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask || (*mask)[off + j]) {
        out[off + j] = std::exp(in[off + j] - mx);
        z += out[off + j];
      }
    }
    for (std::size_t j = 0; j < c; ++j) out[off + j] /= z;
  }
  return make_result("softmax", x.shape(), std::move(out), {x}, [r, c](Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      const std::size_t off = i * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += self.grad[off + j] * self.data[off + j];
      for (std::size_t j = 0; j < c; ++j) g[off + j] += self.data[off + j] * (self.grad[off + j] - dot);
    }
  });
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  if (gain.numel() != x.cols()) throw DimensionError("rms_norm gain length must equal the last dimension");
  const Index r = irows(x), c = icols(x);
  std::vector<double> inv_rms(static_cast<std::size_t>(r));
  std::vector<double> out(x.numel());
  auto xm = x.matrix();
  Eigen::Map<const Eigen::RowVectorXd> gm(gain.data().data(), c);
  MatrixView om(out.data(), r, c);
  for (Index i = 0; i < r; ++i) {
    const double ms = xm.row(i).squaredNorm() / static_cast<double>(c);
    const double denom = std::sqrt(ms + eps);
    // eps = 0 on an all-zero row: the normalized row is defined as zero.
    inv_rms[static_cast<std::size_t>(i)] = denom > 0 ? 1.0 / denom : 0.0;
    om.row(i) = xm.row(i).cwiseProduct(gm) * inv_rms[static_cast<std::size_t>(i)];
  }
  return make_result("rms_norm", x.shape(), std::move(out), {x, gain},
                     [r, c, inv_rms = std::move(inv_rms)](Node& self) {
                       ConstMatrixView g(self.grad.data(), r, c);
                       Node& px = *self.parents[0];
                       Node& pg = *self.parents[1];
                       ConstMatrixView xv = value_view(px, r, c);
                       Eigen::Map<const Eigen::RowVectorXd> gv(pg.data.data(), c);
                       if (pg.requires_grad) {
                         Eigen::Map<Eigen::RowVectorXd> gg(pg.grad_buffer(), c);
                         for (Index i = 0; i < r; ++i) {
                           gg += g.row(i).cwiseProduct(xv.row(i)) * inv_rms[static_cast<std::size_t>(i)];
                         }
                       }
                       if (px.requires_grad) {
                         MatrixView gx = grad_view(px, r, c);
                         for (Index i = 0; i < r; ++i) {
                           const double s = inv_rms[static_cast<std::size_t>(i)];
                           const Eigen::RowVectorXd gy = g.row(i).cwiseProduct(gv);
                           const double proj = gy.dot(xv.row(i));
                           gx.row(i) += s * gy - (s * s * s / static_cast<double>(c)) * proj * xv.row(i);
                         }
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (gain.numel() != x.cols() || bias.numel() != x.cols()) {
    throw DimensionError("layer_norm gain/bias length must equal the last dimension");
  }
  const Index r = irows(x), c = icols(x);
  RowMatrix xhat(r, c);
  std::vector<double> inv_std(static_cast<std::size_t>(r));
  auto xm = x.matrix();
  for (Index i = 0; i < r; ++i) {
    const double mu = xm.row(i).mean();
    const double var = (xm.row(i).array() - mu).square().mean();
    const double denom = std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = denom > 0 ? 1.0 / denom : 0.0;
    xhat.row(i) = (xm.row(i).array() - mu) * inv_std[static_cast<std::size_t>(i)];
  }
  std::vector<double> out(x.numel());
  Eigen::Map<const Eigen::RowVectorXd> gm(gain.data().data(), c);
  Eigen::Map<const Eigen::RowVectorXd> bm(bias.data().data(), c);
  MatrixView(out.data(), r, c) = (xhat.array().rowwise() * gm.array()).rowwise() + bm.array();
  return make_result(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        ConstMatrixView g(self.grad.data(), r, c);
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        if (pg.requires_grad) {
          Eigen::Map<Eigen::RowVectorXd>(pg.grad_buffer(), c) += g.cwiseProduct(xhat).colwise().sum();
        }
        if (pb.requires_grad) Eigen::Map<Eigen::RowVectorXd>(pb.grad_buffer(), c) += g.colwise().sum();
        if (px.requires_grad) {
          Eigen::Map<const Eigen::RowVectorXd> gv(pg.data.data(), c);
          MatrixView gx = grad_view(px, r, c);
          const double n = static_cast<double>(c);
          for (Index i = 0; i < r; ++i) {
            const Eigen::RowVectorXd gy = g.row(i).cwiseProduct(gv);
            const double m1 = gy.mean();
            const double m2 = gy.dot(xhat.row(i)) / n;
            gx.row(i) += inv_std[static_cast<std::size_t>(i)] *
                         (gy.array() - m1 - xhat.row(i).array() * m2).matrix();
          }
        }
      });
}

Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids, Shape ids_shape) {
  if (table.rank() != 2) throw DimensionError("embedding table must be 2-D");
  if (numel(ids_shape) != ids.size()) throw DimensionError("embedding ids do not match their shape");
  const std::size_t vocab = table.shape()[0], d = table.shape()[1];
  std::vector<double> out(ids.size() * d);
  auto tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("token id " + std::to_string(ids[i]) + " outside vocabulary of " + std::to_string(vocab));
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ids[i]) * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  Shape shape = std::move(ids_shape);
  shape.push_back(d);
  std::vector<std::int64_t> id_copy(ids.begin(), ids.end());
  return make_result("embedding", std::move(shape), std::move(out), {table},
                     [d, id_copy = std::move(id_copy)](Node& self) {
                       double* g = self.parents[0]->grad_buffer();
                       for (std::size_t i = 0; i < id_copy.size(); ++i) {
                         double* row = g + static_cast<std::size_t>(id_copy[i]) * d;
                         const double* src = self.grad.data() + i * d;
                         for (std::size_t j = 0; j < d; ++j) row[j] += src[j];
                       }
                     });
}

Tensor select_rows(const Tensor& x, std::span<const std::size_t> index) {
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(index.size() * c);
  auto xv = x.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= r) throw IndexError("select_rows index " + std::to_string(index[i]) + " >= " + std::to_string(r));
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(index[i] * c), c,
                out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result("select_rows", {index.size(), c}, std::move(out), {x}, [c, idx = std::move(idx)](Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
    }
  });
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ContractError("dropout probability must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<double> m(x.numel());
  for (auto& v : m) v = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
  return mul(x, Tensor::from(x.shape(), std::move(m)));
}

CrossEntropy cross_entropy_logits(const Tensor& logits, std::span<const std::int64_t> targets) {
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) +
                         " rows");
  }
  if (n == 0) throw DimensionError("cross_entropy on zero rows");
  auto lv = logits.data();
  std::vector<double> probs(n * v);
  std::vector<double> per(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
      throw IndexError("target " + std::to_string(targets[i]) + " outside [0," + std::to_string(v) + ")");
    }
    const double* row = lv.data() + i * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      probs[i * v + j] = std::exp(row[j] - mx);
      z += probs[i * v + j];
    }
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= z;
    per[i] = std::log(z) + mx - row[static_cast<std::size_t>(targets[i])];
    total += per[i];
  }
  std::vector<std::int64_t> tg(targets.begin(), targets.end());
  Tensor loss = make_result("cross_entropy", {}, {total / static_cast<double>(n)}, {logits},
                            [n, v, probs = std::move(probs), tg = std::move(tg)](Node& self) {
                              double* g = self.parents[0]->grad_buffer();
                              const double s = self.grad[0] / static_cast<double>(n);
                              for (std::size_t i = 0; i < n; ++i) {
                                for (std::size_t j = 0; j < v; ++j) g[i * v + j] += s * probs[i * v + j];
                                g[i * v + static_cast<std::size_t>(tg[i])] -= s;
                              }
                            });
  return {std::move(loss), std::move(per)};
}

}  // namespace mattn
