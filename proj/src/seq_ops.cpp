#include "mattn/seq_ops.hpp"

#include <cmath>
#include <limits>

namespace mattn {

namespace {

using detail::Node;
using Eigen::Index;
using StridedView = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstStridedView = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

void check_layout(const Tensor& x, const SeqLayout& l, const char* op) {
  if (x.rows() != l.batch * l.seq_len || l.n_heads == 0 || x.cols() % l.n_heads != 0) {
    throw DimensionError(std::string(op) + ": tensor " + to_string(x.shape()) + " does not match layout B=" +
                         std::to_string(l.batch) + " T=" + std::to_string(l.seq_len) +
                         " H=" + std::to_string(l.n_heads));
  }
}

void rotate_rows(const double* in, double* out, std::size_t rows_total, std::size_t width, std::size_t head_dim,
                 std::size_t seq_len, const RotaryTable& table, double sign) {
  const std::size_t pairs = head_dim / 2;
  for (std::size_t r = 0; r < rows_total; ++r) {
    const std::size_t t = r % seq_len;
    const double* c = table.cos.data() + t * pairs;
    const double* s = table.sin.data() + t * pairs;
    const double* src = in + r * width;
    double* dst = out + r * width;
    for (std::size_t h0 = 0; h0 < width; h0 += head_dim) {
      for (std::size_t m = 0; m < pairs; ++m) {
        const double a = src[h0 + 2 * m], b = src[h0 + 2 * m + 1];
        const double sn = sign * s[m];
        dst[h0 + 2 * m] += c[m] * a - sn * b;
        dst[h0 + 2 * m + 1] += sn * a + c[m] * b;
      }
    }
  }
}

}  // namespace

RotaryTable RotaryTable::build(const std::vector<double>& freqs, std::size_t seq_len) {
  RotaryTable t;
  t.seq_len = seq_len;
  t.pairs = freqs.size();
  t.cos.resize(seq_len * t.pairs);
  t.sin.resize(seq_len * t.pairs);
  for (std::size_t i = 0; i < seq_len; ++i) {
    for (std::size_t m = 0; m < t.pairs; ++m) {
      const double angle = static_cast<double>(i) * freqs[m];
      t.cos[i * t.pairs + m] = std::cos(angle);
      t.sin[i * t.pairs + m] = std::sin(angle);
    }
  }
  return t;
}

Tensor rotary(const Tensor& x, const SeqLayout& layout, const RotaryTable& table, bool inverse) {
  check_layout(x, layout, "rotary");
  const std::size_t width = x.cols();
  const std::size_t head_dim = width / layout.n_heads;
  if (head_dim != 2 * table.pairs || table.seq_len < layout.seq_len) {
    throw DimensionError("rotary table does not cover head_dim " + std::to_string(head_dim) + " / seq_len " +
                         std::to_string(layout.seq_len));
  }
  const std::size_t rows = x.rows(), T = layout.seq_len;
  const double sign = inverse ? -1.0 : 1.0;
  std::vector<double> out(x.numel(), 0.0);
  rotate_rows(x.data().data(), out.data(), rows, width, head_dim, T, table, sign);
  return make_result("rotary", x.shape(), std::move(out), {x},
                     [rows, width, head_dim, T, table, sign](Node& self) {
                       rotate_rows(self.grad.data(), self.parents[0]->grad_buffer(), rows, width, head_dim, T, table,
                                   -sign);
                     });
}

Tensor momentum_augment(const Tensor& x, const SeqLayout& layout, const MomentumParams& params) {
  check_layout(x, layout, "momentum_augment");
  if (params.gamma == 0.0) return x;
  const Index T = static_cast<Index>(layout.seq_len);
  const Index W = static_cast<Index>(x.cols());
  std::vector<double> out(x.numel());
  for (std::size_t b = 0; b < layout.batch; ++b) {
    const Index off = static_cast<Index>(b) * T * W;
    ConstMatrixView in(x.data().data() + off, T, W);
    MatrixView(out.data() + off, T, W) = augment(in, params);
  }
  const std::size_t batch = layout.batch;
  return make_result("momentum", x.shape(), std::move(out), {x}, [batch, T, W, params](Node& self) {
    double* g = self.parents[0]->grad_buffer();
    for (std::size_t b = 0; b < batch; ++b) {
      const Index off = static_cast<Index>(b) * T * W;
      MatrixView(g + off, T, W) += augment_adjoint(ConstMatrixView(self.grad.data() + off, T, W), params);
    }
  });
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, const SeqLayout& layout,
                        std::vector<double>* weights_out) {
  check_layout(q, layout, "causal_attention");
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw DimensionError("causal_attention: q, k, v shapes differ");
  }
  const Index B = static_cast<Index>(layout.batch), T = static_cast<Index>(layout.seq_len);
  const Index H = static_cast<Index>(layout.n_heads), W = static_cast<Index>(q.cols()), dh = W / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B * H * T * T), 0.0);
  std::vector<double> out(q.numel(), 0.0);
  RowMatrix s(T, T);
  for (Index b = 0; b < B; ++b) {
    for (Index h = 0; h < H; ++h) {
      const Index off = b * T * W + h * dh;
      ConstStridedView qb(q.data().data() + off, T, dh, Eigen::OuterStride<>(W));
      ConstStridedView kb(k.data().data() + off, T, dh, Eigen::OuterStride<>(W));
      ConstStridedView vb(v.data().data() + off, T, dh, Eigen::OuterStride<>(W));
      s.noalias() = scale * qb * kb.transpose();
      MatrixView a(probs->data() + (b * H + h) * T * T, T, T);
      for (Index i = 0; i < T; ++i) {
        const double mx = s.row(i).head(i + 1).maxCoeff();
        double z = 0.0;
        for (Index j = 0; j <= i; ++j) {
          a(i, j) = std::exp(s(i, j) - mx);
          z += a(i, j);
        }
        a.row(i).head(i + 1) /= z;
      }
      StridedView(out.data() + off, T, dh, Eigen::OuterStride<>(W)).noalias() = a * vb;
    }
  }
  if (weights_out) *weights_out = *probs;

  return make_result("causal_attention", q.shape(), std::move(out), {q, k, v},
                     [B, T, H, W, dh, scale, probs](Node& self) {
                       Node& nq = *self.parents[0];
                       Node& nk = *self.parents[1];
                       Node& nv = *self.parents[2];
                       double* gq = nq.requires_grad ? nq.grad_buffer() : nullptr;
                       double* gk = nk.requires_grad ? nk.grad_buffer() : nullptr;
                       double* gv = nv.requires_grad ? nv.grad_buffer() : nullptr;
                       RowMatrix da(T, T);
                       for (Index b = 0; b < B; ++b) {
                         for (Index h = 0; h < H; ++h) {
                           const Index off = b * T * W + h * dh;
                           const Eigen::OuterStride<> st(W);
                           ConstStridedView go(self.grad.data() + off, T, dh, st);
                           ConstStridedView qb(nq.data.data() + off, T, dh, st);
                           ConstStridedView kb(nk.data.data() + off, T, dh, st);
                           ConstStridedView vb(nv.data.data() + off, T, dh, st);
                           ConstMatrixView a(probs->data() + (b * H + h) * T * T, T, T);
                           if (gv) StridedView(gv + off, T, dh, st).noalias() += a.transpose() * go;
                           if (!gq && !gk) continue;
                           da.noalias() = go * vb.transpose();
                           for (Index i = 0; i < T; ++i) {
                             const double dot = a.row(i).head(i + 1).dot(da.row(i).head(i + 1));
                             da.row(i).head(i + 1) =
                                 (a.row(i).head(i + 1).array() * (da.row(i).head(i + 1).array() - dot)) * scale;
                             da.row(i).tail(T - i - 1).setZero();
                           }
                           if (gq) StridedView(gq + off, T, dh, st).noalias() += da * kb;
                           if (gk) StridedView(gk + off, T, dh, st).noalias() += da.transpose() * qb;
                         }
                       }
                     });
}

}  // namespace mattn
