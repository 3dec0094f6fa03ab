#include "gaaf/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>

namespace gaaf::ad {

namespace {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MapRM = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMapRM = Eigen::Map<const RowMatrix<Scalar>>;

void require_volumetric(const Shape& s, const char* op) {
  if (s.size() != 5)
    throw ShapeError(std::string(op) + ": expected [B,C,Z,Y,X], got " + to_string(s));
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

struct Grid {
  Eigen::Index z, y, x;
  Eigen::Index size() const { return z * y * x; }
};

// Rows of `col` are indexed by (channel, kz, ky, kx); columns by output voxel.
template <typename Scalar>
void im2col(const Scalar* in, Eigen::Index channels, Grid g, int k, Scalar* col) {
  const int pad = k / 2;
  const Eigen::Index n = g.size();
  Eigen::Index row = 0;
  for (Eigen::Index c = 0; c < channels; ++c) {
    const Scalar* plane = in + c * n;
    for (int kz = 0; kz < k; ++kz)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx, ++row) {
          Scalar* dst = col + row * n;
          const int dz = kz - pad, dy = ky - pad, dx = kx - pad;
          const Eigen::Index x_lo = std::max<Eigen::Index>(0, -dx);
          const Eigen::Index x_hi = std::min<Eigen::Index>(g.x, g.x - dx);
          for (Eigen::Index z = 0; z < g.z; ++z) {
            const Eigen::Index sz = z + dz;
            for (Eigen::Index y = 0; y < g.y; ++y) {
              Scalar* out = dst + (z * g.y + y) * g.x;
              const Eigen::Index sy = y + dy;
              if (sz < 0 || sz >= g.z || sy < 0 || sy >= g.y || x_lo >= x_hi) {
                std::fill(out, out + g.x, Scalar(0));
                continue;
              }
              const Scalar* src = plane + (sz * g.y + sy) * g.x;
              std::fill(out, out + x_lo, Scalar(0));
              std::copy(src + x_lo + dx, src + x_hi + dx, out + x_lo);
              std::fill(out + x_hi, out + g.x, Scalar(0));
            }
          }
        }
  }
}

template <typename Scalar>
void col2im_add(const Scalar* col, Eigen::Index channels, Grid g, int k, Scalar* in_grad) {
  const int pad = k / 2;
  const Eigen::Index n = g.size();
  Eigen::Index row = 0;
  for (Eigen::Index c = 0; c < channels; ++c) {
    Scalar* plane = in_grad + c * n;
    for (int kz = 0; kz < k; ++kz)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx, ++row) {
          const Scalar* src_row = col + row * n;
          const int dz = kz - pad, dy = ky - pad, dx = kx - pad;
          const Eigen::Index x_lo = std::max<Eigen::Index>(0, -dx);
          const Eigen::Index x_hi = std::min<Eigen::Index>(g.x, g.x - dx);
          if (x_lo >= x_hi) continue;
          for (Eigen::Index z = 0; z < g.z; ++z) {
            const Eigen::Index sz = z + dz;
            if (sz < 0 || sz >= g.z) continue;
            for (Eigen::Index y = 0; y < g.y; ++y) {
              const Eigen::Index sy = y + dy;
              if (sy < 0 || sy >= g.y) continue;
              const Scalar* src = src_row + (z * g.y + y) * g.x;
              Scalar* dst = plane + (sz * g.y + sy) * g.x;
              for (Eigen::Index x = x_lo; x < x_hi; ++x) dst[x + dx] += src[x];
            }
          }
        }
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv3d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias) {
  using Array = typename Tensor<Scalar>::Array;
  require_volumetric(input.shape(), "conv3d");
  const Shape& ws = weight.shape();
  if (ws.size() != 5 || ws[2] != ws[3] || ws[3] != ws[4] || ws[2] % 2 == 0)
    throw ShapeError("conv3d: weight must be [Cout,Cin,k,k,k] with odd k, got " + to_string(ws));
  const Eigen::Index batch = input.dim(0), cin = input.dim(1);
  const Eigen::Index cout = ws[0];
  const int k = static_cast<int>(ws[2]);
  if (ws[1] != cin)
    throw ShapeError("conv3d: input has " + std::to_string(cin) + " channels, weight expects " +
                     std::to_string(ws[1]));
  if (bias.shape() != Shape{cout}) throw ShapeError("conv3d: bias must be [Cout]");

  const Grid g{input.dim(2), input.dim(3), input.dim(4)};
  const Eigen::Index n = g.size();
  const Eigen::Index kdim = cin * k * k * k;
  const bool pointwise = (k == 1);

  Array out(batch * cout * n);
  ConstMapRM<Scalar> w(weight.data().data(), cout, kdim);
  RowMatrix<Scalar> col;
  if (!pointwise) col.resize(kdim, n);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Scalar* in_b = input.data().data() + b * cin * n;
    MapRM<Scalar> out_b(out.data() + b * cout * n, cout, n);
    if (pointwise) {
      out_b.noalias() = w * ConstMapRM<Scalar>(in_b, cin, n);
    } else {
      im2col(in_b, cin, g, k, col.data());
      out_b.noalias() = w * col;
    }
    out_b.colwise() += bias.data().matrix();
  }

  Shape out_shape{batch, cout, g.z, g.y, g.x};
  return Tensor<Scalar>::from_op(
      out_shape, std::move(out), {input, weight, bias},
      [batch, cin, cout, k, g, n, kdim, pointwise](Node<Scalar>& self) {
        Tensor<Scalar> x = self.parents[0], wt = self.parents[1], bs = self.parents[2];
        ConstMapRM<Scalar> wmat(wt.data().data(), cout, kdim);
        RowMatrix<Scalar> col_buf;
        if (!pointwise && (wt.requires_grad() || x.requires_grad())) col_buf.resize(kdim, n);
        for (Eigen::Index b = 0; b < batch; ++b) {
          ConstMapRM<Scalar> g_out(self.grad.data() + b * cout * n, cout, n);
          const Scalar* in_b = x.data().data() + b * cin * n;
          if (bs.requires_grad()) bs.mutable_grad().matrix() += g_out.rowwise().sum();
          if (wt.requires_grad()) {
            MapRM<Scalar> g_w(wt.mutable_grad().data(), cout, kdim);
            if (pointwise) {
              g_w.noalias() += g_out * ConstMapRM<Scalar>(in_b, cin, n).transpose();
            } else {
              im2col(in_b, cin, g, k, col_buf.data());
              g_w.noalias() += g_out * col_buf.transpose();
            }
          }
          if (x.requires_grad()) {
            Scalar* g_in = x.mutable_grad().data() + b * cin * n;
            if (pointwise) {
              MapRM<Scalar>(g_in, cin, n).noalias() += wmat.transpose() * g_out;
            } else {
              col_buf.noalias() = wmat.transpose() * g_out;
              col2im_add(col_buf.data(), cin, g, k, g_in);
            }
          }
        }
      });
}

template <typename Scalar>
Tensor<Scalar> avgpool2(const Tensor<Scalar>& input) {
  using Array = typename Tensor<Scalar>::Array;
  require_volumetric(input.shape(), "avgpool2");
  const Shape& s = input.shape();
  if (s[2] % 2 || s[3] % 2 || s[4] % 2)
    throw ShapeError("avgpool2: spatial dims must be even, got " + to_string(s));
  const Eigen::Index slices = s[0] * s[1];
  const Grid gi{s[2], s[3], s[4]};
  const Grid go{s[2] / 2, s[3] / 2, s[4] / 2};

  Array out = Array::Zero(slices * go.size());
  const Scalar* in = input.data().data();
  for (Eigen::Index c = 0; c < slices; ++c) {
    const Scalar* src = in + c * gi.size();
    Scalar* dst = out.data() + c * go.size();
    for (Eigen::Index z = 0; z < gi.z; ++z)
      for (Eigen::Index y = 0; y < gi.y; ++y) {
        const Scalar* row = src + (z * gi.y + y) * gi.x;
        Scalar* orow = dst + ((z / 2) * go.y + y / 2) * go.x;
        for (Eigen::Index x = 0; x < gi.x; ++x) orow[x / 2] += row[x];
      }
  }
  out *= Scalar(0.125);

  Shape out_shape{s[0], s[1], go.z, go.y, go.x};
  return Tensor<Scalar>::from_op(
      out_shape, std::move(out), {input}, [slices, gi, go](Node<Scalar>& self) {
        Tensor<Scalar> x = self.parents[0];
        Scalar* g_in = x.mutable_grad().data();
        for (Eigen::Index c = 0; c < slices; ++c) {
          const Scalar* g_out = self.grad.data() + c * go.size();
          Scalar* dst = g_in + c * gi.size();
          for (Eigen::Index z = 0; z < gi.z; ++z)
            for (Eigen::Index y = 0; y < gi.y; ++y) {
              const Scalar* orow = g_out + ((z / 2) * go.y + y / 2) * go.x;
              Scalar* row = dst + (z * gi.y + y) * gi.x;
              for (Eigen::Index x = 0; x < gi.x; ++x) row[x] += Scalar(0.125) * orow[x / 2];
            }
        }
      });
}

template <typename Scalar>
Tensor<Scalar> upsample_nn2(const Tensor<Scalar>& input) {
  using Array = typename Tensor<Scalar>::Array;
  require_volumetric(input.shape(), "upsample_nn2");
  const Shape& s = input.shape();
  const Eigen::Index slices = s[0] * s[1];
  const Grid gi{s[2], s[3], s[4]};
  const Grid go{s[2] * 2, s[3] * 2, s[4] * 2};

  Array out(slices * go.size());
  const Scalar* in = input.data().data();
  for (Eigen::Index c = 0; c < slices; ++c) {
    const Scalar* src = in + c * gi.size();
    Scalar* dst = out.data() + c * go.size();
    for (Eigen::Index z = 0; z < go.z; ++z)
      for (Eigen::Index y = 0; y < go.y; ++y) {
        const Scalar* irow = src + ((z / 2) * gi.y + y / 2) * gi.x;
        Scalar* row = dst + (z * go.y + y) * go.x;
        for (Eigen::Index x = 0; x < go.x; ++x) row[x] = irow[x / 2];
      }
  }

  Shape out_shape{s[0], s[1], go.z, go.y, go.x};
  return Tensor<Scalar>::from_op(
      out_shape, std::move(out), {input}, [slices, gi, go](Node<Scalar>& self) {
        Tensor<Scalar> x = self.parents[0];
        Scalar* g_in = x.mutable_grad().data();
        for (Eigen::Index c = 0; c < slices; ++c) {
          const Scalar* g_out = self.grad.data() + c * go.size();
          Scalar* dst = g_in + c * gi.size();
          for (Eigen::Index z = 0; z < go.z; ++z)
            for (Eigen::Index y = 0; y < go.y; ++y) {
              const Scalar* row = g_out + (z * go.y + y) * go.x;
              Scalar* irow = dst + ((z / 2) * gi.y + y / 2) * gi.x;
              for (Eigen::Index x = 0; x < go.x; ++x) irow[x / 2] += row[x];
            }
        }
      });
}

template <typename Scalar>
Tensor<Scalar> leaky_relu(const Tensor<Scalar>& x, Scalar slope) {
  typename Tensor<Scalar>::Array out =
      x.data().unaryExpr([slope](Scalar v) { return v > Scalar(0) ? v : slope * v; });
  return Tensor<Scalar>::from_op(x.shape(), std::move(out), {x}, [slope](Node<Scalar>& self) {
    Tensor<Scalar> in = self.parents[0];
    in.mutable_grad() +=
        self.grad * in.data().unaryExpr([slope](Scalar v) { return v > Scalar(0) ? Scalar(1) : slope; });
  });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  typename Tensor<Scalar>::Array out =
      x.data().unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
  return Tensor<Scalar>::from_op(x.shape(), std::move(out), {x}, [](Node<Scalar>& self) {
    Tensor<Scalar> in = self.parents[0];
    in.mutable_grad() += self.grad * self.data * (Scalar(1) - self.data);
  });
}

template <typename Scalar>
Tensor<Scalar> spatial_dropout(const Tensor<Scalar>& x, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ShapeError("spatial_dropout: p must lie in [0, 1)");
  if (mode == Mode::Eval || p == 0.0) return x;
  if (x.shape().size() < 2) throw ShapeError("spatial_dropout: needs [B,C,...]");

  const Eigen::Index slices = x.dim(0) * x.dim(1);
  const Eigen::Index per = x.size() / slices;
  const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - p));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  typename Tensor<Scalar>::Array factor(slices);
  for (Eigen::Index c = 0; c < slices; ++c) factor(c) = unit(rng) < p ? Scalar(0) : keep_scale;

  typename Tensor<Scalar>::Array out(x.size());
  for (Eigen::Index c = 0; c < slices; ++c)
    out.segment(c * per, per) = x.data().segment(c * per, per) * factor(c);
  return Tensor<Scalar>::from_op(x.shape(), std::move(out), {x},
                                 [factor, slices, per](Node<Scalar>& self) {
                                   Tensor<Scalar> in = self.parents[0];
                                   auto& g = in.mutable_grad();
                                   for (Eigen::Index c = 0; c < slices; ++c)
                                     g.segment(c * per, per) += self.grad.segment(c * per, per) * factor(c);
                                 });
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sa.size() != sb.size() || sa[0] != sb[0] ||
      !std::equal(sa.begin() + 2, sa.end(), sb.begin() + 2))
    throw ShapeError("concat_channels: non-channel dims differ, " + to_string(sa) + " vs " +
                     to_string(sb));
  const Eigen::Index batch = sa[0];
  const Eigen::Index na = a.size() / batch, nb = b.size() / batch;

  typename Tensor<Scalar>::Array out(a.size() + b.size());
  for (Eigen::Index i = 0; i < batch; ++i) {
    out.segment(i * (na + nb), na) = a.data().segment(i * na, na);
    out.segment(i * (na + nb) + na, nb) = b.data().segment(i * nb, nb);
  }
  Shape out_shape = sa;
  out_shape[1] = sa[1] + sb[1];
  return Tensor<Scalar>::from_op(out_shape, std::move(out), {a, b},
                                 [batch, na, nb](Node<Scalar>& self) {
                                   Tensor<Scalar> ta = self.parents[0], tb = self.parents[1];
                                   for (Eigen::Index i = 0; i < batch; ++i) {
                                     if (ta.requires_grad())
                                       ta.mutable_grad().segment(i * na, na) +=
                                           self.grad.segment(i * (na + nb), na);
                                     if (tb.requires_grad())
                                       tb.mutable_grad().segment(i * nb, nb) +=
                                           self.grad.segment(i * (na + nb) + na, nb);
                                   }
                                 });
}

template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& x, Eigen::Index first, Eigen::Index count) {
  const Shape& s = x.shape();
  if (s.size() < 2 || first < 0 || count < 1 || first + count > s[1])
    throw ShapeError("slice_channels: range out of bounds for " + to_string(s));
  const Eigen::Index batch = s[0];
  const Eigen::Index per_channel = x.size() / (batch * s[1]);
  const Eigen::Index stride = s[1] * per_channel;
  const Eigen::Index len = count * per_channel;
  const Eigen::Index offset = first * per_channel;

  typename Tensor<Scalar>::Array out(batch * len);
  for (Eigen::Index i = 0; i < batch; ++i)
    out.segment(i * len, len) = x.data().segment(i * stride + offset, len);
  Shape out_shape = s;
  out_shape[1] = count;
  return Tensor<Scalar>::from_op(out_shape, std::move(out), {x},
                                 [batch, len, stride, offset](Node<Scalar>& self) {
                                   Tensor<Scalar> in = self.parents[0];
                                   for (Eigen::Index i = 0; i < batch; ++i)
                                     in.mutable_grad().segment(i * stride + offset, len) +=
                                         self.grad.segment(i * len, len);
                                 });
}

template <typename Scalar>
Tensor<Scalar> mul_channel_broadcast(const Tensor<Scalar>& x, const Tensor<Scalar>& gate) {
  const Shape& sx = x.shape();
  const Shape& sg = gate.shape();
  if (sx.size() < 2 || sg.size() != sx.size() || sg[0] != sx[0] || sg[1] != 1 ||
      !std::equal(sx.begin() + 2, sx.end(), sg.begin() + 2))
    throw ShapeError("mul_channel_broadcast: gate must be [B,1,...] matching " + to_string(sx) +
                     ", got " + to_string(sg));
  const Eigen::Index batch = sx[0], channels = sx[1];
  const Eigen::Index n = gate.size() / batch;

  typename Tensor<Scalar>::Array out(x.size());
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index c = 0; c < channels; ++c)
      out.segment((b * channels + c) * n, n) =
          x.data().segment((b * channels + c) * n, n) * gate.data().segment(b * n, n);
  return Tensor<Scalar>::from_op(
      sx, std::move(out), {x, gate}, [batch, channels, n](Node<Scalar>& self) {
        Tensor<Scalar> tx = self.parents[0], tg = self.parents[1];
        for (Eigen::Index b = 0; b < batch; ++b)
          for (Eigen::Index c = 0; c < channels; ++c) {
            const auto go = self.grad.segment((b * channels + c) * n, n);
            if (tx.requires_grad())
              tx.mutable_grad().segment((b * channels + c) * n, n) += go * tg.data().segment(b * n, n);
            if (tg.requires_grad())
              tg.mutable_grad().segment(b * n, n) += go * tx.data().segment((b * channels + c) * n, n);
          }
      });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  return Tensor<Scalar>::from_op(a.shape(), a.data() + b.data(), {a, b}, [](Node<Scalar>& self) {
    for (auto& p : self.parents)
      if (p.requires_grad()) p.mutable_grad() += self.grad;
  });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  return Tensor<Scalar>::from_op(a.shape(), a.data() * b.data(), {a, b}, [](Node<Scalar>& self) {
    Tensor<Scalar> ta = self.parents[0], tb = self.parents[1];
    if (ta.requires_grad()) ta.mutable_grad() += self.grad * tb.data();
    if (tb.requires_grad()) tb.mutable_grad() += self.grad * ta.data();
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor) {
  return Tensor<Scalar>::from_op(x.shape(), x.data() * factor, {x}, [factor](Node<Scalar>& self) {
    self.parents[0].mutable_grad() += self.grad * factor;
  });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  typename Tensor<Scalar>::Array out(1);
  out(0) = x.data().sum();
  return Tensor<Scalar>::from_op({1}, std::move(out), {x}, [](Node<Scalar>& self) {
    self.parents[0].mutable_grad() += self.grad(0);
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.size()));
}

template <typename Scalar>
Tensor<Scalar> weighted_l2_l1_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target,
                                   Scalar w2, Scalar w1) {
  require_same_shape(pred.shape(), target.shape(), "weighted_l2_l1_loss");
  if (w2 < Scalar(0) || w1 < Scalar(0) || (w2 == Scalar(0) && w1 == Scalar(0)))
    throw ShapeError("weighted_l2_l1_loss: weights must be >= 0 and not both zero");
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(pred.size());
  const auto diff = (pred.data() - target.data()).eval();
  typename Tensor<Scalar>::Array out(1);
  out(0) = w2 * diff.square().sum() * inv_n + w1 * diff.abs().sum() * inv_n;
  return Tensor<Scalar>::from_op({1}, std::move(out), {pred, target},
                                 [w2, w1, inv_n](Node<Scalar>& self) {
                                   Tensor<Scalar> p = self.parents[0], t = self.parents[1];
                                   const auto d = (p.data() - t.data()).eval();
                                   const auto sign = d.unaryExpr([](Scalar v) {
                                     return v > Scalar(0) ? Scalar(1) : (v < Scalar(0) ? Scalar(-1) : Scalar(0));
                                   });
                                   const auto g = ((Scalar(2) * w2 * d + w1 * sign) *
                                                   (self.grad(0) * inv_n)).eval();
                                   if (p.requires_grad()) p.mutable_grad() += g;
                                   if (t.requires_grad()) t.mutable_grad() -= g;
                                 });
}

#define GAAF_INSTANTIATE_OPS(S)                                                                 \
  template Tensor<S> conv3d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);              \
  template Tensor<S> avgpool2(const Tensor<S>&);                                                \
  template Tensor<S> upsample_nn2(const Tensor<S>&);                                            \
  template Tensor<S> leaky_relu(const Tensor<S>&, S);                                           \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                 \
  template Tensor<S> spatial_dropout(const Tensor<S>&, double, Mode, Rng&);                     \
  template Tensor<S> concat_channels(const Tensor<S>&, const Tensor<S>&);                       \
  template Tensor<S> slice_channels(const Tensor<S>&, Eigen::Index, Eigen::Index);              \
  template Tensor<S> mul_channel_broadcast(const Tensor<S>&, const Tensor<S>&);                 \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> scale(const Tensor<S>&, S);                                                \
  template Tensor<S> sum(const Tensor<S>&);                                                     \
  template Tensor<S> mean(const Tensor<S>&);                                                    \
  template Tensor<S> weighted_l2_l1_loss(const Tensor<S>&, const Tensor<S>&, S, S);

GAAF_INSTANTIATE_OPS(float)
GAAF_INSTANTIATE_OPS(double)

#undef GAAF_INSTANTIATE_OPS

}  // namespace gaaf::ad
