#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <utility>
#include <vector>

#include "faceforge/core/rng.hpp"
#include "faceforge/core/variable.hpp"

namespace faceforge::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) throw Error("add: shape mismatch");
  Tensor out = a->value;
  out.add_(b->value);
  return make_op(std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      Node& p = *self.parents[static_cast<size_t>(k)];
      if (!p.requires_grad) continue;
      p.ensure_grad().add_(self.grad);
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) throw Error("sub: shape mismatch");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) pa.ensure_grad().add_(self.grad);
    if (pb.requires_grad) {
      Tensor& g = pb.ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) throw Error("mul: shape mismatch");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      Tensor& g = pa.ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

inline Var scale(const Var& a, double k) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= k;
  return make_op(std::move(out), {a}, [k](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += k * self.grad[i];
  });
}

inline Var abs_op(const Var& a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::fabs(out[i]);
  return make_op(std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) {
      double x = p.value[i];
      g[i] += self.grad[i] * (x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0));
    }
  });
}

inline Var mean_all(const Var& a) {
  double n = static_cast<double>(a->value.numel());
  Tensor out = Tensor::scalar(a->value.sum() / n);
  return make_op(std::move(out), {a}, [n](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    double gs = self.grad[0] / n;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += gs;
  });
}

inline Var sum_all(const Var& a) {
  Tensor out = Tensor::scalar(a->value.sum());
  return make_op(std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    double gs = self.grad[0];
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += gs;
  });
}

inline Var reshape(const Var& a, Shape s) {
  Tensor out = a->value.reshaped(std::move(s));
  return make_op(std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    g.add_(self.grad.reshaped(p.value.shape()));
  });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

inline Var relu(const Var& a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0 ? out[i] : 0.0;
  return make_op(std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i)
      if (p.value[i] > 0) g[i] += self.grad[i];
  });
}

inline Var leaky_relu(const Var& a, double slope) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0 ? out[i] : slope * out[i];
  return make_op(std::move(out), {a}, [slope](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i)
      g[i] += self.grad[i] * (p.value[i] > 0 ? 1.0 : slope);
  });
}

inline Var tanh_op(const Var& a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  return make_op(std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) {
      double y = self.value[i];
      g[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

inline Var sigmoid_op(const Var& a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  return make_op(std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) {
      double y = self.value[i];
      g[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

/// Inverted dropout: scales kept activations by 1/(1-p) during training,
/// identity otherwise.
inline Var dropout(const Var& a, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return a;
  double keep = 1.0 - p;
  auto mask = std::make_shared<std::vector<double>>(static_cast<size_t>(a->value.numel()));
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) {
    double m = rng.uniform() < keep ? 1.0 / keep : 0.0;
    (*mask)[static_cast<size_t>(i)] = m;
    out[i] *= m;
  }
  return make_op(std::move(out), {a}, [mask](Node& self) {
    Node& p0 = *self.parents[0];
    if (!p0.requires_grad) return;
    Tensor& g = p0.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * (*mask)[static_cast<size_t>(i)];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(1) != b->value.dim(0))
    throw Error("matmul: bad shapes " + shape_str(a->value.shape()) + " x " +
                shape_str(b->value.shape()));
  int64_t n = a->value.dim(0), k = a->value.dim(1), m = b->value.dim(1);
  Tensor out({n, m});
  MutMap(out.data(), n, m).noalias() =
      ConstMap(a->value.data(), n, k) * ConstMap(b->value.data(), k, m);
  return make_op(std::move(out), {a, b}, [n, k, m](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    ConstMap gy(self.grad.data(), n, m);
    if (pa.requires_grad) {
      MutMap(pa.ensure_grad().data(), n, k).noalias() +=
          gy * ConstMap(pb.value.data(), k, m).transpose();
    }
    if (pb.requires_grad) {
      MutMap(pb.ensure_grad().data(), k, m).noalias() +=
          ConstMap(pa.value.data(), n, k).transpose() * gy;
    }
  });
}

/// x:(N,K) W:(K,M) b:(M) -> (N,M)
inline Var linear(const Var& x, const Var& w, const Var& b) {
  int64_t n = x->value.dim(0), k = x->value.dim(1), m = w->value.dim(1);
  if (w->value.dim(0) != k || b->value.numel() != m) throw Error("linear: shape mismatch");
  Tensor out({n, m});
  MutMap om(out.data(), n, m);
  om.noalias() = ConstMap(x->value.data(), n, k) * ConstMap(w->value.data(), k, m);
  om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b->value.data(), m);
  return make_op(std::move(out), {x, w, b}, [n, k, m](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    ConstMap gy(self.grad.data(), n, m);
    if (px.requires_grad)
      MutMap(px.ensure_grad().data(), n, k).noalias() +=
          gy * ConstMap(pw.value.data(), k, m).transpose();
    if (pw.requires_grad)
      MutMap(pw.ensure_grad().data(), k, m).noalias() +=
          ConstMap(px.value.data(), n, k).transpose() * gy;
    if (pb.requires_grad)
      Eigen::Map<Eigen::RowVectorXd>(pb.ensure_grad().data(), m) += gy.colwise().sum();
  });
}

// ---------------------------------------------------------------------------
// Convolutions (channel-last). Kernel layouts:
//   conv2d:           (kh, kw, Cin, Cout)
//   conv2d_transpose: (Cin, kh, kw, Cout)
// ---------------------------------------------------------------------------

struct ConvGeom {
  int64_t n, h, w, c;       // input
  int64_t kh, kw, s, p;     // kernel/stride/pad
  int64_t oh, ow;           // output grid
};

inline ConvGeom conv_geom(const Shape& x, int64_t kh, int64_t kw, int64_t s, int64_t p) {
  if (x.size() != 4) throw Error("conv: input must be (N,H,W,C)");
  ConvGeom g{x[0], x[1], x[2], x[3], kh, kw, s, p, 0, 0};
  g.oh = (g.h + 2 * p - kh) / s + 1;
  g.ow = (g.w + 2 * p - kw) / s + 1;
  if (g.oh <= 0 || g.ow <= 0) throw Error("conv: input too small for kernel");
  return g;
}

/// Patch matrix: rows = N*oh*ow, cols = kh*kw*C.
inline Tensor im2col(const Tensor& x, const ConvGeom& g) {
  Tensor cols({g.n * g.oh * g.ow, g.kh * g.kw * g.c});
  const double* xp = x.data();
  double* cp = cols.data();
  int64_t row_len = g.kh * g.kw * g.c;
  for (int64_t n = 0; n < g.n; ++n) {
    for (int64_t oy = 0; oy < g.oh; ++oy) {
      for (int64_t ox = 0; ox < g.ow; ++ox) {
        double* row = cp + ((n * g.oh + oy) * g.ow + ox) * row_len;
        for (int64_t r = 0; r < g.kh; ++r) {
          int64_t iy = oy * g.s - g.p + r;
          if (iy < 0 || iy >= g.h) continue;
          for (int64_t t = 0; t < g.kw; ++t) {
            int64_t ix = ox * g.s - g.p + t;
            if (ix < 0 || ix >= g.w) continue;
            const double* src = xp + ((n * g.h + iy) * g.w + ix) * g.c;
            std::memcpy(row + (r * g.kw + t) * g.c, src, sizeof(double) * static_cast<size_t>(g.c));
          }
        }
      }
    }
  }
  return cols;
}

/// Scatter-add inverse of im2col.
inline void col2im_add(const Tensor& cols, Tensor& x, const ConvGeom& g) {
  const double* cp = cols.data();
  double* xp = x.data();
  int64_t row_len = g.kh * g.kw * g.c;
  for (int64_t n = 0; n < g.n; ++n) {
    for (int64_t oy = 0; oy < g.oh; ++oy) {
      for (int64_t ox = 0; ox < g.ow; ++ox) {
        const double* row = cp + ((n * g.oh + oy) * g.ow + ox) * row_len;
        for (int64_t r = 0; r < g.kh; ++r) {
          int64_t iy = oy * g.s - g.p + r;
          if (iy < 0 || iy >= g.h) continue;
          for (int64_t t = 0; t < g.kw; ++t) {
            int64_t ix = ox * g.s - g.p + t;
            if (ix < 0 || ix >= g.w) continue;
            double* dst = xp + ((n * g.h + iy) * g.w + ix) * g.c;
            const double* src = row + (r * g.kw + t) * g.c;
            for (int64_t c = 0; c < g.c; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

inline Var conv2d(const Var& x, const Var& w, const Var& b, int64_t stride, int64_t pad) {
  const Shape& ws = w->value.shape();
  if (ws.size() != 4) throw Error("conv2d: kernel must be (kh,kw,Cin,Cout)");
  int64_t kh = ws[0], kw = ws[1], cin = ws[2], cout = ws[3];
  if (x->value.dim(3) != cin)
    throw Error("conv2d: channel mismatch, input " + shape_str(x->value.shape()) + " kernel " +
                shape_str(ws));
  ConvGeom g = conv_geom(x->value.shape(), kh, kw, stride, pad);
  Tensor cols = im2col(x->value, g);
  int64_t rows = g.n * g.oh * g.ow, rlen = kh * kw * cin;
  Tensor out({g.n, g.oh, g.ow, cout});
  MutMap om(out.data(), rows, cout);
  om.noalias() = ConstMap(cols.data(), rows, rlen) * ConstMap(w->value.data(), rlen, cout);
  om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b->value.data(), cout);
  return make_op(std::move(out), {x, w, b}, [g, rows, rlen, cout](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    ConstMap gy(self.grad.data(), rows, cout);
    if (pw.requires_grad) {
      Tensor cols2 = im2col(px.value, g);
      MutMap(pw.ensure_grad().data(), rlen, cout).noalias() +=
          ConstMap(cols2.data(), rows, rlen).transpose() * gy;
    }
    if (pb.requires_grad)
      Eigen::Map<Eigen::RowVectorXd>(pb.ensure_grad().data(), cout) += gy.colwise().sum();
    if (px.requires_grad) {
      Tensor dcols({rows, rlen});
      MutMap(dcols.data(), rows, rlen).noalias() =
          gy * ConstMap(pw.value.data(), rlen, cout).transpose();
      col2im_add(dcols, px.ensure_grad(), g);
    }
  });
}

inline Var conv2d_transpose(const Var& x, const Var& w, const Var& b, int64_t stride, int64_t pad) {
  const Shape& ws = w->value.shape();
  if (ws.size() != 4) throw Error("conv2d_transpose: kernel must be (Cin,kh,kw,Cout)");
  int64_t cin = ws[0], kh = ws[1], kw = ws[2], cout = ws[3];
  if (x->value.dim(3) != cin) throw Error("conv2d_transpose: channel mismatch");
  int64_t n = x->value.dim(0), h = x->value.dim(1), wdt = x->value.dim(2);
  int64_t oh = (h - 1) * stride - 2 * pad + kh;
  int64_t ow = (wdt - 1) * stride - 2 * pad + kw;
  // Geometry of the matching forward conv output->input.
  ConvGeom g = conv_geom({n, oh, ow, cout}, kh, kw, stride, pad);
  if (g.oh != h || g.ow != wdt) throw Error("conv2d_transpose: inconsistent geometry");
  int64_t rows = n * h * wdt, rlen = kh * kw * cout;
  Tensor m({rows, rlen});
  MutMap(m.data(), rows, rlen).noalias() =
      ConstMap(x->value.data(), rows, cin) * ConstMap(w->value.data(), cin, rlen);
  Tensor out({n, oh, ow, cout});
  col2im_add(m, out, g);
  {  // bias over every output position
    double* op = out.data();
    int64_t hw = oh * ow * n;
    for (int64_t i = 0; i < hw; ++i)
      for (int64_t c = 0; c < cout; ++c) op[i * cout + c] += b->value[c];
  }
  return make_op(std::move(out), {x, w, b}, [g, rows, rlen, cin, cout](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    Tensor dm = im2col(self.grad, g);  // (rows, rlen)
    ConstMap dmm(dm.data(), rows, rlen);
    if (px.requires_grad)
      MutMap(px.ensure_grad().data(), rows, cin).noalias() +=
          dmm * ConstMap(pw.value.data(), cin, rlen).transpose();
    if (pw.requires_grad)
      MutMap(pw.ensure_grad().data(), cin, rlen).noalias() +=
          ConstMap(px.value.data(), rows, cin).transpose() * dmm;
    if (pb.requires_grad) {
      Tensor& gb = pb.ensure_grad();
      const double* gp = self.grad.data();
      int64_t cells = self.grad.numel() / cout;
      for (int64_t i = 0; i < cells; ++i)
        for (int64_t c = 0; c < cout; ++c) gb[c] += gp[i * cout + c];
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization, pooling, concatenation
// ---------------------------------------------------------------------------

/// Per-sample, per-channel normalization over the spatial extent with affine
/// parameters. Equals batch normalization at batch size 1 (the training
/// regime here), and makes batched evaluation identical to per-sample
/// evaluation.
inline Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
  if (x->value.ndim() != 4) throw Error("instance_norm: input must be (N,H,W,C)");
  int64_t n = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2), c = x->value.dim(3);
  if (gamma->value.numel() != c || beta->value.numel() != c)
    throw Error("instance_norm: affine size mismatch");
  int64_t hw = h * w;
  auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(2 * n * c));  // mean, inv
  Tensor out(x->value.shape());
  for (int64_t ni = 0; ni < n; ++ni) {
    for (int64_t ci = 0; ci < c; ++ci) {
      double mean = 0;
      for (int64_t i = 0; i < hw; ++i) mean += x->value[((ni * hw) + i) * c + ci];
      mean /= static_cast<double>(hw);
      double var = 0;
      for (int64_t i = 0; i < hw; ++i) {
        double d = x->value[((ni * hw) + i) * c + ci] - mean;
        var += d * d;
      }
      var /= static_cast<double>(hw);
      double inv = 1.0 / std::sqrt(var + eps);
      (*stats)[static_cast<size_t>((ni * c + ci) * 2)] = mean;
      (*stats)[static_cast<size_t>((ni * c + ci) * 2 + 1)] = inv;
      double gc = gamma->value[ci], bc = beta->value[ci];
      for (int64_t i = 0; i < hw; ++i) {
        int64_t idx = ((ni * hw) + i) * c + ci;
        out[idx] = gc * (x->value[idx] - mean) * inv + bc;
      }
    }
  }
  return make_op(std::move(out), {x, gamma, beta}, [n, hw, c, stats](Node& self) {
    Node& px = *self.parents[0];
    Node& pg = *self.parents[1];
    Node& pb = *self.parents[2];
    for (int64_t ni = 0; ni < n; ++ni) {
      for (int64_t ci = 0; ci < c; ++ci) {
        double mean = (*stats)[static_cast<size_t>((ni * c + ci) * 2)];
        double inv = (*stats)[static_cast<size_t>((ni * c + ci) * 2 + 1)];
        double gc = pg.value[ci];
        double sum_dy = 0, sum_dy_xhat = 0;
        for (int64_t i = 0; i < hw; ++i) {
          int64_t idx = ((ni * hw) + i) * c + ci;
          double xhat = (px.value[idx] - mean) * inv;
          double dy = self.grad[idx];
          sum_dy += dy;
          sum_dy_xhat += dy * xhat;
        }
        if (pg.requires_grad) pg.ensure_grad()[ci] += sum_dy_xhat;
        if (pb.requires_grad) pb.ensure_grad()[ci] += sum_dy;
        if (px.requires_grad) {
          Tensor& gx = px.ensure_grad();
          double m = static_cast<double>(hw);
          for (int64_t i = 0; i < hw; ++i) {
            int64_t idx = ((ni * hw) + i) * c + ci;
            double xhat = (px.value[idx] - mean) * inv;
            gx[idx] += gc * inv / m * (m * self.grad[idx] - sum_dy - xhat * sum_dy_xhat);
          }
        }
      }
    }
  });
}

/// (N,H,W,C) -> (N,C)
inline Var global_avg_pool(const Var& x) {
  if (x->value.ndim() != 4) throw Error("global_avg_pool: input must be (N,H,W,C)");
  int64_t n = x->value.dim(0), hw = x->value.dim(1) * x->value.dim(2), c = x->value.dim(3);
  Tensor out({n, c});
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t i = 0; i < hw; ++i)
      for (int64_t ci = 0; ci < c; ++ci) out.at2(ni, ci) += x->value[((ni * hw) + i) * c + ci];
  for (int64_t i = 0; i < out.numel(); ++i) out[i] /= static_cast<double>(hw);
  return make_op(std::move(out), {x}, [n, hw, c](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (int64_t ni = 0; ni < n; ++ni)
      for (int64_t i = 0; i < hw; ++i)
        for (int64_t ci = 0; ci < c; ++ci)
          g[((ni * hw) + i) * c + ci] += self.grad.at2(ni, ci) / static_cast<double>(hw);
  });
}

/// Concatenate along the last axis; all leading dims must agree.
inline Var concat_last(const std::vector<Var>& xs) {
  if (xs.empty()) throw Error("concat_last: no inputs");
  Shape lead = xs[0]->value.shape();
  lead.pop_back();
  int64_t ctotal = 0;
  std::vector<int64_t> widths;
  for (const auto& v : xs) {
    Shape l = v->value.shape();
    int64_t cw = l.back();
    l.pop_back();
    if (l != lead) throw Error("concat_last: leading dims mismatch");
    widths.push_back(cw);
    ctotal += cw;
  }
  int64_t rows = 1;
  for (int64_t d : lead) rows *= d;
  Shape os = lead;
  os.push_back(ctotal);
  Tensor out(os);
  for (int64_t r = 0; r < rows; ++r) {
    int64_t off = 0;
    for (size_t k = 0; k < xs.size(); ++k) {
      const double* src = xs[k]->value.data() + r * widths[k];
      std::memcpy(out.data() + r * ctotal + off, src,
                  sizeof(double) * static_cast<size_t>(widths[k]));
      off += widths[k];
    }
  }
  return make_op(std::move(out), xs, [rows, ctotal, widths](Node& self) {
    int64_t off = 0;
    for (size_t k = 0; k < self.parents.size(); ++k) {
      Node& p = *self.parents[k];
      if (p.requires_grad) {
        Tensor& g = p.ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
          const double* src = self.grad.data() + r * ctotal + off;
          double* dst = g.data() + r * widths[k];
          for (int64_t i = 0; i < widths[k]; ++i) dst[i] += src[i];
        }
      }
      off += widths[k];
    }
  });
}

/// Rows of x:(N,D) scaled to unit L2 norm (epsilon-stabilized).
inline Var l2_normalize_rows(const Var& x, double eps = 1e-12) {
  if (x->value.ndim() != 2) throw Error("l2_normalize_rows: input must be (N,D)");
  int64_t n = x->value.dim(0), d = x->value.dim(1);
  auto norms = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  Tensor out(x->value.shape());
  for (int64_t i = 0; i < n; ++i) {
    double s = eps;
    for (int64_t j = 0; j < d; ++j) s += x->value.at2(i, j) * x->value.at2(i, j);
    double r = std::sqrt(s);
    (*norms)[static_cast<size_t>(i)] = r;
    for (int64_t j = 0; j < d; ++j) out.at2(i, j) = x->value.at2(i, j) / r;
  }
  return make_op(std::move(out), {x}, [n, d, norms](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (int64_t i = 0; i < n; ++i) {
      double r = (*norms)[static_cast<size_t>(i)];
      double dot = 0;
      for (int64_t j = 0; j < d; ++j) dot += self.grad.at2(i, j) * self.value.at2(i, j);
      for (int64_t j = 0; j < d; ++j)
        g.at2(i, j) += (self.grad.at2(i, j) - self.value.at2(i, j) * dot) / r;
    }
  });
}

// ---------------------------------------------------------------------------
// Classifier head
// ---------------------------------------------------------------------------

inline Tensor softmax_rows(const Tensor& logits) {
  int64_t n = logits.dim(0), k = logits.dim(1);
  Tensor p(logits.shape());
  for (int64_t i = 0; i < n; ++i) {
    double mx = -1e300;
    for (int64_t j = 0; j < k; ++j) mx = std::max(mx, logits.at2(i, j));
    double z = 0;
    for (int64_t j = 0; j < k; ++j) {
      double e = std::exp(logits.at2(i, j) - mx);
      p.at2(i, j) = e;
      z += e;
    }
    for (int64_t j = 0; j < k; ++j) p.at2(i, j) /= z;
  }
  return p;
}

/// Mean cross-entropy of softmax(logits) against integer labels.
inline Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
  int64_t n = logits->value.dim(0);
  if (static_cast<int64_t>(labels.size()) != n) throw Error("softmax_cross_entropy: label count");
  auto probs = std::make_shared<Tensor>(softmax_rows(logits->value));
  double loss = 0;
  for (int64_t i = 0; i < n; ++i)
    loss -= std::log(std::max(probs->at2(i, labels[static_cast<size_t>(i)]), 1e-300));
  loss /= static_cast<double>(n);
  auto lab = std::make_shared<std::vector<int>>(labels);
  return make_op(Tensor::scalar(loss), {logits}, [probs, lab, n](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    int64_t k = p.value.dim(1);
    double gs = self.grad[0] / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < k; ++j)
        g.at2(i, j) += gs * (probs->at2(i, j) - (j == (*lab)[static_cast<size_t>(i)] ? 1.0 : 0.0));
  });
}

}  // namespace faceforge::ad
