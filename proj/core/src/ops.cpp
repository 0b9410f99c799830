#include "knnmts/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "knnmts/errors.hpp"

namespace knnmts {

namespace {

using detail::Node;

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

std::size_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t p = 1;
  for (std::size_t i = from; i < to; ++i) p *= s[i];
  return p;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Layout of a suffix-broadcast binary op: the small operand repeats `outer` times.
struct Broadcast {
  Shape out;
  std::size_t inner = 0;
  bool a_small = false;
  bool b_small = false;
};

Broadcast broadcast_shapes(const Tensor& a, const Tensor& b, const char* op) {
  Broadcast bc;
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa == sb) {
    bc.out = sa;
    bc.inner = a.numel();
  } else if (b.numel() == 1 || is_suffix(sb, sa)) {
    bc.out = sa;
    bc.inner = b.numel();
    bc.b_small = true;
  } else if (a.numel() == 1 || is_suffix(sa, sb)) {
    bc.out = sb;
    bc.inner = a.numel();
    bc.a_small = true;
  } else {
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(sa) + " with " +
                         shape_string(sb));
  }
  return bc;
}

// Shared implementation for add/sub/mul. Partials take (x, y) and return
// d f / d x and d f / d y respectively.
template <typename F, typename DA, typename DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* op, F f, DA dfa, DB dfb) {
  Broadcast bc = broadcast_shapes(a, b, op);
  const std::size_t n = shape_numel(bc.out);
  const std::size_t inner = bc.inner;
  const bool a_small = bc.a_small;
  const bool b_small = bc.b_small;
  std::vector<double> out(n);
  const double* xa = a.data().data();
  const double* xb = b.data().data();
  for (std::size_t base = 0; base < n; base += inner) {
    const double* ra = a_small ? xa : xa + base;
    const double* rb = b_small ? xb : xb + base;
    double* ro = out.data() + base;
    for (std::size_t j = 0; j < inner; ++j) ro[j] = f(ra[j], rb[j]);
  }
  return detail::make_result(bc.out, std::move(out), {a, b}, op, [n, inner, a_small, b_small, dfa, dfb](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const double* g = self.grad.data();
    const double* xa = pa.data.data();
    const double* xb = pb.data.data();
    if (pa.requires_grad) {
      double* ga = pa.grad_buffer().data();
      for (std::size_t base = 0; base < n; base += inner) {
        const double* ra = a_small ? xa : xa + base;
        const double* rb = b_small ? xb : xb + base;
        double* rg = a_small ? ga : ga + base;
        const double* go = g + base;
        for (std::size_t j = 0; j < inner; ++j) rg[j] += go[j] * dfa(ra[j], rb[j]);
      }
    }
    if (pb.requires_grad) {
      double* gb = pb.grad_buffer().data();
      for (std::size_t base = 0; base < n; base += inner) {
        const double* ra = a_small ? xa : xa + base;
        const double* rb = b_small ? xb : xb + base;
        double* rg = b_small ? gb : gb + base;
        const double* go = g + base;
        for (std::size_t j = 0; j < inner; ++j) rg[j] += go[j] * dfb(ra[j], rb[j]);
      }
    }
  });
}

template <typename F, typename DF>
Tensor unary_op(const Tensor& x, const char* op, F f, DF df) {
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  return detail::make_result(x.shape(), std::move(out), {x}, op, [df](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& gp = p.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gp[i] += self.grad[i] * df(p.data[i], self.data[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary_op(
      a, "scale", [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary_op(
      a, "add_scalar", [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      x, "relu", [](double v) { return v < 0.0 ? 0.0 : v; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary_op(
      x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor abs(const Tensor& x) {
  return unary_op(
      x, "abs", [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor map_unary(const Tensor& x, const std::function<double(double)>& f,
                 const std::function<double(double, double)>& df) {
  return unary_op(x, "map_unary", f, df);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_string(sa) + " and " +
                         shape_string(sb));
  }
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  const std::size_t kb = sb[sb.size() - 2];
  const std::size_t n = sb.back();
  if (k != kb) {
    throw DimensionError("matmul inner dimensions differ: " + shape_string(sa) + " x " + shape_string(sb));
  }
  const Shape batch_a(sa.begin(), sa.end() - 2);
  const Shape batch_b(sb.begin(), sb.end() - 2);
  Shape batch;
  if (batch_a == batch_b || batch_b.empty()) {
    batch = batch_a;
  } else if (batch_a.empty()) {
    batch = batch_b;
  } else {
    throw DimensionError("matmul batch dimensions differ: " + shape_string(sa) + " x " + shape_string(sb));
  }
  const std::size_t nbatch = shape_numel(batch);
  const bool a_shared = batch_a.empty() && !batch.empty();
  const bool b_shared = batch_b.empty() && !batch.empty();
  const std::size_t stride_a = a_shared ? 0 : m * k;
  const std::size_t stride_b = b_shared ? 0 : k * n;

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(nbatch * m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t bt = 0; bt < nbatch; ++bt) {
    const double* Ab = A + bt * stride_a;
    const double* Bb = B + bt * stride_b;
    double* Cb = out.data() + bt * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = Cb + i * n;
      const double* arow = Ab + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = arow[p];
        const double* brow = Bb + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  }

  return detail::make_result(
      std::move(out_shape), std::move(out), {a, b}, "matmul",
      [nbatch, m, k, n, stride_a, stride_b](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const double* G = self.grad.data();
        if (pa.requires_grad) {
          // dA = dC * B^T, with B transposed once per distinct batch slice so the
          // inner loop runs over contiguous memory.
          double* GA = pa.grad_buffer().data();
          const double* B = pb.data.data();
          std::vector<double> bt_buf(k * n);
          const std::size_t distinct_b = stride_b == 0 ? 1 : nbatch;
          for (std::size_t bt = 0; bt < nbatch; ++bt) {
            const double* Bb = B + bt * stride_b;
            if (bt < distinct_b) {
              for (std::size_t p = 0; p < k; ++p)
                for (std::size_t j = 0; j < n; ++j) bt_buf[j * k + p] = Bb[p * n + j];
            }
            const double* Gb = G + bt * m * n;
            double* GAb = GA + bt * stride_a;
            for (std::size_t i = 0; i < m; ++i) {
              const double* grow = Gb + i * n;
              double* garow = GAb + i * k;
              for (std::size_t j = 0; j < n; ++j) {
                const double g = grow[j];
                const double* btrow = bt_buf.data() + j * k;
                for (std::size_t p = 0; p < k; ++p) garow[p] += g * btrow[p];
              }
            }
          }
        }
        if (pb.requires_grad) {
          // dB = A^T * dC
          double* GB = pb.grad_buffer().data();
          const double* A = pa.data.data();
          for (std::size_t bt = 0; bt < nbatch; ++bt) {
            const double* Ab = A + bt * stride_a;
            const double* Gb = G + bt * m * n;
            double* GBb = GB + bt * stride_b;
            for (std::size_t i = 0; i < m; ++i) {
              const double* grow = Gb + i * n;
              const double* arow = Ab + i * k;
              for (std::size_t p = 0; p < k; ++p) {
                const double aip = arow[p];
                double* gbrow = GBb + p * n;
                for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
              }
            }
          }
        }
      });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const Shape& s = x.shape();
  const std::size_t r = s.size();
  if (axes.size() != r) throw DimensionError("permute: axis list length differs from rank " + shape_string(s));
  std::vector<bool> seen(r, false);
  for (std::size_t a : axes) {
    if (a >= r || seen[a]) throw DimensionError("permute: invalid axis order for " + shape_string(s));
    seen[a] = true;
  }
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  Shape out_shape(r);
  std::vector<std::size_t> strides(r);  // input stride for each output axis
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = s[axes[i]];
    strides[i] = in_strides[axes[i]];
  }
  const std::size_t n = x.numel();
  // Gather map from output position to input position.
  auto index_map = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*index_map)[i] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      if (++counter[ax] < out_shape[ax]) {
        src += strides[ax];
        break;
      }
      src -= strides[ax] * (out_shape[ax] - 1);
      counter[ax] = 0;
    }
  }
  const auto xs = x.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xs[(*index_map)[i]];
  return detail::make_result(std::move(out_shape), std::move(out), {x}, "permute", [index_map](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& gp = p.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gp[(*index_map)[i]] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x) {
  const std::size_t r = x.rank();
  if (r < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_string(x.shape()));
  std::vector<std::size_t> axes(r);
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[r - 1], axes[r - 2]);
  return permute(x, axes);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  const auto xs = x.data();
  std::vector<double> out(xs.begin(), xs.end());
  return detail::make_result(std::move(shape), std::move(out), {x}, "reshape", [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& gp = p.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gp[i] += self.grad[i];
  });
}

Tensor softmax(const Tensor& x, int axis) {
  const Shape& s = x.shape();
  const std::size_t ax = normalize_axis(axis, s.size());
  const std::size_t len = s[ax];
  if (len == 0) throw DimensionError("softmax over an empty axis in " + shape_string(s));
  const std::size_t outer = prod(s, 0, ax);
  const std::size_t inner = prod(s, ax + 1, s.size());
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = xs[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xs[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(xs[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  return detail::make_result(s, std::move(out), {x}, "softmax", [outer, inner, len](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& gp = p.grad_buffer();
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t i = base + j * inner;
          gp[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Shape& s = x.shape();
  if (s.empty()) throw DimensionError("layer_norm on a scalar");
  const std::size_t d = s.back();
  if (d < 2) throw DimensionError("layer_norm needs a feature axis of size >= 2, got " + shape_string(s));
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layer_norm gain/bias must be [" + std::to_string(d) + "], got " +
                         shape_string(gain.shape()) + " and " + shape_string(bias.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto xs = x.data();
  const auto gs = gain.data();
  const auto bs = bias.data();
  std::vector<double> out(xs.size());
  // Saved for backward: normalized values and per-row inverse std.
  auto xhat = std::make_shared<std::vector<double>>(xs.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xs.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * inv;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gs[j] + bs[j];
    }
  }
  return detail::make_result(s, std::move(out), {x, gain, bias}, "layer_norm", [rows, d, xhat, inv_std](Node& self) {
    Node& px = *self.parents[0];
    Node& pg = *self.parents[1];
    Node& pb = *self.parents[2];
    const auto& g = self.grad;
    if (pg.requires_grad || pb.requires_grad) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
          if (pg.requires_grad) pg.grad_buffer()[j] += g[r * d + j] * (*xhat)[r * d + j];
          if (pb.requires_grad) pb.grad_buffer()[j] += g[r * d + j];
        }
      }
    }
    if (!px.requires_grad) return;
    auto& gx = px.grad_buffer();
    const double dd = static_cast<double>(d);
    std::vector<double> dh(d);
    for (std::size_t r = 0; r < rows; ++r) {
      double sum_dh = 0.0;
      double sum_dh_h = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        dh[j] = g[r * d + j] * pg.data[j];
        sum_dh += dh[j];
        sum_dh_h += dh[j] * (*xhat)[r * d + j];
      }
      const double inv = (*inv_std)[r];
      for (std::size_t j = 0; j < d; ++j) {
        gx[r * d + j] += inv / dd * (dd * dh[j] - sum_dh - (*xhat)[r * d + j] * sum_dh_h);
      }
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = normalize_axis(axis, s0.size());
  Shape out_shape = s0;
  out_shape[ax] = 0;
  std::vector<std::size_t> widths;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == ax) || s[i] == s0[i];
    if (!ok) throw DimensionError("concat: " + shape_string(s) + " incompatible with " + shape_string(s0));
    out_shape[ax] += s[ax];
    widths.push_back(s[ax]);
  }
  const std::size_t outer = prod(s0, 0, ax);
  const std::size_t inner = prod(s0, ax + 1, s0.size());
  const std::size_t total = out_shape[ax];
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto xs = parts[p].data();
    const std::size_t block = widths[p] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(xs.data() + o * block, block, out.data() + (o * total + offset) * inner);
    }
    offset += widths[p];
  }
  return detail::make_result(std::move(out_shape), std::move(out), parts, "concat",
                             [outer, inner, total, widths](Node& self) {
                               std::size_t off = 0;
                               for (std::size_t p = 0; p < widths.size(); ++p) {
                                 Node& np = *self.parents[p];
                                 const std::size_t block = widths[p] * inner;
                                 if (np.requires_grad) {
                                   auto& gp = np.grad_buffer();
                                   for (std::size_t o = 0; o < outer; ++o) {
                                     const double* src = self.grad.data() + (o * total + off) * inner;
                                     double* dst = gp.data() + o * block;
                                     for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                                   }
                                 }
                                 off += widths[p];
                               }
                             });
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  const std::size_t ax = normalize_axis(axis, s.size());
  if (start + length > s[ax]) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds axis of size " + std::to_string(s[ax]) + " in " + shape_string(s));
  }
  const std::size_t outer = prod(s, 0, ax);
  const std::size_t inner = prod(s, ax + 1, s.size());
  const std::size_t full = s[ax];
  Shape out_shape = s;
  out_shape[ax] = length;
  std::vector<double> out(shape_numel(out_shape));
  const auto xs = x.data();
  const std::size_t block = length * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xs.data() + (o * full + start) * inner, block, out.data() + o * block);
  }
  return detail::make_result(std::move(out_shape), std::move(out), {x}, "slice",
                             [outer, inner, full, start, block](Node& self) {
                               Node& p = *self.parents[0];
                               if (!p.requires_grad) return;
                               auto& gp = p.grad_buffer();
                               for (std::size_t o = 0; o < outer; ++o) {
                                 const double* src = self.grad.data() + o * block;
                                 double* dst = gp.data() + (o * full + start) * inner;
                                 for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                               }
                             });
}

Tensor sum(const Tensor& x) {
  const auto xs = x.data();
  double total = 0.0;
  for (double v : xs) total += v;
  return detail::make_result(Shape{}, {total}, {x}, "sum", [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& gp = p.grad_buffer();
    const double g = self.grad[0];
    for (double& v : gp) v += g;
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_axis(const Tensor& x, int axis) {
  const Shape& s = x.shape();
  const std::size_t ax = normalize_axis(axis, s.size());
  const std::size_t outer = prod(s, 0, ax);
  const std::size_t inner = prod(s, ax + 1, s.size());
  const std::size_t len = s[ax];
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<double> out(outer * inner, 0.0);
  const auto xs = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < len; ++j) {
      const double* src = xs.data() + (o * len + j) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  return detail::make_result(std::move(out_shape), std::move(out), {x}, "sum_axis",
                             [outer, inner, len](Node& self) {
                               Node& p = *self.parents[0];
                               if (!p.requires_grad) return;
                               auto& gp = p.grad_buffer();
                               for (std::size_t o = 0; o < outer; ++o) {
                                 for (std::size_t j = 0; j < len; ++j) {
                                   double* dst = gp.data() + (o * len + j) * inner;
                                   const double* src = self.grad.data() + o * inner;
                                   for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
                                 }
                               }
                             });
}

}  // namespace knnmts
