#include "diffe/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace diffe {

namespace {

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : ts)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

Tensor make_output(Shape shape, bool track) {
  Tensor out(std::move(shape), track);
  return out;
}

void attach(Tensor& out, const char* op, std::vector<Tensor> inputs,
            std::function<void(std::span<const double>)> bw) {
  auto node = std::make_shared<GradNode>();
  node->op = op;
  node->inputs = std::move(inputs);
  node->backward = std::move(bw);
  out.impl()->node = std::move(node);
}

// Accumulate helper: allocates the grad buffer on demand and marks the touch.
std::span<double> grad_buf(const Tensor& t) {
  auto impl = t.impl();
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
  impl->grad_touched = true;
  return impl->grad;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

void require_3d(const Tensor& x, const char* op) {
  if (x.ndim() != 3) throw DimensionError(std::string(op) + ": expected [B,C,L], got " + shape_str(x.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool track = any_requires_grad({&a, &b});
  Tensor out = make_output(a.shape(), track);
  auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  check_finite(ov, "add");
  if (track) {
    attach(out, "add", {a, b}, [a, b](std::span<const double> g) {
      if (a.requires_grad()) {
        auto ga = grad_buf(a);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = grad_buf(b);
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const bool track = any_requires_grad({&a, &b});
  Tensor out = make_output(a.shape(), track);
  auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  check_finite(ov, "sub");
  if (track) {
    attach(out, "sub", {a, b}, [a, b](std::span<const double> g) {
      if (a.requires_grad()) {
        auto ga = grad_buf(a);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = grad_buf(b);
        for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const bool track = any_requires_grad({&a, &b});
  Tensor out = make_output(a.shape(), track);
  auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  check_finite(ov, "mul");
  if (track) {
    attach(out, "mul", {a, b}, [a, b](std::span<const double> g) {
      auto av = a.values(), bv = b.values();
      if (a.requires_grad()) {
        auto ga = grad_buf(a);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto gb = grad_buf(b);
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  const bool track = any_requires_grad({&a});
  Tensor out = make_output(a.shape(), track);
  auto av = a.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
  check_finite(ov, "scale");
  if (track) {
    attach(out, "scale", {a}, [a, c](std::span<const double> g) {
      auto ga = grad_buf(a);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
  }
  return out;
}

Tensor abs(const Tensor& a) {
  const bool track = any_requires_grad({&a});
  Tensor out = make_output(a.shape(), track);
  auto av = a.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::fabs(av[i]);
  check_finite(ov, "abs");
  if (track) {
    attach(out, "abs", {a}, [a](std::span<const double> g) {
      auto av = a.values();
      auto ga = grad_buf(a);
      for (size_t i = 0; i < g.size(); ++i) {
        const double s = av[i] > 0.0 ? 1.0 : (av[i] < 0.0 ? -1.0 : 0.0);
        ga[i] += g[i] * s;
      }
    });
  }
  return out;
}

Tensor silu(const Tensor& a) {
  const bool track = any_requires_grad({&a});
  Tensor out = make_output(a.shape(), track);
  auto av = a.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-av[i]));
    ov[i] = av[i] * s;
  }
  check_finite(ov, "silu");
  if (track) {
    attach(out, "silu", {a}, [a](std::span<const double> g) {
      auto av = a.values();
      auto ga = grad_buf(a);
      for (size_t i = 0; i < g.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-av[i]));
        ga[i] += g[i] * (s * (1.0 + av[i] * (1.0 - s)));
      }
    });
  }
  return out;
}

Tensor mean_all(const Tensor& a) {
  const bool track = any_requires_grad({&a});
  const double inv_n = 1.0 / static_cast<double>(a.numel());
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  Tensor out = Tensor::from_data({1}, {acc * inv_n}, track);
  check_finite(out.values(), "mean_all");
  if (track) {
    attach(out, "mean_all", {a}, [a, inv_n](std::span<const double> g) {
      auto ga = grad_buf(a);
      const double gv = g[0] * inv_n;
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += gv;
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  const bool track = any_requires_grad({&a});
  Tensor out = Tensor::from_data(std::move(shape), {a.values().begin(), a.values().end()}, track);
  if (track) {
    attach(out, "reshape", {a}, [a](std::span<const double> g) {
      auto ga = grad_buf(a);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw DimensionError("concat_channels: no inputs");
  require_3d(xs[0], "concat_channels");
  const int B = xs[0].dim(0), L = xs[0].dim(2);
  int C = 0;
  bool track = false;
  for (const Tensor& x : xs) {
    require_3d(x, "concat_channels");
    if (x.dim(0) != B || x.dim(2) != L)
      throw DimensionError("concat_channels: incompatible " + shape_str(x.shape()));
    C += x.dim(1);
    track = track || x.requires_grad();
  }
  track = track && grad_enabled();
  Tensor out = make_output({B, C, L}, track);
  auto ov = out.values();
  for (int b = 0; b < B; ++b) {
    int coff = 0;
    for (const Tensor& x : xs) {
      const int Cx = x.dim(1);
      auto xv = x.values();
      std::copy_n(&xv[static_cast<size_t>(b) * Cx * L], static_cast<size_t>(Cx) * L,
                  &ov[(static_cast<size_t>(b) * C + coff) * L]);
      coff += Cx;
    }
  }
  if (track) {
    attach(out, "concat_channels", xs, [xs, B, C, L](std::span<const double> g) {
      for (int b = 0; b < B; ++b) {
        int coff = 0;
        for (const Tensor& x : xs) {
          const int Cx = x.dim(1);
          if (x.requires_grad()) {
            auto gx = grad_buf(x);
            const double* gs = &g[(static_cast<size_t>(b) * C + coff) * L];
            double* gd = &gx[static_cast<size_t>(b) * Cx * L];
            for (int i = 0; i < Cx * L; ++i) gd[i] += gs[i];
          }
          coff += Cx;
        }
      }
    });
  }
  return out;
}

Tensor pad_right(const Tensor& x, int new_len) {
  require_3d(x, "pad_right");
  const int B = x.dim(0), C = x.dim(1), L = x.dim(2);
  if (new_len < L) throw DimensionError("pad_right: new_len shorter than input");
  if (new_len == L) return x;
  const bool track = any_requires_grad({&x});
  Tensor out = make_output({B, C, new_len}, track);
  auto xv = x.values();
  auto ov = out.values();
  for (int bc = 0; bc < B * C; ++bc)
    std::copy_n(&xv[static_cast<size_t>(bc) * L], L, &ov[static_cast<size_t>(bc) * new_len]);
  if (track) {
    attach(out, "pad_right", {x}, [x, B, C, L, new_len](std::span<const double> g) {
      auto gx = grad_buf(x);
      for (int bc = 0; bc < B * C; ++bc) {
        const double* gs = &g[static_cast<size_t>(bc) * new_len];
        double* gd = &gx[static_cast<size_t>(bc) * L];
        for (int i = 0; i < L; ++i) gd[i] += gs[i];
      }
    });
  }
  return out;
}

Tensor crop_right(const Tensor& x, int new_len) {
  require_3d(x, "crop_right");
  const int B = x.dim(0), C = x.dim(1), L = x.dim(2);
  if (new_len > L) throw DimensionError("crop_right: new_len exceeds input");
  if (new_len == L) return x;
  const bool track = any_requires_grad({&x});
  Tensor out = make_output({B, C, new_len}, track);
  auto xv = x.values();
  auto ov = out.values();
  for (int bc = 0; bc < B * C; ++bc)
    std::copy_n(&xv[static_cast<size_t>(bc) * L], new_len, &ov[static_cast<size_t>(bc) * new_len]);
  if (track) {
    attach(out, "crop_right", {x}, [x, B, C, L, new_len](std::span<const double> g) {
      auto gx = grad_buf(x);
      for (int bc = 0; bc < B * C; ++bc) {
        const double* gs = &g[static_cast<size_t>(bc) * new_len];
        double* gd = &gx[static_cast<size_t>(bc) * L];
        for (int i = 0; i < new_len; ++i) gd[i] += gs[i];
      }
    });
  }
  return out;
}

Tensor upsample2(const Tensor& x) {
  require_3d(x, "upsample2");
  const int B = x.dim(0), C = x.dim(1), L = x.dim(2);
  const bool track = any_requires_grad({&x});
  Tensor out = make_output({B, C, 2 * L}, track);
  auto xv = x.values();
  auto ov = out.values();
  for (int bc = 0; bc < B * C; ++bc) {
    const double* src = &xv[static_cast<size_t>(bc) * L];
    double* dst = &ov[static_cast<size_t>(bc) * 2 * L];
    for (int i = 0; i < L; ++i) {
      dst[2 * i] = src[i];
      dst[2 * i + 1] = src[i];
    }
  }
  if (track) {
    attach(out, "upsample2", {x}, [x, B, C, L](std::span<const double> g) {
      auto gx = grad_buf(x);
      for (int bc = 0; bc < B * C; ++bc) {
        const double* gs = &g[static_cast<size_t>(bc) * 2 * L];
        double* gd = &gx[static_cast<size_t>(bc) * L];
        for (int i = 0; i < L; ++i) gd[i] += gs[2 * i] + gs[2 * i + 1];
      }
    });
  }
  return out;
}

namespace {

// Output positions where every kernel tap stays inside [0, L); edges are
// handled with per-tap guards so the interior loop carries no branches.
struct ConvInterior {
  int lo_a, lo_b;  // inclusive interior range, empty when lo_a > lo_b
};

ConvInterior conv_interior(int L, int Lo, int K, int stride, int padding) {
  int lo_a = (padding + stride - 1) / stride;
  const int num = L - K + padding;
  int lo_b = num < 0 ? -1 : num / stride;
  lo_a = std::min(lo_a, Lo);
  lo_b = std::min(lo_b, Lo - 1);
  if (lo_b < lo_a) lo_b = lo_a - 1;
  return {lo_a, lo_b};
}

void conv_row_forward(const double* xrow, const double* wrow, double* orow, int L, int Lo, int K, int stride,
                      int padding) {
  const auto [lo_a, lo_b] = conv_interior(L, Lo, K, stride, padding);
  auto edge = [&](int begin, int end) {
    for (int lo = begin; lo < end; ++lo) {
      const int base = lo * stride - padding;
      const int k0 = base < 0 ? -base : 0;
      const int k1 = std::min(K, L - base);
      double acc = 0.0;
      for (int k = k0; k < k1; ++k) acc += wrow[k] * xrow[base + k];
      orow[lo] += acc;
    }
  };
  edge(0, lo_a);
  if (K == 3) {
    const double w0 = wrow[0], w1 = wrow[1], w2 = wrow[2];
    if (stride == 1) {
      const double* xp = xrow - padding;
      for (int lo = lo_a; lo <= lo_b; ++lo) orow[lo] += w0 * xp[lo] + w1 * xp[lo + 1] + w2 * xp[lo + 2];
    } else {
      for (int lo = lo_a; lo <= lo_b; ++lo) {
        const int i = lo * stride - padding;
        orow[lo] += w0 * xrow[i] + w1 * xrow[i + 1] + w2 * xrow[i + 2];
      }
    }
  } else {
    for (int lo = lo_a; lo <= lo_b; ++lo) {
      const int base = lo * stride - padding;
      double acc = 0.0;
      for (int k = 0; k < K; ++k) acc += wrow[k] * xrow[base + k];
      orow[lo] += acc;
    }
  }
  edge(std::max(lo_b + 1, lo_a), Lo);
}

void conv_row_grad_w(const double* grow, const double* xrow, double* gwrow, int L, int Lo, int K, int stride,
                     int padding) {
  const auto [lo_a, lo_b] = conv_interior(L, Lo, K, stride, padding);
  auto edge = [&](int begin, int end) {
    for (int lo = begin; lo < end; ++lo) {
      const int base = lo * stride - padding;
      const int k0 = base < 0 ? -base : 0;
      const int k1 = std::min(K, L - base);
      for (int k = k0; k < k1; ++k) gwrow[k] += grow[lo] * xrow[base + k];
    }
  };
  edge(0, lo_a);
  if (K == 3) {
    double a0 = 0.0, a1 = 0.0, a2 = 0.0;
    if (stride == 1) {
      const double* xp = xrow - padding;
      for (int lo = lo_a; lo <= lo_b; ++lo) {
        const double go = grow[lo];
        a0 += go * xp[lo];
        a1 += go * xp[lo + 1];
        a2 += go * xp[lo + 2];
      }
    } else {
      for (int lo = lo_a; lo <= lo_b; ++lo) {
        const double go = grow[lo];
        const int i = lo * stride - padding;
        a0 += go * xrow[i];
        a1 += go * xrow[i + 1];
        a2 += go * xrow[i + 2];
      }
    }
    gwrow[0] += a0;
    gwrow[1] += a1;
    gwrow[2] += a2;
  } else {
    for (int lo = lo_a; lo <= lo_b; ++lo) {
      const int base = lo * stride - padding;
      for (int k = 0; k < K; ++k) gwrow[k] += grow[lo] * xrow[base + k];
    }
  }
  edge(std::max(lo_b + 1, lo_a), Lo);
}

void conv_row_grad_x(const double* grow, const double* wrow, double* gxrow, int L, int Lo, int K, int stride,
                     int padding) {
  if (stride == 1) {
    // gx[i] += sum_k w[k] * g[i - k + padding], input-centric
    const int i_a = std::max(0, K - 1 - padding);
    const int i_b = std::min(L - 1, Lo - 1 - padding);
    auto edge = [&](int begin, int end) {
      for (int i = begin; i < end; ++i) {
        double acc = 0.0;
        for (int k = 0; k < K; ++k) {
          const int lo = i - k + padding;
          if (lo >= 0 && lo < Lo) acc += wrow[k] * grow[lo];
        }
        gxrow[i] += acc;
      }
    };
    if (i_b < i_a) {
      edge(0, L);
      return;
    }
    edge(0, i_a);
    if (K == 3) {
      const double w0 = wrow[0], w1 = wrow[1], w2 = wrow[2];
      const double* gp = grow + padding;
      for (int i = i_a; i <= i_b; ++i) gxrow[i] += w0 * gp[i] + w1 * gp[i - 1] + w2 * gp[i - 2];
    } else {
      for (int i = i_a; i <= i_b; ++i) {
        double acc = 0.0;
        for (int k = 0; k < K; ++k) acc += wrow[k] * grow[i - k + padding];
        gxrow[i] += acc;
      }
    }
    edge(i_b + 1, L);
    return;
  }
  // strided: scatter from each output position
  const auto [lo_a, lo_b] = conv_interior(L, Lo, K, stride, padding);
  auto edge = [&](int begin, int end) {
    for (int lo = begin; lo < end; ++lo) {
      const int base = lo * stride - padding;
      const int k0 = base < 0 ? -base : 0;
      const int k1 = std::min(K, L - base);
      for (int k = k0; k < k1; ++k) gxrow[base + k] += wrow[k] * grow[lo];
    }
  };
  edge(0, lo_a);
  for (int lo = lo_a; lo <= lo_b; ++lo) {
    const int base = lo * stride - padding;
    const double go = grow[lo];
    for (int k = 0; k < K; ++k) gxrow[base + k] += wrow[k] * go;
  }
  edge(std::max(lo_b + 1, lo_a), Lo);
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
  require_3d(x, "conv1d");
  if (w.ndim() != 3) throw DimensionError("conv1d: kernel must be [Cout,Cin,K], got " + shape_str(w.shape()));
  const int B = x.dim(0), Cin = x.dim(1), L = x.dim(2);
  const int Cout = w.dim(0), K = w.dim(2);
  if (w.dim(1) != Cin)
    throw DimensionError("conv1d: kernel expects " + std::to_string(w.dim(1)) + " input channels, input has " +
                         std::to_string(Cin));
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != Cout))
    throw DimensionError("conv1d: bias must be [Cout]");
  if (stride < 1) throw DimensionError("conv1d: stride must be >= 1");
  if (padding < 0) throw DimensionError("conv1d: padding must be >= 0");
  if (K > L + 2 * padding) throw DimensionError("conv1d: kernel longer than padded input");
  check_finite(x.values(), "conv1d input");
  const int Lo = (L + 2 * padding - K) / stride + 1;

  const bool track = any_requires_grad({&x, &w, &b});
  Tensor out = make_output({B, Cout, Lo}, track);
  auto xv = x.values();
  auto wv = w.values();
  auto ov = out.values();
  for (int bi = 0; bi < B; ++bi) {
    for (int oc = 0; oc < Cout; ++oc) {
      double* orow = &ov[(static_cast<size_t>(bi) * Cout + oc) * Lo];
      const double bias = b.defined() ? b.values()[static_cast<size_t>(oc)] : 0.0;
      std::fill_n(orow, Lo, bias);
      for (int ic = 0; ic < Cin; ++ic)
        conv_row_forward(&xv[(static_cast<size_t>(bi) * Cin + ic) * L],
                         &wv[(static_cast<size_t>(oc) * Cin + ic) * K], orow, L, Lo, K, stride, padding);
    }
  }
  check_finite(ov, "conv1d");
  if (track) {
    attach(out, "conv1d", b.defined() ? std::vector<Tensor>{x, w, b} : std::vector<Tensor>{x, w},
           [x, w, b, stride, padding, B, Cin, Cout, L, K, Lo](std::span<const double> g) {
             auto xv = x.values();
             auto wv = w.values();
             const bool need_gx = x.requires_grad();
             const bool need_gw = w.requires_grad();
             const bool need_gb = b.defined() && b.requires_grad();
             std::span<double> gx, gw, gb;
             if (need_gx) gx = grad_buf(x);
             if (need_gw) gw = grad_buf(w);
             if (need_gb) gb = grad_buf(b);
             for (int bi = 0; bi < B; ++bi) {
               for (int oc = 0; oc < Cout; ++oc) {
                 const double* grow = &g[(static_cast<size_t>(bi) * Cout + oc) * Lo];
                 if (need_gb) {
                   double acc = 0.0;
                   for (int lo = 0; lo < Lo; ++lo) acc += grow[lo];
                   gb[static_cast<size_t>(oc)] += acc;
                 }
                 if (!need_gx && !need_gw) continue;
                 for (int ic = 0; ic < Cin; ++ic) {
                   const double* xrow = &xv[(static_cast<size_t>(bi) * Cin + ic) * L];
                   const double* wrow = &wv[(static_cast<size_t>(oc) * Cin + ic) * K];
                   if (need_gw)
                     conv_row_grad_w(grow, xrow, &gw[(static_cast<size_t>(oc) * Cin + ic) * K], L, Lo, K, stride,
                                     padding);
                   if (need_gx)
                     conv_row_grad_x(grow, wrow, &gx[(static_cast<size_t>(bi) * Cin + ic) * L], L, Lo, K, stride,
                                     padding);
                 }
               }
             }
           });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 2 || w.ndim() != 2) throw DimensionError("linear: expected x [B,F], w [O,F]");
  const int B = x.dim(0), F = x.dim(1), O = w.dim(0);
  if (w.dim(1) != F)
    throw DimensionError("linear: weight expects " + std::to_string(w.dim(1)) + " features, input has " +
                         std::to_string(F));
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != O)) throw DimensionError("linear: bias must be [O]");
  const bool track = any_requires_grad({&x, &w, &b});
  Tensor out = make_output({B, O}, track);
  auto xv = x.values();
  auto wv = w.values();
  auto ov = out.values();
  for (int bi = 0; bi < B; ++bi) {
    const double* xrow = &xv[static_cast<size_t>(bi) * F];
    double* orow = &ov[static_cast<size_t>(bi) * O];
    for (int o = 0; o < O; ++o) {
      const double* wrow = &wv[static_cast<size_t>(o) * F];
      double acc = b.defined() ? b.values()[static_cast<size_t>(o)] : 0.0;
      for (int f = 0; f < F; ++f) acc += xrow[f] * wrow[f];
      orow[o] = acc;
    }
  }
  check_finite(ov, "linear");
  if (track) {
    attach(out, "linear", b.defined() ? std::vector<Tensor>{x, w, b} : std::vector<Tensor>{x, w},
           [x, w, b, B, F, O](std::span<const double> g) {
             auto xv = x.values();
             auto wv = w.values();
             const bool need_gx = x.requires_grad();
             const bool need_gw = w.requires_grad();
             const bool need_gb = b.defined() && b.requires_grad();
             std::span<double> gx, gw, gb;
             if (need_gx) gx = grad_buf(x);
             if (need_gw) gw = grad_buf(w);
             if (need_gb) gb = grad_buf(b);
             for (int bi = 0; bi < B; ++bi) {
               const double* grow = &g[static_cast<size_t>(bi) * O];
               const double* xrow = &xv[static_cast<size_t>(bi) * F];
               for (int o = 0; o < O; ++o) {
                 const double go = grow[o];
                 if (go == 0.0) continue;
                 if (need_gb) gb[static_cast<size_t>(o)] += go;
                 const double* wrow = &wv[static_cast<size_t>(o) * F];
                 if (need_gx) {
                   double* gxrow = &gx[static_cast<size_t>(bi) * F];
                   for (int f = 0; f < F; ++f) gxrow[f] += go * wrow[f];
                 }
                 if (need_gw) {
                   double* gwrow = &gw[static_cast<size_t>(o) * F];
                   for (int f = 0; f < F; ++f) gwrow[f] += go * xrow[f];
                 }
               }
             }
           });
  }
  return out;
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, double eps) {
  require_3d(x, "group_norm");
  const int B = x.dim(0), C = x.dim(1), L = x.dim(2);
  if (groups < 1 || C % groups != 0)
    throw DimensionError("group_norm: groups=" + std::to_string(groups) + " must divide C=" + std::to_string(C));
  if (gamma.ndim() != 1 || gamma.dim(0) != C || beta.ndim() != 1 || beta.dim(0) != C)
    throw DimensionError("group_norm: gamma/beta must be [C]");
  const int Cg = C / groups;
  const int N = Cg * L;
  const bool track = any_requires_grad({&x, &gamma, &beta});
  Tensor out = make_output({B, C, L}, track);
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  auto ov = out.values();
  // saved per (b, group): mean and inverse stddev
  auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(B) * groups * 2);
  for (int bi = 0; bi < B; ++bi) {
    for (int g = 0; g < groups; ++g) {
      const double* base = &xv[(static_cast<size_t>(bi) * C + static_cast<size_t>(g) * Cg) * L];
      double mean = 0.0;
      for (int i = 0; i < N; ++i) mean += base[i];
      mean /= N;
      double var = 0.0;
      for (int i = 0; i < N; ++i) {
        const double d = base[i] - mean;
        var += d * d;
      }
      var /= N;
      const double inv_std = 1.0 / std::sqrt(var + eps);
      (*stats)[(static_cast<size_t>(bi) * groups + g) * 2] = mean;
      (*stats)[(static_cast<size_t>(bi) * groups + g) * 2 + 1] = inv_std;
      for (int c = 0; c < Cg; ++c) {
        const int ch = g * Cg + c;
        const double* xrow = base + static_cast<size_t>(c) * L;
        double* orow = &ov[(static_cast<size_t>(bi) * C + ch) * L];
        const double a = gv[static_cast<size_t>(ch)] * inv_std;
        const double b0 = bv[static_cast<size_t>(ch)] - a * mean;
        for (int l = 0; l < L; ++l) orow[l] = a * xrow[l] + b0;
      }
    }
  }
  check_finite(ov, "group_norm");
  if (track) {
    attach(out, "group_norm", {x, gamma, beta},
           [x, gamma, beta, stats, B, C, L, groups, Cg, N](std::span<const double> g) {
             auto xv = x.values();
             auto gv = gamma.values();
             const bool need_gx = x.requires_grad();
             const bool need_gg = gamma.requires_grad();
             const bool need_gb = beta.requires_grad();
             std::span<double> gx, gg, gb;
             if (need_gx) gx = grad_buf(x);
             if (need_gg) gg = grad_buf(gamma);
             if (need_gb) gb = grad_buf(beta);
             for (int bi = 0; bi < B; ++bi) {
               for (int grp = 0; grp < groups; ++grp) {
                 const double mean = (*stats)[(static_cast<size_t>(bi) * groups + grp) * 2];
                 const double inv_std = (*stats)[(static_cast<size_t>(bi) * groups + grp) * 2 + 1];
                 const double* xbase = &xv[(static_cast<size_t>(bi) * C + static_cast<size_t>(grp) * Cg) * L];
                 const double* gbase = &g[(static_cast<size_t>(bi) * C + static_cast<size_t>(grp) * Cg) * L];
                 if (need_gg || need_gb) {
                   for (int c = 0; c < Cg; ++c) {
                     const int ch = grp * Cg + c;
                     const double* xrow = xbase + static_cast<size_t>(c) * L;
                     const double* grow = gbase + static_cast<size_t>(c) * L;
                     double sg = 0.0, sgx = 0.0;
                     for (int l = 0; l < L; ++l) {
                       sg += grow[l];
                       sgx += grow[l] * (xrow[l] - mean) * inv_std;
                     }
                     if (need_gb) gb[static_cast<size_t>(ch)] += sg;
                     if (need_gg) gg[static_cast<size_t>(ch)] += sgx;
                   }
                 }
                 if (need_gx) {
                   // dx = inv_std * (h - mean(h) - xhat * mean(h*xhat)),  h = g*gamma
                   double s1 = 0.0, s2 = 0.0;
                   for (int c = 0; c < Cg; ++c) {
                     const int ch = grp * Cg + c;
                     const double ga = gv[static_cast<size_t>(ch)];
                     const double* xrow = xbase + static_cast<size_t>(c) * L;
                     const double* grow = gbase + static_cast<size_t>(c) * L;
                     for (int l = 0; l < L; ++l) {
                       const double h = grow[l] * ga;
                       s1 += h;
                       s2 += h * (xrow[l] - mean) * inv_std;
                     }
                   }
                   s1 /= N;
                   s2 /= N;
                   for (int c = 0; c < Cg; ++c) {
                     const int ch = grp * Cg + c;
                     const double ga = gv[static_cast<size_t>(ch)];
                     const double* xrow = xbase + static_cast<size_t>(c) * L;
                     const double* grow = gbase + static_cast<size_t>(c) * L;
                     double* gxrow = &gx[(static_cast<size_t>(bi) * C + ch) * L];
                     for (int l = 0; l < L; ++l) {
                       const double xhat = (xrow[l] - mean) * inv_std;
                       gxrow[l] += inv_std * (grow[l] * ga - s1 - xhat * s2);
                     }
                   }
                 }
               }
             }
           });
  }
  return out;
}

Tensor adaptive_avg_pool1d(const Tensor& x, int out_len) {
  require_3d(x, "adaptive_avg_pool1d");
  const int B = x.dim(0), C = x.dim(1), L = x.dim(2);
  if (out_len < 1 || out_len > L)
    throw DimensionError("adaptive_avg_pool1d: out_len=" + std::to_string(out_len) + " not in [1," +
                         std::to_string(L) + "]");
  const bool track = any_requires_grad({&x});
  Tensor out = make_output({B, C, out_len}, track);
  auto xv = x.values();
  auto ov = out.values();
  for (int bc = 0; bc < B * C; ++bc) {
    const double* src = &xv[static_cast<size_t>(bc) * L];
    double* dst = &ov[static_cast<size_t>(bc) * out_len];
    for (int i = 0; i < out_len; ++i) {
      const int s = static_cast<int>(static_cast<long>(i) * L / out_len);
      const int e = static_cast<int>(static_cast<long>(i + 1) * L / out_len);
      double acc = 0.0;
      for (int j = s; j < e; ++j) acc += src[j];
      dst[i] = acc / (e - s);
    }
  }
  check_finite(ov, "adaptive_avg_pool1d");
  if (track) {
    attach(out, "adaptive_avg_pool1d", {x}, [x, B, C, L, out_len](std::span<const double> g) {
      auto gx = grad_buf(x);
      for (int bc = 0; bc < B * C; ++bc) {
        const double* gs = &g[static_cast<size_t>(bc) * out_len];
        double* gd = &gx[static_cast<size_t>(bc) * L];
        for (int i = 0; i < out_len; ++i) {
          const int s = static_cast<int>(static_cast<long>(i) * L / out_len);
          const int e = static_cast<int>(static_cast<long>(i + 1) * L / out_len);
          const double gv = gs[i] / (e - s);
          for (int j = s; j < e; ++j) gd[j] += gv;
        }
      }
    });
  }
  return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_3d(x, "add_channel_bias");
  const int B = x.dim(0), C = x.dim(1), L = x.dim(2);
  if (bias.ndim() != 2 || bias.dim(0) != B || bias.dim(1) != C)
    throw DimensionError("add_channel_bias: bias must be [B,C], got " + shape_str(bias.shape()));
  const bool track = any_requires_grad({&x, &bias});
  Tensor out = make_output({B, C, L}, track);
  auto xv = x.values();
  auto bv = bias.values();
  auto ov = out.values();
  for (int bc = 0; bc < B * C; ++bc) {
    const double bb = bv[static_cast<size_t>(bc)];
    const double* src = &xv[static_cast<size_t>(bc) * L];
    double* dst = &ov[static_cast<size_t>(bc) * L];
    for (int l = 0; l < L; ++l) dst[l] = src[l] + bb;
  }
  check_finite(ov, "add_channel_bias");
  if (track) {
    attach(out, "add_channel_bias", {x, bias}, [x, bias, B, C, L](std::span<const double> g) {
      if (x.requires_grad()) {
        auto gx = grad_buf(x);
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto gb = grad_buf(bias);
        for (int bc = 0; bc < B * C; ++bc) {
          const double* gs = &g[static_cast<size_t>(bc) * L];
          double acc = 0.0;
          for (int l = 0; l < L; ++l) acc += gs[l];
          gb[static_cast<size_t>(bc)] += acc;
        }
      }
    });
  }
  return out;
}

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn, std::vector<Tensor> inputs,
                  double epsilon) {
  if (epsilon < 1e-7 || epsilon > 1e-3) throw ConfigError("grad_check: epsilon must lie in [1e-7, 1e-3]");
  for (const Tensor& t : inputs) check_finite(t.values(), "grad_check input");

  Tensor out = fn(inputs);
  // Fixed pseudo-random reduction weights (LCG) so every output element
  // contributes with a distinct coefficient.
  std::vector<double> wdata(static_cast<size_t>(out.numel()));
  std::uint64_t s = 0x243f6a8885a308d3ULL;
  for (double& w : wdata) {
    s = s * 6364136223846793005ULL + 1442695040888963407ULL;
    w = 0.5 + static_cast<double>(s >> 40) / static_cast<double>(1ULL << 24);  // [0.5, 1.5)
  }
  Tensor weights = Tensor::from_data(out.shape(), wdata);
  auto reduce_value = [&wdata](const Tensor& t) {
    double acc = 0.0;
    auto tv = t.values();
    for (size_t i = 0; i < tv.size(); ++i) acc += tv[i] * wdata[i];
    return acc;
  };

  Tensor loss = mean_all(mul(out, weights));
  backward(loss);
  const double wscale = 1.0 / static_cast<double>(out.numel());  // mean_all folds 1/N into grads

  // Save the analytic gradients, then probe by perturbing the inputs in
  // place: fn may read them either through the argument or by capture.
  std::vector<std::vector<double>> analytic(inputs.size());
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    if (!inputs[ti].requires_grad()) continue;
    if (!inputs[ti].grad_touched())
      throw NumericError("grad_check: input " + std::to_string(ti) + " received no gradient");
    auto g = inputs[ti].grad();
    check_finite(g, "grad_check analytic gradient");
    analytic[ti].assign(g.begin(), g.end());
  }

  NoGradGuard guard;  // probes only need values
  double max_err = 0.0;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    if (!inputs[ti].requires_grad()) continue;
    auto pv = inputs[ti].values();
    for (int i = 0; i < inputs[ti].numel(); ++i) {
      const double keep = pv[static_cast<size_t>(i)];
      pv[static_cast<size_t>(i)] = keep + epsilon;
      const double up = reduce_value(fn(inputs));
      pv[static_cast<size_t>(i)] = keep - epsilon;
      const double dn = reduce_value(fn(inputs));
      pv[static_cast<size_t>(i)] = keep;
      const double numeric = (up - dn) / (2.0 * epsilon) * wscale;
      const double a = analytic[ti][static_cast<size_t>(i)];
      const double err = std::fabs(a - numeric) / std::max(1.0, std::fabs(a));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace diffe
