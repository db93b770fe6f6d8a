#include "rrwnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace rrwnet::ad {

namespace {

using detail::grad_buffer;
using detail::make_result;

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using StridedMap = Eigen::Map<MatR<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>>;

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

void require_chw(const Shape& s, const char* op) {
  if (s.size() != 3) {
    throw ShapeError(std::string(op) + ": expected a [C,H,W] tensor, got " + shape_str(s));
  }
}

// Upper bound on the im2col scratch buffer, in elements.
constexpr std::size_t kIm2colBudget = std::size_t{1} << 21;

struct ConvGeometry {
  std::size_t cin, cout, h, w, k, pad;
  std::size_t patch() const { return cin * k * k; }
  std::size_t rows_per_chunk() const {
    return std::max<std::size_t>(1, kIm2colBudget / std::max<std::size_t>(1, patch() * w));
  }
};

// Fills cols[patch, (y1-y0)*W] for output rows [y0, y1).
template <typename T>
void im2col(const T* in, const ConvGeometry& g, std::size_t y0, std::size_t y1, T* cols) {
  const std::size_t n = (y1 - y0) * g.w;
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  const auto h = static_cast<std::ptrdiff_t>(g.h);
  const auto w = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const T* plane = in + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((ci * g.k + ky) * g.k + kx) * n;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        const std::ptrdiff_t x_begin = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x_end = std::min<std::ptrdiff_t>(w, w - dx);
        for (std::size_t y = y0; y < y1; ++y) {
          T* dst = row + (y - y0) * g.w;
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - pad;
          if (iy < 0 || iy >= h || x_begin >= x_end) {
            std::fill(dst, dst + g.w, T(0));
            continue;
          }
          std::fill(dst, dst + x_begin, T(0));
          std::memcpy(dst + x_begin, plane + iy * w + x_begin + dx,
                      static_cast<std::size_t>(x_end - x_begin) * sizeof(T));
          std::fill(dst + x_end, dst + w, T(0));
        }
      }
    }
  }
}

// Scatter-adds cols back onto the input gradient.
template <typename T>
void col2im(const T* cols, const ConvGeometry& g, std::size_t y0, std::size_t y1, T* din) {
  const std::size_t n = (y1 - y0) * g.w;
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  const auto h = static_cast<std::ptrdiff_t>(g.h);
  const auto w = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    T* plane = din + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((ci * g.k + ky) * g.k + kx) * n;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        const std::ptrdiff_t x_begin = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x_end = std::min<std::ptrdiff_t>(w, w - dx);
        for (std::size_t y = y0; y < y1; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - pad;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + (y - y0) * g.w;
          T* dst = plane + iy * w + dx;
          for (std::ptrdiff_t x = x_begin; x < x_end; ++x) dst[x] += src[x];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = grad_buffer(*p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = grad_buffer(pa);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = grad_buffer(pb);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= factor;
  return make_result<T>(a.shape(), std::move(out), {a.node()}, [factor](Node<T>& self) {
    auto& g = grad_buffer(*self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.values()) total += v;
  return make_result<T>(Shape{}, {total}, {a.node()}, [](Node<T>& self) {
    auto& g = grad_buffer(*self.parents[0]);
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  const auto in = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
  return make_result<T>(a.shape(), std::move(out), {a.node()}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = grad_buffer(p);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (p.value[i] > T(0)) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  const auto in = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = in[i];
    if (x >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-x));
    } else {
      const T e = std::exp(x);
      out[i] = e / (T(1) + e);
    }
  }
  return make_result<T>(a.shape(), std::move(out), {a.node()}, [](Node<T>& self) {
    auto& g = grad_buffer(*self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = self.value[i];
      g[i] += self.grad[i] * s * (T(1) - s);
    }
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias) {
  require_chw(input.shape(), "conv2d");
  const Shape& ks = kernel.shape();
  if (ks.size() != 4 || ks[2] != ks[3] || ks[2] % 2 == 0) {
    throw ShapeError("conv2d: kernel must be [Cout,Cin,k,k] with odd k, got " + shape_str(ks));
  }
  if (ks[1] != input.dim(0)) {
    throw ShapeError("conv2d: input has " + std::to_string(input.dim(0)) +
                     " channels but kernel " + shape_str(ks) + " expects " +
                     std::to_string(ks[1]));
  }
  if (bias.shape() != Shape{ks[0]}) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match Cout=" +
                     std::to_string(ks[0]));
  }
  const ConvGeometry g{ks[1], ks[0], input.dim(1), input.dim(2), ks[2], ks[2] / 2};
  const std::size_t hw = g.h * g.w;
  std::vector<T> out(g.cout * hw);

  Eigen::Map<const MatR<T>> kmat(kernel.values().data(), g.cout, g.patch());
  if (g.k == 1) {
    Eigen::Map<const MatR<T>> in(input.values().data(), g.cin, hw);
    Eigen::Map<MatR<T>> o(out.data(), g.cout, hw);
    o.noalias() = kmat * in;
  } else {
    const std::size_t rows = g.rows_per_chunk();
    std::vector<T> cols(g.patch() * std::min(rows, g.h) * g.w);
    for (std::size_t y0 = 0; y0 < g.h; y0 += rows) {
      const std::size_t y1 = std::min(g.h, y0 + rows);
      const std::size_t n = (y1 - y0) * g.w;
      im2col(input.values().data(), g, y0, y1, cols.data());
      Eigen::Map<const MatR<T>> c(cols.data(), g.patch(), n);
      StridedMap<T> o(out.data() + y0 * g.w, g.cout, n, Eigen::OuterStride<>(hw));
      o.noalias() = kmat * c;
    }
  }
  const auto b = bias.values();
  for (std::size_t co = 0; co < g.cout; ++co) {
    T* row = out.data() + co * hw;
    for (std::size_t i = 0; i < hw; ++i) row[i] += b[co];
  }

  return make_result<T>(
      Shape{g.cout, g.h, g.w}, std::move(out), {input.node(), kernel.node(), bias.node()},
      [g](Node<T>& self) {
        auto& in = *self.parents[0];
        auto& ker = *self.parents[1];
        auto& bi = *self.parents[2];
        const std::size_t hw = g.h * g.w;
        if (bi.requires_grad) {
          auto& gb = grad_buffer(bi);
          for (std::size_t co = 0; co < g.cout; ++co) {
            const T* row = self.grad.data() + co * hw;
            T acc = 0;
            for (std::size_t i = 0; i < hw; ++i) acc += row[i];
            gb[co] += acc;
          }
        }
        if (!in.requires_grad && !ker.requires_grad) return;
        Eigen::Map<const MatR<T>> kmat(ker.value.data(), g.cout, g.patch());
        if (g.k == 1) {
          Eigen::Map<const MatR<T>> go(self.grad.data(), g.cout, hw);
          if (ker.requires_grad) {
            Eigen::Map<MatR<T>> gk(grad_buffer(ker).data(), g.cout, g.cin);
            Eigen::Map<const MatR<T>> x(in.value.data(), g.cin, hw);
            gk.noalias() += go * x.transpose();
          }
          if (in.requires_grad) {
            Eigen::Map<MatR<T>> gi(grad_buffer(in).data(), g.cin, hw);
            gi.noalias() += kmat.transpose() * go;
          }
          return;
        }
        const std::size_t rows = g.rows_per_chunk();
        const std::size_t max_n = std::min(rows, g.h) * g.w;
        std::vector<T> cols(g.patch() * max_n);
        for (std::size_t y0 = 0; y0 < g.h; y0 += rows) {
          const std::size_t y1 = std::min(g.h, y0 + rows);
          const std::size_t n = (y1 - y0) * g.w;
          ConstStridedMap<T> go(self.grad.data() + y0 * g.w, g.cout, n, Eigen::OuterStride<>(hw));
          if (ker.requires_grad) {
            im2col(in.value.data(), g, y0, y1, cols.data());
            Eigen::Map<const MatR<T>> c(cols.data(), g.patch(), n);
            Eigen::Map<MatR<T>> gk(grad_buffer(ker).data(), g.cout, g.patch());
            gk.noalias() += go * c.transpose();
          }
          if (in.requires_grad) {
            Eigen::Map<MatR<T>> dc(cols.data(), g.patch(), n);
            dc.noalias() = kmat.transpose() * go;
            col2im(cols.data(), g, y0, y1, grad_buffer(in).data());
          }
        }
      });
}

template <typename T>
Tensor<T> max_pool2(const Tensor<T>& input) {
  require_chw(input.shape(), "max_pool2");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h % 2 || w % 2) {
    throw ShapeError("max_pool2: H and W must be even, got " + shape_str(input.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<T> out(c * oh * ow);
  std::vector<std::uint32_t> argmax(out.size());
  const auto in = input.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const std::size_t base = (ch * h + 2 * y) * w + 2 * x;
        const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
        std::size_t best = cand[0];
        for (std::size_t i = 1; i < 4; ++i) {
          if (in[cand[i]] > in[best]) best = cand[i];
        }
        const std::size_t o = (ch * oh + y) * ow + x;
        out[o] = in[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return make_result<T>(Shape{c, oh, ow}, std::move(out), {input.node()},
                        [argmax = std::move(argmax)](Node<T>& self) {
                          auto& g = grad_buffer(*self.parents[0]);
                          for (std::size_t i = 0; i < argmax.size(); ++i) {
                            g[argmax[i]] += self.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> upsample2(const Tensor<T>& input) {
  require_chw(input.shape(), "upsample2");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t ow = 2 * w;
  std::vector<T> out(c * 4 * h * w);
  const auto in = input.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      T* r0 = out.data() + (ch * 2 * h + 2 * y) * ow;
      T* r1 = r0 + ow;
      const T* src = in.data() + (ch * h + y) * w;
      for (std::size_t x = 0; x < w; ++x) {
        r0[2 * x] = r0[2 * x + 1] = src[x];
      }
      std::copy(r0, r0 + ow, r1);
    }
  }
  return make_result<T>(Shape{c, 2 * h, ow}, std::move(out), {input.node()},
                        [c, h, w](Node<T>& self) {
                          auto& g = grad_buffer(*self.parents[0]);
                          const std::size_t ow = 2 * w;
                          for (std::size_t ch = 0; ch < c; ++ch) {
                            for (std::size_t y = 0; y < h; ++y) {
                              const T* r0 = self.grad.data() + (ch * 2 * h + 2 * y) * ow;
                              const T* r1 = r0 + ow;
                              T* dst = g.data() + (ch * h + y) * w;
                              for (std::size_t x = 0; x < w; ++x) {
                                dst[x] += r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1];
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_chw(a.shape(), "concat_channels");
  require_chw(b.shape(), "concat_channels");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
    throw ShapeError("concat_channels: spatial mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  std::vector<T> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  const std::size_t split = a.size();
  return make_result<T>(Shape{a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, std::move(out),
                        {a.node(), b.node()}, [split](Node<T>& self) {
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          if (pa.requires_grad) {
                            auto& g = grad_buffer(pa);
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                          }
                          if (pb.requires_grad) {
                            auto& g = grad_buffer(pb);
                            for (std::size_t i = 0; i < g.size(); ++i) {
                              g[i] += self.grad[split + i];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& a, std::size_t begin, std::size_t count) {
  require_chw(a.shape(), "slice_channels");
  if (begin + count > a.dim(0)) {
    throw ShapeError("slice_channels: [" + std::to_string(begin) + "," +
                     std::to_string(begin + count) + ") out of range for " + shape_str(a.shape()));
  }
  const std::size_t plane = a.dim(1) * a.dim(2);
  const auto first = a.values().begin() + static_cast<std::ptrdiff_t>(begin * plane);
  std::vector<T> out(first, first + static_cast<std::ptrdiff_t>(count * plane));
  const std::size_t offset = begin * plane;
  return make_result<T>(Shape{count, a.dim(1), a.dim(2)}, std::move(out), {a.node()},
                        [offset](Node<T>& self) {
                          auto& g = grad_buffer(*self.parents[0]);
                          for (std::size_t i = 0; i < self.grad.size(); ++i) {
                            g[offset + i] += self.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> bce(const Tensor<T>& pred, const Tensor<T>& target, const std::optional<Tensor<T>>& mask) {
  require_same_shape(pred.shape(), target.shape(), "bce");
  const std::size_t n = pred.size();
  std::size_t period = n;
  if (mask) {
    const Shape& ms = mask->shape();
    const Shape& ps = pred.shape();
    const bool full = ms == ps;
    const bool trailing = ps.size() >= 2 && ms.size() == 2 && ms[0] == ps[ps.size() - 2] &&
                          ms[1] == ps[ps.size() - 1];
    if (!full && !trailing) {
      throw ShapeError("bce: mask shape " + shape_str(ms) + " incompatible with " + shape_str(ps));
    }
    period = mask->size();
  }
  const auto p = pred.values();
  const auto t = target.values();
  const T lo = static_cast<T>(kBceClamp);
  const T hi = T(1) - lo;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask && !(mask->values()[i % period] > T(0))) continue;
    const double pc = std::clamp(p[i], lo, hi);
    total -= t[i] * std::log(pc) + (1.0 - t[i]) * std::log(1.0 - pc);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("bce: mask selects no elements");
  const T loss = static_cast<T>(total / static_cast<double>(count));

  std::optional<Tensor<T>> keep_mask = mask;
  return make_result<T>(
      Shape{}, {loss}, {pred.node(), target.node()},
      [keep_mask, period, count, lo, hi](Node<T>& self) {
        auto& pn = *self.parents[0];
        if (!pn.requires_grad) return;
        const auto& tv = self.parents[1]->value;
        auto& g = grad_buffer(pn);
        const T scale = self.grad[0] / static_cast<T>(count);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (keep_mask && !(keep_mask->values()[i % period] > T(0))) continue;
          const T pc = std::clamp(pn.value[i], lo, hi);
          g[i] += scale * (pc - tv[i]) / (pc * (T(1) - pc));
        }
      });
}

#define RRWNET_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> scale(const Tensor<T>&, T);                                           \
  template Tensor<T> sum(const Tensor<T>&);                                                \
  template Tensor<T> relu(const Tensor<T>&);                                               \
  template Tensor<T> sigmoid(const Tensor<T>&);                                            \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> max_pool2(const Tensor<T>&);                                          \
  template Tensor<T> upsample2(const Tensor<T>&);                                          \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> slice_channels(const Tensor<T>&, std::size_t, std::size_t);           \
  template Tensor<T> bce(const Tensor<T>&, const Tensor<T>&, const std::optional<Tensor<T>>&);

RRWNET_INSTANTIATE_OPS(float)
RRWNET_INSTANTIATE_OPS(double)

#undef RRWNET_INSTANTIATE_OPS

}  // namespace rrwnet::ad
