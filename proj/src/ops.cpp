#include "umct/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "conv_kernels.hpp"
#include "umct/errors.hpp"

namespace umct::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
  if (s.size() != rank)
    throw ShapeError(std::string(op) + ": " + what + " must have " + std::to_string(rank) +
                     " axes, got " + shape_str(s));
}

template <typename T>
Tensor<T> finish(Tensor<T> out, const char* op) {
  check_finite<T>(out.data(), op);
  return out;
}

template <typename T>
void accumulate(TensorImpl<T>& dst, std::span<const T> src) {
  auto& g = grad_buffer(dst);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
}

struct ConvDims {
  std::int64_t n, cin, d, h, w;
  std::int64_t cout, kd, kh, kw;
  std::int64_t od, oh, ow;
  std::array<int, 3> stride, pad;

  std::int64_t taps() const { return kd * kh * kw; }
  std::int64_t rows() const { return cin * taps(); }
  std::int64_t out_spatial() const { return od * oh * ow; }
  std::int64_t in_spatial() const { return d * h * w; }
};

ConvDims conv_dims(const Shape& x, const Shape& k, const ConvGeometry& g) {
  require_rank(x, 5, "conv3d", "input");
  require_rank(k, 5, "conv3d", "kernel");
  for (int a = 0; a < 3; ++a) {
    if (g.stride[a] < 1) throw ParameterError("conv3d: stride must be >= 1");
    if (g.padding[a] < 0) throw ParameterError("conv3d: padding must be >= 0");
  }
  if (k[1] != x[1])
    throw ShapeError("conv3d: kernel axis 1 (Cin=" + std::to_string(k[1]) +
                     ") does not match input axis 1 (C=" + std::to_string(x[1]) + ")");
  ConvDims c{};
  c.n = x[0], c.cin = x[1], c.d = x[2], c.h = x[3], c.w = x[4];
  c.cout = k[0], c.kd = k[2], c.kh = k[3], c.kw = k[4];
  c.stride = g.stride;
  c.pad = g.padding;
  const std::int64_t in_ext[3] = {c.d, c.h, c.w};
  const std::int64_t k_ext[3] = {c.kd, c.kh, c.kw};
  std::int64_t out_ext[3];
  static const char* axis_names[3] = {"D", "H", "W"};
  for (int a = 0; a < 3; ++a) {
    const std::int64_t span = in_ext[a] + 2 * g.padding[a] - k_ext[a];
    if (span < 0)
      throw ShapeError(std::string("conv3d: kernel extent ") + std::to_string(k_ext[a]) +
                       " exceeds padded input extent along axis " + axis_names[a]);
    out_ext[a] = span / g.stride[a] + 1;
  }
  c.od = out_ext[0], c.oh = out_ext[1], c.ow = out_ext[2];
  return c;
}

// Unfolds one sample [Cin,D,H,W] into a (Cin*taps) x (od*oh*ow) matrix.
template <typename T>
void im2col(const T* src, const ConvDims& c, T* col) {
  const std::int64_t S = c.out_spatial();
  std::int64_t row = 0;
  for (std::int64_t ci = 0; ci < c.cin; ++ci) {
    const T* plane = src + ci * c.in_spatial();
    for (std::int64_t a = 0; a < c.kd; ++a)
      for (std::int64_t b = 0; b < c.kh; ++b)
        for (std::int64_t e = 0; e < c.kw; ++e, ++row) {
          T* dst_row = col + row * S;
          // valid output x-range for this tap
          std::int64_t lo = 0, hi = c.ow;
          const std::int64_t off = e - c.pad[2];
          while (lo < hi && lo * c.stride[2] + off < 0) ++lo;
          while (hi > lo && (hi - 1) * c.stride[2] + off >= c.w) --hi;
          for (std::int64_t z = 0; z < c.od; ++z) {
            const std::int64_t iz = z * c.stride[0] - c.pad[0] + a;
            for (std::int64_t y = 0; y < c.oh; ++y) {
              T* dst = dst_row + (z * c.oh + y) * c.ow;
              const std::int64_t iy = y * c.stride[1] - c.pad[1] + b;
              if (iz < 0 || iz >= c.d || iy < 0 || iy >= c.h) {
                std::fill(dst, dst + c.ow, T{0});
                continue;
              }
              const T* s = plane + (iz * c.h + iy) * c.w;
              std::fill(dst, dst + lo, T{0});
              if (c.stride[2] == 1) {
                std::memcpy(dst + lo, s + lo + off, sizeof(T) * static_cast<std::size_t>(hi - lo));
              } else {
                for (std::int64_t x = lo; x < hi; ++x) dst[x] = s[x * c.stride[2] + off];
              }
              std::fill(dst + hi, dst + c.ow, T{0});
            }
          }
        }
  }
}

// Adjoint of im2col: scatters-and-adds the column matrix into [Cin,D,H,W].
template <typename T>
void col2im(const T* col, const ConvDims& c, T* dst) {
  const std::int64_t S = c.out_spatial();
  std::int64_t row = 0;
  for (std::int64_t ci = 0; ci < c.cin; ++ci) {
    T* plane = dst + ci * c.in_spatial();
    for (std::int64_t a = 0; a < c.kd; ++a)
      for (std::int64_t b = 0; b < c.kh; ++b)
        for (std::int64_t e = 0; e < c.kw; ++e, ++row) {
          const T* src_row = col + row * S;
          std::int64_t lo = 0, hi = c.ow;
          const std::int64_t off = e - c.pad[2];
          while (lo < hi && lo * c.stride[2] + off < 0) ++lo;
          while (hi > lo && (hi - 1) * c.stride[2] + off >= c.w) --hi;
          for (std::int64_t z = 0; z < c.od; ++z) {
            const std::int64_t iz = z * c.stride[0] - c.pad[0] + a;
            if (iz < 0 || iz >= c.d) continue;
            for (std::int64_t y = 0; y < c.oh; ++y) {
              const std::int64_t iy = y * c.stride[1] - c.pad[1] + b;
              if (iy < 0 || iy >= c.h) continue;
              const T* s = src_row + (z * c.oh + y) * c.ow;
              T* d = plane + (iz * c.h + iy) * c.w;
              for (std::int64_t x = lo; x < hi; ++x) d[x * c.stride[2] + off] += s[x];
            }
          }
        }
  }
}

template <typename T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

bool is_same_stride1(const ConvDims& c) {
  return c.stride[0] == 1 && c.stride[1] == 1 && c.stride[2] == 1 && 2 * c.pad[0] == c.kd - 1 &&
         2 * c.pad[1] == c.kh - 1 && 2 * c.pad[2] == c.kw - 1;
}

kernels::SameConvDims same_dims(const ConvDims& c) {
  return {c.cin, c.cout, c.d, c.h, c.w, c.kd, c.kh, c.kw, c.pad[0], c.pad[1], c.pad[2]};
}

template <typename T>
std::vector<T>& pad_scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

bool is_pointwise(const ConvDims& c) {
  return c.taps() == 1 && c.pad[0] == 0 && c.pad[1] == 0 && c.pad[2] == 0 && c.stride[0] == 1 &&
         c.stride[1] == 1 && c.stride[2] == 1;
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 const ConvGeometry& geometry) {
  const ConvDims c = conv_dims(input.shape(), kernel.shape(), geometry);
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != c.cout))
    throw ShapeError("conv3d: bias must have shape [" + std::to_string(c.cout) + "], got " +
                     shape_str(bias.shape()));
  const std::int64_t S = c.out_spatial(), K = c.rows();
  Tensor<T> out(Shape{c.n, c.cout, c.od, c.oh, c.ow});
  const bool pointwise = is_pointwise(c);
  const bool direct = !pointwise && is_same_stride1(c);
  auto& col = scratch<T>();
  if (!pointwise && !direct) col.resize(static_cast<std::size_t>(K * S));
  CMapMat<T> wm(kernel.data().data(), c.cout, K);
  if (direct) {
    const auto sd = same_dims(c);
    const auto packed = kernels::pack_kernel(kernel.data().data(), c.cout, c.cin, c.kd, c.kh, c.kw, false);
    auto& padded = pad_scratch<T>();
    for (std::int64_t n = 0; n < c.n; ++n) {
      kernels::pad_planes(input.data().data() + n * c.cin * c.in_spatial(), c.cin, sd, padded);
      T* o = out.mutable_data().data() + n * c.cout * S;
      kernels::conv_same_forward(padded.data(), packed.data(), sd, c.cin, c.cout, o, false);
      if (bias.defined())
        for (std::int64_t co = 0; co < c.cout; ++co) {
          const T bv = bias.data()[co];
          for (std::int64_t i = 0; i < S; ++i) o[co * S + i] += bv;
        }
    }
  }
  for (std::int64_t n = 0; n < c.n && !direct; ++n) {
    const T* x = input.data().data() + n * c.cin * c.in_spatial();
    const T* colp = x;
    if (!pointwise) {
      im2col(x, c, col.data());
      colp = col.data();
    }
    MapMat<T> om(out.mutable_data().data() + n * c.cout * S, c.cout, S);
    om.noalias() = wm * CMapMat<T>(colp, K, S);
    if (bias.defined()) {
      for (std::int64_t co = 0; co < c.cout; ++co) om.row(co).array() += bias.data()[co];
    }
  }
  if (needs_record({&input, &kernel, &bias})) {
    ImplPtr<T> xi = input.impl(), ki = kernel.impl(), bi = bias.defined() ? bias.impl() : nullptr;
    ImplPtr<T> oi = out.impl();
    std::vector<ImplPtr<T>> ins{xi, ki};
    if (bi) ins.push_back(bi);
    Tape<T>::active()->record("conv3d", std::move(ins), oi, [c, xi, ki, bi, oi, pointwise, direct]() {
      const std::int64_t S = c.out_spatial(), K = c.rows();
      const auto& gout = oi->grad;
      if (direct) {
        const auto sd = same_dims(c);
        auto& padded = pad_scratch<T>();
        std::vector<T> flipped;
        if (xi->requires_grad)
          flipped = kernels::pack_kernel(ki->data.data(), c.cout, c.cin, c.kd, c.kh, c.kw, true);
        for (std::int64_t n = 0; n < c.n; ++n) {
          const T* g = gout.data() + n * c.cout * S;
          if (ki->requires_grad) {
            kernels::pad_planes(xi->data.data() + n * c.cin * c.in_spatial(), c.cin, sd, padded);
            kernels::conv_same_weight_grad(padded.data(), g, sd, grad_buffer(*ki).data());
          }
          if (bi && bi->requires_grad) {
            auto& gb = grad_buffer(*bi);
            for (std::int64_t co = 0; co < c.cout; ++co) {
              T acc{0};
              for (std::int64_t i = 0; i < S; ++i) acc += g[co * S + i];
              gb[co] += acc;
            }
          }
          if (xi->requires_grad) {
            kernels::pad_planes(g, c.cout, sd, padded);
            kernels::conv_same_forward(padded.data(), flipped.data(), sd, c.cout, c.cin,
                                       grad_buffer(*xi).data() + n * c.cin * c.in_spatial(), true);
          }
        }
        return;
      }
      auto& col = scratch<T>();
      if (!pointwise) col.resize(static_cast<std::size_t>(K * S));
      CMapMat<T> wm(ki->data.data(), c.cout, K);
      for (std::int64_t n = 0; n < c.n; ++n) {
        CMapMat<T> gm(gout.data() + n * c.cout * S, c.cout, S);
        const T* x = xi->data.data() + n * c.cin * c.in_spatial();
        if (ki->requires_grad) {
          const T* colp = x;
          if (!pointwise) {
            im2col(x, c, col.data());
            colp = col.data();
          }
          MapMat<T> gw(grad_buffer(*ki).data(), c.cout, K);
          gw.noalias() += gm * CMapMat<T>(colp, K, S).transpose();
        }
        if (bi && bi->requires_grad) {
          auto& gb = grad_buffer(*bi);
          // Plain loop: Eigen's vectorised sum depends on the buffer's alignment.
          const T* g = gout.data() + n * c.cout * S;
          for (std::int64_t co = 0; co < c.cout; ++co) {
            T acc{0};
            for (std::int64_t i = 0; i < S; ++i) acc += g[co * S + i];
            gb[co] += acc;
          }
        }
        if (xi->requires_grad) {
          T* gx = grad_buffer(*xi).data() + n * c.cin * c.in_spatial();
          if (pointwise) {
            MapMat<T>(gx, K, S).noalias() += wm.transpose() * gm;
          } else {
            MapMat<T> cm(col.data(), K, S);
            cm.noalias() = wm.transpose() * gm;
            col2im(col.data(), c, gx);
          }
        }
      }
    });
  }
  return finish(std::move(out), "conv3d");
}

template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                           int factor) {
  if (factor < 2) throw ParameterError("conv_transpose3d: factor must be >= 2");
  require_rank(input.shape(), 5, "conv_transpose3d", "input");
  require_rank(kernel.shape(), 5, "conv_transpose3d", "kernel");
  const auto& xs = input.shape();
  const auto& ks = kernel.shape();
  if (ks[0] != xs[1])
    throw ShapeError("conv_transpose3d: kernel axis 0 (Cin=" + std::to_string(ks[0]) +
                     ") does not match input axis 1 (C=" + std::to_string(xs[1]) + ")");
  if (ks[2] != factor || ks[3] != factor || ks[4] != factor)
    throw ShapeError("conv_transpose3d: kernel spatial extents must equal the factor");
  const std::int64_t N = xs[0], Cin = xs[1], D = xs[2], H = xs[3], W = xs[4], Cout = ks[1];
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != Cout))
    throw ShapeError("conv_transpose3d: bias must have shape [" + std::to_string(Cout) + "]");
  const std::int64_t f = factor, f3 = f * f * f, Sin = D * H * W;
  const std::int64_t OD = D * f, OH = H * f, OW = W * f, Sout = OD * OH * OW;
  Tensor<T> out(Shape{N, Cout, OD, OH, OW});
  auto& ybuf = scratch<T>();
  ybuf.resize(static_cast<std::size_t>(Cout * f3 * Sin));
  CMapMat<T> wm(kernel.data().data(), Cin, Cout * f3);

  // (Cout*f3) x Sin block <-> [Cout, OD, OH, OW]
  auto scatter = [=](const T* y, T* o) {
    for (std::int64_t co = 0; co < Cout; ++co)
      for (std::int64_t a = 0; a < f; ++a)
        for (std::int64_t b = 0; b < f; ++b)
          for (std::int64_t e = 0; e < f; ++e) {
            const T* src = y + ((co * f + a) * f * f + b * f + e) * Sin;
            T* dst = o + co * Sout;
            for (std::int64_t z = 0; z < D; ++z)
              for (std::int64_t yy = 0; yy < H; ++yy) {
                const T* s = src + (z * H + yy) * W;
                T* d = dst + ((z * f + a) * OH + yy * f + b) * OW + e;
                for (std::int64_t x = 0; x < W; ++x) d[x * f] = s[x];
              }
          }
  };
  auto gather = [=](const T* o, T* y) {
    for (std::int64_t co = 0; co < Cout; ++co)
      for (std::int64_t a = 0; a < f; ++a)
        for (std::int64_t b = 0; b < f; ++b)
          for (std::int64_t e = 0; e < f; ++e) {
            T* dst = y + ((co * f + a) * f * f + b * f + e) * Sin;
            const T* src = o + co * Sout;
            for (std::int64_t z = 0; z < D; ++z)
              for (std::int64_t yy = 0; yy < H; ++yy) {
                T* d = dst + (z * H + yy) * W;
                const T* s = src + ((z * f + a) * OH + yy * f + b) * OW + e;
                for (std::int64_t x = 0; x < W; ++x) d[x] = s[x * f];
              }
          }
  };

  for (std::int64_t n = 0; n < N; ++n) {
    CMapMat<T> xm(input.data().data() + n * Cin * Sin, Cin, Sin);
    MapMat<T> ym(ybuf.data(), Cout * f3, Sin);
    ym.noalias() = wm.transpose() * xm;
    T* o = out.mutable_data().data() + n * Cout * Sout;
    scatter(ybuf.data(), o);
    if (bias.defined())
      for (std::int64_t co = 0; co < Cout; ++co) {
        const T bv = bias.data()[co];
        for (std::int64_t s = 0; s < Sout; ++s) o[co * Sout + s] += bv;
      }
  }
  if (needs_record({&input, &kernel, &bias})) {
    ImplPtr<T> xi = input.impl(), ki = kernel.impl(), bi = bias.defined() ? bias.impl() : nullptr;
    ImplPtr<T> oi = out.impl();
    std::vector<ImplPtr<T>> ins{xi, ki};
    if (bi) ins.push_back(bi);
    Tape<T>::active()->record(
        "conv_transpose3d", std::move(ins), oi,
        [=]() {
          auto& gy = scratch<T>();
          gy.resize(static_cast<std::size_t>(Cout * f3 * Sin));
          CMapMat<T> wm(ki->data.data(), Cin, Cout * f3);
          for (std::int64_t n = 0; n < N; ++n) {
            const T* go = oi->grad.data() + n * Cout * Sout;
            gather(go, gy.data());
            CMapMat<T> gym(gy.data(), Cout * f3, Sin);
            if (ki->requires_grad) {
              CMapMat<T> xm(xi->data.data() + n * Cin * Sin, Cin, Sin);
              MapMat<T>(grad_buffer(*ki).data(), Cin, Cout * f3).noalias() += xm * gym.transpose();
            }
            if (xi->requires_grad) {
              MapMat<T>(grad_buffer(*xi).data() + n * Cin * Sin, Cin, Sin).noalias() += wm * gym;
            }
            if (bi && bi->requires_grad) {
              auto& gb = grad_buffer(*bi);
              for (std::int64_t co = 0; co < Cout; ++co) {
                T acc{0};
                for (std::int64_t s = 0; s < Sout; ++s) acc += go[co * Sout + s];
                gb[co] += acc;
              }
            }
          }
        });
  }
  return finish(std::move(out), "conv_transpose3d");
}

namespace {
// Source indices and weights for 1-D linear upsampling, half-voxel centres.
struct LerpTable {
  std::vector<std::int64_t> i0, i1;
  std::vector<double> w1;
};

LerpTable lerp_table(std::int64_t in, int factor) {
  const std::int64_t out = in * factor;
  LerpTable t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w1.resize(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::int64_t>(std::floor(src));
    const std::int64_t hi = std::min(lo + 1, in - 1);
    t.i0[o] = lo;
    t.i1[o] = hi;
    t.w1[o] = src - static_cast<double>(lo);
  }
  return t;
}
}  // namespace

template <typename T>
Tensor<T> resize_trilinear(const Tensor<T>& input, int factor) {
  if (factor < 2) throw ParameterError("resize_trilinear: factor must be >= 2");
  require_rank(input.shape(), 5, "resize_trilinear", "input");
  const auto& s = input.shape();
  const std::int64_t NC = s[0] * s[1], D = s[2], H = s[3], W = s[4];
  const std::int64_t OD = D * factor, OH = H * factor, OW = W * factor;
  auto tz = std::make_shared<LerpTable>(lerp_table(D, factor));
  auto ty = std::make_shared<LerpTable>(lerp_table(H, factor));
  auto tx = std::make_shared<LerpTable>(lerp_table(W, factor));
  Tensor<T> out(Shape{s[0], s[1], OD, OH, OW});

  // Visits each output voxel with its 8 (source index, weight) pairs.
  auto visit = [=](auto&& fn) {
    for (std::int64_t nc = 0; nc < NC; ++nc)
      for (std::int64_t z = 0; z < OD; ++z)
        for (std::int64_t y = 0; y < OH; ++y)
          for (std::int64_t x = 0; x < OW; ++x) {
            const std::int64_t o = ((nc * OD + z) * OH + y) * OW + x;
            const double wz[2] = {1 - tz->w1[z], tz->w1[z]}, wy[2] = {1 - ty->w1[y], ty->w1[y]},
                         wx[2] = {1 - tx->w1[x], tx->w1[x]};
            const std::int64_t iz[2] = {tz->i0[z], tz->i1[z]}, iy[2] = {ty->i0[y], ty->i1[y]},
                               ix[2] = {tx->i0[x], tx->i1[x]};
            for (int a = 0; a < 2; ++a)
              for (int b = 0; b < 2; ++b)
                for (int e = 0; e < 2; ++e)
                  fn(o, ((nc * D + iz[a]) * H + iy[b]) * W + ix[e], static_cast<T>(wz[a] * wy[b] * wx[e]));
          }
  };
  {
    const T* in = input.data().data();
    T* op = out.mutable_data().data();
    visit([&](std::int64_t o, std::int64_t i, T w) { op[o] += w * in[i]; });
  }
  if (needs_record({&input})) {
    ImplPtr<T> xi = input.impl(), oi = out.impl();
    Tape<T>::active()->record("resize_trilinear", {xi}, oi, [=]() {
      T* gx = grad_buffer(*xi).data();
      const T* go = oi->grad.data();
      visit([&](std::int64_t o, std::int64_t i, T w) { gx[i] += w * go[o]; });
    });
  }
  return finish(std::move(out), "resize_trilinear");
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  auto x = input.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  if (needs_record({&input})) {
    ImplPtr<T> xi = input.impl(), oi = out.impl();
    Tape<T>::active()->record("relu", {xi}, oi, [xi, oi]() {
      auto& gx = grad_buffer(*xi);
      for (std::size_t i = 0; i < gx.size(); ++i)
        if (oi->data[i] > T{0}) gx[i] += oi->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  Tensor<T> out(a.shape());
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  if (needs_record({&a, &b})) {
    ImplPtr<T> ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape<T>::active()->record("add", {ai, bi}, oi, [ai, bi, oi]() {
      if (ai->requires_grad) accumulate<T>(*ai, oi->grad);
      if (bi->requires_grad) accumulate<T>(*bi, oi->grad);
    });
  }
  return finish(std::move(out), "add");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  Tensor<T> out(a.shape());
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  if (needs_record({&a, &b})) {
    ImplPtr<T> ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape<T>::active()->record("mul", {ai, bi}, oi, [ai, bi, oi]() {
      if (ai->requires_grad) {
        auto& g = grad_buffer(*ai);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        auto& g = grad_buffer(*bi);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] * ai->data[i];
      }
    });
  }
  return finish(std::move(out), "mul");
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& input, T factor) {
  Tensor<T> out(input.shape());
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = input.data()[i] * factor;
  if (needs_record({&input})) {
    ImplPtr<T> xi = input.impl(), oi = out.impl();
    Tape<T>::active()->record("mul_scalar", {xi}, oi, [xi, oi, factor]() {
      auto& g = grad_buffer(*xi);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] * factor;
    });
  }
  return finish(std::move(out), "mul_scalar");
}

template <typename T>
Tensor<T> sum(const Tensor<T>& input) {
  T acc{0};
  for (T v : input.data()) acc += v;
  Tensor<T> out(Shape{}, acc);
  if (needs_record({&input})) {
    ImplPtr<T> xi = input.impl(), oi = out.impl();
    Tape<T>::active()->record("sum", {xi}, oi, [xi, oi]() {
      auto& g = grad_buffer(*xi);
      const T go = oi->grad[0];
      for (auto& v : g) v += go;
    });
  }
  return finish(std::move(out), "sum");
}

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& input) {
  if (input.ndim() < 2) throw ShapeError("softmax_channels: input needs a channel axis, got " + shape_str(input.shape()));
  const auto& s = input.shape();
  const std::int64_t N = s[0], C = s[1], S = shape_numel(s) / std::max<std::int64_t>(1, N * C);
  Tensor<T> out(s);
  const T* x = input.data().data();
  T* y = out.mutable_data().data();
  std::vector<T> mx(static_cast<std::size_t>(S)), den(static_cast<std::size_t>(S));
  for (std::int64_t n = 0; n < N; ++n) {
    const T* xn = x + n * C * S;
    T* yn = y + n * C * S;
    std::copy(xn, xn + S, mx.begin());
    for (std::int64_t c = 1; c < C; ++c)
      for (std::int64_t i = 0; i < S; ++i) mx[i] = std::max(mx[i], xn[c * S + i]);
    std::fill(den.begin(), den.end(), T{0});
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t i = 0; i < S; ++i) {
        const T e = std::exp(xn[c * S + i] - mx[i]);
        yn[c * S + i] = e;
        den[i] += e;
      }
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t i = 0; i < S; ++i) yn[c * S + i] /= den[i];
  }
  if (needs_record({&input})) {
    ImplPtr<T> xi = input.impl(), oi = out.impl();
    Tape<T>::active()->record("softmax_channels", {xi}, oi, [xi, oi, N, C, S]() {
      auto& gx = grad_buffer(*xi);
      std::vector<T> dot(static_cast<std::size_t>(S));
      for (std::int64_t n = 0; n < N; ++n) {
        const T* yn = oi->data.data() + n * C * S;
        const T* gy = oi->grad.data() + n * C * S;
        T* g = gx.data() + n * C * S;
        std::fill(dot.begin(), dot.end(), T{0});
        for (std::int64_t c = 0; c < C; ++c)
          for (std::int64_t i = 0; i < S; ++i) dot[i] += yn[c * S + i] * gy[c * S + i];
        for (std::int64_t c = 0; c < C; ++c)
          for (std::int64_t i = 0; i < S; ++i) g[c * S + i] += yn[c * S + i] * (gy[c * S + i] - dot[i]);
      }
    });
  }
  return finish(std::move(out), "softmax_channels");
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  bool ok = sa.size() == sb.size() && sa.size() >= 2 && sa[0] == sb[0];
  for (std::size_t i = 2; ok && i < sa.size(); ++i) ok = sa[i] == sb[i];
  if (!ok)
    throw ShapeError("concat_channels: shapes " + shape_str(sa) + " and " + shape_str(sb) +
                     " differ outside axis 1");
  const std::int64_t N = sa[0], Ca = sa[1], Cb = sb[1];
  const std::int64_t S = shape_numel(sa) / std::max<std::int64_t>(1, N * Ca);
  Shape so = sa;
  so[1] = Ca + Cb;
  Tensor<T> out(so);
  T* y = out.mutable_data().data();
  for (std::int64_t n = 0; n < N; ++n) {
    std::copy_n(a.data().data() + n * Ca * S, Ca * S, y + n * (Ca + Cb) * S);
    std::copy_n(b.data().data() + n * Cb * S, Cb * S, y + n * (Ca + Cb) * S + Ca * S);
  }
  if (needs_record({&a, &b})) {
    ImplPtr<T> ai = a.impl(), bi = b.impl(), oi = out.impl();
    Tape<T>::active()->record("concat_channels", {ai, bi}, oi, [=]() {
      for (std::int64_t n = 0; n < N; ++n) {
        const T* g = oi->grad.data() + n * (Ca + Cb) * S;
        if (ai->requires_grad) {
          T* ga = grad_buffer(*ai).data() + n * Ca * S;
          for (std::int64_t i = 0; i < Ca * S; ++i) ga[i] += g[i];
        }
        if (bi->requires_grad) {
          T* gb = grad_buffer(*bi).data() + n * Cb * S;
          for (std::int64_t i = 0; i < Cb * S; ++i) gb[i] += g[Ca * S + i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& input, double p_drop, DropoutMode mode, RngStream* rng) {
  if (!(p_drop >= 0.0 && p_drop < 1.0))
    throw ParameterError("dropout: p_drop must lie in [0, 1), got " + std::to_string(p_drop));
  if (mode == DropoutMode::Eval || p_drop == 0.0) return input;
  if (rng == nullptr) throw ParameterError("dropout: stochastic mode needs a generator");
  const T scale = static_cast<T>(1.0 / (1.0 - p_drop));
  auto mask = std::make_shared<std::vector<T>>(input.numel());
  for (auto& m : *mask) m = rng->uniform() < p_drop ? T{0} : scale;
  Tensor<T> out(input.shape());
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = input.data()[i] * (*mask)[i];
  if (needs_record({&input})) {
    ImplPtr<T> xi = input.impl(), oi = out.impl();
    Tape<T>::active()->record("dropout", {xi}, oi, [xi, oi, mask]() {
      auto& g = grad_buffer(*xi);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] * (*mask)[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> permute_flip_spatial(const Tensor<T>& input, const std::array<int, 3>& perm,
                               const std::array<bool, 3>& flips) {
  require_rank(input.shape(), 5, "permute_flip_spatial", "input");
  std::array<bool, 3> seen{};
  for (int p : perm) {
    if (p < 0 || p > 2 || seen[p]) throw ParameterError("permute_flip_spatial: invalid axis permutation");
    seen[p] = true;
  }
  const auto& s = input.shape();
  const std::int64_t in_ext[3] = {s[2], s[3], s[4]};
  const std::int64_t in_stride[3] = {s[3] * s[4], s[4], 1};
  std::int64_t ext[3], stride[3], base = 0;
  for (int k = 0; k < 3; ++k) {
    ext[k] = in_ext[perm[k]];
    stride[k] = flips[k] ? -in_stride[perm[k]] : in_stride[perm[k]];
    if (flips[k]) base += (ext[k] - 1) * in_stride[perm[k]];
  }
  const std::int64_t NC = s[0] * s[1], S = ext[0] * ext[1] * ext[2];
  auto src = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(S));
  {
    std::int64_t o = 0;
    for (std::int64_t a = 0; a < ext[0]; ++a)
      for (std::int64_t b = 0; b < ext[1]; ++b)
        for (std::int64_t c = 0; c < ext[2]; ++c) (*src)[o++] = base + a * stride[0] + b * stride[1] + c * stride[2];
  }
  Tensor<T> out(Shape{s[0], s[1], ext[0], ext[1], ext[2]});
  const T* x = input.data().data();
  T* y = out.mutable_data().data();
  for (std::int64_t nc = 0; nc < NC; ++nc)
    for (std::int64_t o = 0; o < S; ++o) y[nc * S + o] = x[nc * S + (*src)[o]];
  if (needs_record({&input})) {
    ImplPtr<T> xi = input.impl(), oi = out.impl();
    Tape<T>::active()->record("permute_flip_spatial", {xi}, oi, [xi, oi, src, NC, S]() {
      auto& g = grad_buffer(*xi);
      for (std::int64_t nc = 0; nc < NC; ++nc)
        for (std::int64_t o = 0; o < S; ++o) g[nc * S + (*src)[o]] += oi->grad[nc * S + o];
    });
  }
  return out;
}

#define UMCT_INSTANTIATE_OPS(T)                                                                    \
  template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvGeometry&); \
  template Tensor<T> conv_transpose3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int);       \
  template Tensor<T> resize_trilinear(const Tensor<T>&, int);                                           \
  template Tensor<T> relu(const Tensor<T>&);                                                            \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                                                   \
  template Tensor<T> sum(const Tensor<T>&);                                                             \
  template Tensor<T> softmax_channels(const Tensor<T>&);                                                \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> dropout(const Tensor<T>&, double, DropoutMode, RngStream*);                        \
  template Tensor<T> permute_flip_spatial(const Tensor<T>&, const std::array<int, 3>&, const std::array<bool, 3>&);

UMCT_INSTANTIATE_OPS(float)
UMCT_INSTANTIATE_OPS(double)

}  // namespace umct::ops
