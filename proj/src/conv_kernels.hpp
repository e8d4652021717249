#pragma once

// Direct stride-1 convolution kernels on zero-padded planes. Output channels
// are processed in register blocks of kCoBlock, the last spatial axis in
// vectors of XB lanes; every lane accumulates in a fixed order, so results
// do not depend on vector width.

#include <algorithm>
#include <cstdint>
#include <vector>

namespace umct::kernels {

inline constexpr int kCoBlock = 8;

// Fixed-width SIMD lanes (GCC/Clang vector extension).
template <typename T, int N>
struct Lanes {
  typedef T type __attribute__((vector_size(N * sizeof(T))));
};
template <typename T>
struct Lanes<T, 1> {
  using type = T;
};
template <typename T, int N>
using lanes_t = typename Lanes<T, N>::type;

template <typename T, int N>
inline lanes_t<T, N> load_lanes(const T* p) {
  lanes_t<T, N> v;
  __builtin_memcpy(&v, p, sizeof(v));
  return v;
}
template <typename T, int N>
inline void store_lanes(T* p, lanes_t<T, N> v) {
  __builtin_memcpy(p, &v, sizeof(v));
}

struct SameConvDims {
  std::int64_t cin, cout;
  std::int64_t d, h, w;     // output (== unpadded input) extents
  std::int64_t kd, kh, kw;  // kernel extents
  std::int64_t pd, ph, pw;  // padding
  std::int64_t Dp() const { return d + kd - 1; }
  std::int64_t Hp() const { return h + kh - 1; }
  std::int64_t Wp() const { return w + kw - 1; }
  std::int64_t taps() const { return kd * kh * kw; }
};

// Copies [C,D,H,W] into a zero-padded [C,Dp,Hp,Wp] buffer. The leading pad
// is (pd,ph,pw) and the trailing pad fills up to the padded extents.
template <typename T>
void pad_planes(const T* src, std::int64_t channels, const SameConvDims& c, std::vector<T>& dst) {
  const std::int64_t Dp = c.Dp(), Hp = c.Hp(), Wp = c.Wp();
  dst.assign(static_cast<std::size_t>(channels * Dp * Hp * Wp), T{0});
  for (std::int64_t ch = 0; ch < channels; ++ch)
    for (std::int64_t z = 0; z < c.d; ++z)
      for (std::int64_t y = 0; y < c.h; ++y)
        std::copy_n(src + ((ch * c.d + z) * c.h + y) * c.w, c.w,
                    dst.data() + ((ch * Dp + z + c.pd) * Hp + y + c.ph) * Wp + c.pw);
}

// Reorders kernel [Cout,Cin,kd,kh,kw] into [Cout/kCoBlock][Cin][kd][kh][kw][kCoBlock]
// (zero-filled past Cout). With `flip_transpose` the packed kernel is the
// adjoint one: in/out channels swapped and taps reversed, which turns the
// forward routine into the input-gradient routine.
template <typename T>
std::vector<T> pack_kernel(const T* k, std::int64_t cout, std::int64_t cin, std::int64_t kd, std::int64_t kh,
                           std::int64_t kw, bool flip_transpose) {
  const std::int64_t taps = kd * kh * kw;
  const std::int64_t out_ch = flip_transpose ? cin : cout;
  const std::int64_t in_ch = flip_transpose ? cout : cin;
  const std::int64_t blocks = (out_ch + kCoBlock - 1) / kCoBlock;
  std::vector<T> packed(static_cast<std::size_t>(blocks * in_ch * taps * kCoBlock), T{0});
  for (std::int64_t o = 0; o < out_ch; ++o)
    for (std::int64_t i = 0; i < in_ch; ++i)
      for (std::int64_t t = 0; t < taps; ++t) {
        const T v = flip_transpose ? k[(i * cin + o) * taps + (taps - 1 - t)] : k[(o * cin + i) * taps + t];
        packed[static_cast<std::size_t>(((o / kCoBlock) * in_ch + i) * taps * kCoBlock + t * kCoBlock +
                                        o % kCoBlock)] = v;
      }
  return packed;
}

template <typename T, int XB>
void conv_same_forward_impl(const T* padded, const T* packed, const SameConvDims& c, std::int64_t in_ch,
                            std::int64_t out_ch, T* out, bool accumulate) {
  const std::int64_t Dp = c.Dp(), Hp = c.Hp(), Wp = c.Wp(), taps = c.taps();
  const std::int64_t blocks = (out_ch + kCoBlock - 1) / kCoBlock;
  const std::int64_t plane = c.d * c.h * c.w;
  for (std::int64_t cb = 0; cb < blocks; ++cb) {
    const T* wb = packed + cb * in_ch * taps * kCoBlock;
    const int co_n = static_cast<int>(std::min<std::int64_t>(kCoBlock, out_ch - cb * kCoBlock));
    for (std::int64_t z = 0; z < c.d; ++z)
      for (std::int64_t y = 0; y < c.h; ++y)
        for (std::int64_t x0 = 0; x0 < c.w; x0 += XB) {
          using V = lanes_t<T, XB>;
          V acc[kCoBlock];
          for (auto& a : acc) a = V{};
          for (std::int64_t ci = 0; ci < in_ch; ++ci)
            for (std::int64_t a = 0; a < c.kd; ++a)
              for (std::int64_t b = 0; b < c.kh; ++b) {
                const T* row = padded + ((ci * Dp + z + a) * Hp + y + b) * Wp + x0;
                const T* wr = wb + ((ci * c.kd + a) * c.kh + b) * c.kw * kCoBlock;
                for (std::int64_t e = 0; e < c.kw; ++e) {
                  const V v = load_lanes<T, XB>(row + e);
                  for (int co = 0; co < kCoBlock; ++co) acc[co] += wr[e * kCoBlock + co] * v;
                }
              }
          for (int co = 0; co < co_n; ++co) {
            T* o = out + (cb * kCoBlock + co) * plane + (z * c.h + y) * c.w + x0;
            if (accumulate)
              store_lanes<T, XB>(o, load_lanes<T, XB>(o) + acc[co]);
            else
              store_lanes<T, XB>(o, acc[co]);
          }
        }
  }
}

// out[Co,D,H,W] (=|+=) sum over Ci and taps of packed weights x padded input.
template <typename T>
void conv_same_forward(const T* padded, const T* packed, const SameConvDims& c, std::int64_t in_ch,
                       std::int64_t out_ch, T* out, bool accumulate) {
  if (c.w % 16 == 0)
    conv_same_forward_impl<T, 16>(padded, packed, c, in_ch, out_ch, out, accumulate);
  else if (c.w % 8 == 0)
    conv_same_forward_impl<T, 8>(padded, packed, c, in_ch, out_ch, out, accumulate);
  else if (c.w % 4 == 0)
    conv_same_forward_impl<T, 4>(padded, packed, c, in_ch, out_ch, out, accumulate);
  else
    conv_same_forward_impl<T, 1>(padded, packed, c, in_ch, out_ch, out, accumulate);
}

template <typename T, int XB>
void conv_same_weight_grad_impl(const T* padded, const T* gout, const SameConvDims& c, T* gw) {
  constexpr int kCo = 4;
  const std::int64_t Dp = c.Dp(), Hp = c.Hp(), Wp = c.Wp(), taps = c.taps();
  const std::int64_t plane = c.d * c.h * c.w;
  for (std::int64_t co0 = 0; co0 < c.cout; co0 += kCo) {
    const int co_n = static_cast<int>(std::min<std::int64_t>(kCo, c.cout - co0));
    for (std::int64_t ci = 0; ci < c.cin; ++ci)
      for (std::int64_t a = 0; a < c.kd; ++a)
        for (std::int64_t b = 0; b < c.kh; ++b)
          for (std::int64_t e = 0; e < c.kw; ++e) {
            using V = lanes_t<T, XB>;
            V acc[kCo];
            for (auto& v : acc) v = V{};
            const T* gbase[kCo];
            for (int co = 0; co < kCo; ++co) gbase[co] = gout + (co0 + std::min(co, co_n - 1)) * plane;
            for (std::int64_t z = 0; z < c.d; ++z)
              for (std::int64_t y = 0; y < c.h; ++y) {
                const T* prow = padded + ((ci * Dp + z + a) * Hp + y + b) * Wp + e;
                const std::int64_t goff = (z * c.h + y) * c.w;
                for (std::int64_t x0 = 0; x0 < c.w; x0 += XB) {
                  const V v = load_lanes<T, XB>(prow + x0);
                  for (int co = 0; co < kCo; ++co) acc[co] += load_lanes<T, XB>(gbase[co] + goff + x0) * v;
                }
              }
            const std::int64_t t = (a * c.kh + b) * c.kw + e;
            for (int co = 0; co < co_n; ++co) {
              T lanes[XB];
              __builtin_memcpy(lanes, &acc[co], sizeof(lanes));
              T s{0};
              for (int i = 0; i < XB; ++i) s += lanes[i];
              gw[((co0 + co) * c.cin + ci) * taps + t] += s;
            }
          }
  }
}

// gw[Cout,Cin,kd,kh,kw] += correlation of gout[Cout,D,H,W] with padded input.
template <typename T>
void conv_same_weight_grad(const T* padded, const T* gout, const SameConvDims& c, T* gw) {
  if (c.w % 16 == 0)
    conv_same_weight_grad_impl<T, 16>(padded, gout, c, gw);
  else if (c.w % 8 == 0)
    conv_same_weight_grad_impl<T, 8>(padded, gout, c, gw);
  else if (c.w % 4 == 0)
    conv_same_weight_grad_impl<T, 4>(padded, gout, c, gw);
  else
    conv_same_weight_grad_impl<T, 1>(padded, gout, c, gw);
}

}  // namespace umct::kernels
