#pragma once

#if defined(__SSE__)
#include <xmmintrin.h>
#endif

namespace umct {

// Flushes denormal floats to zero on this thread while alive. Training
// drives many activations and gradients into the denormal range, where x86
// arithmetic is an order of magnitude slower.
class FlushDenormals {
 public:
  FlushDenormals() {
#if defined(__SSE__)
    saved_ = _mm_getcsr();
    _mm_setcsr(saved_ | 0x8040);  // FTZ | DAZ
#endif
  }
  ~FlushDenormals() {
#if defined(__SSE__)
    _mm_setcsr(saved_);
#endif
  }
  FlushDenormals(const FlushDenormals&) = delete;
  FlushDenormals& operator=(const FlushDenormals&) = delete;

 private:
  unsigned saved_ = 0;
};

}  // namespace umct
