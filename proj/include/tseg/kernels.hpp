#pragma once

#include <cstdint>
#include <vector>

#include "tseg/tensor.hpp"

// Low-level compute kernels for the rank-4 tensor engine.
//
// tseg::kern       — OpenMP-parallel kernels used by the engine. Every kernel
//                    parallelizes over independent output elements and keeps a
//                    fixed reduction order per element, so results are bitwise
//                    identical for any worker count.
// tseg::kern::ref  — naive single-threaded reference implementations kept as
//                    test oracles and for the kernel benchmark.
//
// Gradient kernels accumulate (+=) into their output buffers.

namespace tseg::kern {

// Deterministic reductions: fixed chunk/stripe pattern independent of the
// thread count. Accumulation in double regardless of T.
template <typename T>
double det_sum(const T* a, int64_t n);
template <typename T>
double det_dot(const T* a, const T* b, int64_t n);

template <typename T>
bool all_finite(const T* a, int64_t n);

// ---- convolution, stride 1, "same" zero padding, k in {1,3} ----
// x: [n, ci, h, w], w: [co, ci, k, k], b: [co], y: [n, co, h, w]
template <typename T>
void conv2d_forward(const T* x, Shape4 xs, const T* w, int64_t co, int64_t k,
                    const T* b, T* y);
// gy: [n, co, h, w] -> gx accum [n, ci, h, w]
template <typename T>
void conv2d_dgrad(const T* gy, Shape4 ys, const T* w, int64_t ci, int64_t k,
                  T* gx);
// accumulates gw [co, ci, k, k] and gb [co]; gb may be null
template <typename T>
void conv2d_wgrad(const T* x, Shape4 xs, const T* gy, int64_t co, int64_t k,
                  T* gw, T* gb);

// ---- 2x2 max pooling, stride 2 ----
// y: [n, c, h/2, w/2]; idx stores the argmax position 0..3 in row-major
// window order (ties resolved to the first index).
template <typename T>
void maxpool2_forward(const T* x, Shape4 xs, T* y, uint8_t* idx);
template <typename T>
void maxpool2_backward(const T* gy, Shape4 ys, const uint8_t* idx, T* gx);

// ---- bilinear 2x upsampling, half-pixel centers, edge clamp ----
// y: [n, c, 2h, 2w]
template <typename T>
void upsample2_forward(const T* x, Shape4 xs, T* y);
// ys is the output (gradient) shape [n, c, 2h, 2w]; gx accum [n, c, h, w]
template <typename T>
void upsample2_backward(const T* gy, Shape4 ys, T* gx);

// ---- batch normalization over (n, h, w) per channel ----
template <typename T>
void batchnorm_train_forward(const T* x, Shape4 xs, const T* gamma,
                             const T* beta, T eps, T* y, T* mean, T* var);
template <typename T>
void batchnorm_train_backward(const T* gy, const T* x, Shape4 xs,
                              const T* gamma, const T* mean, const T* var,
                              T eps, T* gx, T* dgamma, T* dbeta);
template <typename T>
void batchnorm_infer_forward(const T* x, Shape4 xs, const T* gamma,
                             const T* beta, const T* rmean, const T* rvar,
                             T eps, T* y);
template <typename T>
void batchnorm_infer_backward(const T* gy, const T* x, Shape4 xs,
                              const T* gamma, const T* rmean, const T* rvar,
                              T eps, T* gx, T* dgamma, T* dbeta);

// ---- pointwise ----
template <typename T>
void relu_forward(const T* x, int64_t n, T* y, uint64_t* mask); // mask optional
template <typename T>
void relu_backward(const T* gy, int64_t n, const uint64_t* mask, T* gx);
template <typename T>
void sigmoid_forward(const T* x, int64_t n, T* y);
template <typename T>
void sigmoid_backward(const T* gy, const T* y, int64_t n, T* gx);
template <typename T>
void mul_forward(const T* a, const T* b, int64_t n, T* y);
template <typename T>
void add_forward(const T* a, const T* b, int64_t n, T* y);
// gx += gy * s elementwise (s may be null for plain accumulation)
template <typename T>
void accumulate(const T* gy, const T* scale, int64_t n, T* gx);

inline int64_t mask_words(int64_t n) { return (n + 63) / 64; }

// ---- channel concat / slice ----
// copies x [n, c, h, w] into dst channels [c0, c0+c) of a [n, cout, h, w] tensor
template <typename T>
void copy_channels_out(const T* x, Shape4 xs, T* dst, int64_t cout, int64_t c0);
// accumulates channels [c0, c0+cs.c) of src [n, cin, h, w] into g [= shape cs]
template <typename T>
void accum_channels_in(const T* src, int64_t cin, int64_t c0, Shape4 cs, T* g);
// accumulates x [n, c, h, w] into channels [c0, c0+c) of dst [n, cout, h, w]
template <typename T>
void accum_channels_out(const T* x, Shape4 xs, T* dst, int64_t cout,
                        int64_t c0);
// extract channels [c0, c0+cout) of x into y
template <typename T>
void slice_channels(const T* x, Shape4 xs, int64_t c0, int64_t cout, T* y);

// ---- overlap sums shared by the soft losses ----
// spt = sum p*t, sp = sum p, st = sum t
template <typename T>
void overlap_sums(const T* p, const T* t, int64_t n, double& spt, double& sp,
                  double& st);

// ================= serial reference implementations =================
namespace ref {

template <typename T>
void conv2d_forward(const T* x, Shape4 xs, const T* w, int64_t co, int64_t k,
                    const T* b, T* y);
template <typename T>
void conv2d_dgrad(const T* gy, Shape4 ys, const T* w, int64_t ci, int64_t k,
                  T* gx);
template <typename T>
void conv2d_wgrad(const T* x, Shape4 xs, const T* gy, int64_t co, int64_t k,
                  T* gw, T* gb);
template <typename T>
void maxpool2_forward(const T* x, Shape4 xs, T* y, uint8_t* idx);
template <typename T>
void maxpool2_backward(const T* gy, Shape4 ys, const uint8_t* idx, T* gx);
template <typename T>
void upsample2_forward(const T* x, Shape4 xs, T* y);
template <typename T>
void upsample2_backward(const T* gy, Shape4 ys, T* gx);
template <typename T>
void batchnorm_train_forward(const T* x, Shape4 xs, const T* gamma,
                             const T* beta, T eps, T* y, T* mean, T* var);

} // namespace ref

} // namespace tseg::kern
