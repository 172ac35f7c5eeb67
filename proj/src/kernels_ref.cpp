#include "tseg/kernels.hpp"

#include <cmath>

// Naive single-threaded reference kernels. Deliberately written as the
// textbook loops so they can serve as oracles for the parallel versions.

namespace tseg::kern::ref {

template <typename T>
void conv2d_forward(const T* x, Shape4 xs, const T* w, int64_t co, int64_t k,
                    const T* b, T* y) {
  const int64_t N = xs.n, Ci = xs.c, H = xs.h, W = xs.w, HW = H * W;
  const int64_t p = (k - 1) / 2;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < co; ++o)
      for (int64_t yy = 0; yy < H; ++yy)
        for (int64_t xx = 0; xx < W; ++xx) {
          T acc = b ? b[o] : T(0);
          for (int64_t ci = 0; ci < Ci; ++ci)
            for (int64_t ky = 0; ky < k; ++ky)
              for (int64_t kx = 0; kx < k; ++kx) {
                const int64_t sy = yy + ky - p, sx = xx + kx - p;
                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                acc += w[((o * Ci + ci) * k + ky) * k + kx] *
                       x[(n * Ci + ci) * HW + sy * W + sx];
              }
          y[(n * co + o) * HW + yy * W + xx] = acc;
        }
}

template <typename T>
void conv2d_dgrad(const T* gy, Shape4 ys, const T* w, int64_t ci, int64_t k,
                  T* gx) {
  const int64_t N = ys.n, Co = ys.c, H = ys.h, W = ys.w, HW = H * W;
  const int64_t p = (k - 1) / 2;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < Co; ++o)
      for (int64_t yy = 0; yy < H; ++yy)
        for (int64_t xx = 0; xx < W; ++xx) {
          const T g = gy[(n * Co + o) * HW + yy * W + xx];
          for (int64_t c = 0; c < ci; ++c)
            for (int64_t ky = 0; ky < k; ++ky)
              for (int64_t kx = 0; kx < k; ++kx) {
                const int64_t sy = yy + ky - p, sx = xx + kx - p;
                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                gx[(n * ci + c) * HW + sy * W + sx] +=
                    g * w[((o * ci + c) * k + ky) * k + kx];
              }
        }
}

template <typename T>
void conv2d_wgrad(const T* x, Shape4 xs, const T* gy, int64_t co, int64_t k,
                  T* gw, T* gb) {
  const int64_t N = xs.n, Ci = xs.c, H = xs.h, W = xs.w, HW = H * W;
  const int64_t p = (k - 1) / 2;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < co; ++o) {
      for (int64_t yy = 0; yy < H; ++yy)
        for (int64_t xx = 0; xx < W; ++xx) {
          const T g = gy[(n * co + o) * HW + yy * W + xx];
          for (int64_t ci = 0; ci < Ci; ++ci)
            for (int64_t ky = 0; ky < k; ++ky)
              for (int64_t kx = 0; kx < k; ++kx) {
                const int64_t sy = yy + ky - p, sx = xx + kx - p;
                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                gw[((o * Ci + ci) * k + ky) * k + kx] +=
                    g * x[(n * Ci + ci) * HW + sy * W + sx];
              }
          if (gb) gb[o] += g;
        }
    }
}

template <typename T>
void maxpool2_forward(const T* x, Shape4 xs, T* y, uint8_t* idx) {
  const int64_t N = xs.n, C = xs.c, H = xs.h, W = xs.w;
  const int64_t H2 = H / 2, W2 = W / 2;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t oy = 0; oy < H2; ++oy)
        for (int64_t ox = 0; ox < W2; ++ox) {
          T best{};
          uint8_t bi = 0;
          for (uint8_t j = 0; j < 4; ++j) {
            const T v =
                x[(n * C + c) * H * W + (2 * oy + j / 2) * W + 2 * ox + j % 2];
            if (j == 0 || v > best) {
              best = v;
              bi = j;
            }
          }
          y[(n * C + c) * H2 * W2 + oy * W2 + ox] = best;
          idx[(n * C + c) * H2 * W2 + oy * W2 + ox] = bi;
        }
}

template <typename T>
void maxpool2_backward(const T* gy, Shape4 ys, const uint8_t* idx, T* gx) {
  const int64_t N = ys.n, C = ys.c, H2 = ys.h, W2 = ys.w;
  const int64_t W = 2 * W2;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t oy = 0; oy < H2; ++oy)
        for (int64_t ox = 0; ox < W2; ++ox) {
          const int64_t o = (n * C + c) * H2 * W2 + oy * W2 + ox;
          const uint8_t b = idx[o];
          gx[(n * C + c) * 4 * H2 * W2 + (2 * oy + b / 2) * W + 2 * ox + b % 2] +=
              gy[o];
        }
}

namespace {

// s = (d + 0.5)/2 - 0.5 clamped to [0, h-1]; returns lo, hi, frac
inline void src_of(int64_t d, int64_t h, int64_t& lo, int64_t& hi,
                   double& fr) {
  const double s = 0.5 * double(d) - 0.25;
  if (s <= 0.0) {
    lo = hi = 0;
    fr = 0.0;
  } else if (s >= double(h - 1)) {
    lo = hi = h - 1;
    fr = 0.0;
  } else {
    lo = int64_t(s);
    hi = lo + 1;
    fr = s - double(lo);
  }
}

} // namespace

template <typename T>
void upsample2_forward(const T* x, Shape4 xs, T* y) {
  const int64_t N = xs.n, C = xs.c, H = xs.h, W = xs.w;
  const int64_t H2 = 2 * H, W2 = 2 * W;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t dy = 0; dy < H2; ++dy)
        for (int64_t dx = 0; dx < W2; ++dx) {
          int64_t yl, yh, xl, xh;
          double fy, fx;
          src_of(dy, H, yl, yh, fy);
          src_of(dx, W, xl, xh, fx);
          const T* xp = x + (n * C + c) * H * W;
          const T ey = T(1) - T(fy), ex = T(1) - T(fx);
          y[(n * C + c) * H2 * W2 + dy * W2 + dx] =
              ey * (ex * xp[yl * W + xl] + T(fx) * xp[yl * W + xh]) +
              T(fy) * (ex * xp[yh * W + xl] + T(fx) * xp[yh * W + xh]);
        }
}

template <typename T>
void upsample2_backward(const T* gy, Shape4 ys, T* gx) {
  const int64_t N = ys.n, C = ys.c, H2 = ys.h, W2 = ys.w;
  const int64_t H = H2 / 2, W = W2 / 2;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t dy = 0; dy < H2; ++dy)
        for (int64_t dx = 0; dx < W2; ++dx) {
          int64_t yl, yh, xl, xh;
          double fy, fx;
          src_of(dy, H, yl, yh, fy);
          src_of(dx, W, xl, xh, fx);
          const T g = gy[(n * C + c) * H2 * W2 + dy * W2 + dx];
          T* gp = gx + (n * C + c) * H * W;
          gp[yl * W + xl] += T((1.0 - fy) * (1.0 - fx)) * g;
          if (xh != xl) gp[yl * W + xh] += T((1.0 - fy) * fx) * g;
          if (yh != yl) gp[yh * W + xl] += T(fy * (1.0 - fx)) * g;
          if (yh != yl && xh != xl) gp[yh * W + xh] += T(fy * fx) * g;
        }
}

template <typename T>
void batchnorm_train_forward(const T* x, Shape4 xs, const T* gamma,
                             const T* beta, T eps, T* y, T* mean, T* var) {
  const int64_t N = xs.n, C = xs.c, HW = xs.h * xs.w;
  const double M = double(N) * double(HW);
  for (int64_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < HW; ++i) s += double(x[(n * C + c) * HW + i]);
    const double mu = s / M;
    double v = 0.0;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < HW; ++i) {
        const double d = double(x[(n * C + c) * HW + i]) - mu;
        v += d * d;
      }
    mean[c] = T(mu);
    var[c] = T(v / M);
    const double inv = 1.0 / std::sqrt(v / M + double(eps));
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < HW; ++i) {
        const double xh = (double(x[(n * C + c) * HW + i]) - mu) * inv;
        y[(n * C + c) * HW + i] =
            T(double(gamma[c]) * xh + double(beta[c]));
      }
  }
}

#define TSEG_INSTANTIATE_REF(T)                                                \
  template void conv2d_forward<T>(const T*, Shape4, const T*, int64_t,         \
                                  int64_t, const T*, T*);                      \
  template void conv2d_dgrad<T>(const T*, Shape4, const T*, int64_t, int64_t,  \
                                T*);                                           \
  template void conv2d_wgrad<T>(const T*, Shape4, const T*, int64_t, int64_t,  \
                                T*, T*);                                       \
  template void maxpool2_forward<T>(const T*, Shape4, T*, uint8_t*);           \
  template void maxpool2_backward<T>(const T*, Shape4, const uint8_t*, T*);    \
  template void upsample2_forward<T>(const T*, Shape4, T*);                    \
  template void upsample2_backward<T>(const T*, Shape4, T*);                   \
  template void batchnorm_train_forward<T>(const T*, Shape4, const T*,         \
                                           const T*, T, T*, T*, T*);

TSEG_INSTANTIATE_REF(float)
TSEG_INSTANTIATE_REF(double)

} // namespace tseg::kern::ref
