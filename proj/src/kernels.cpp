#include "tseg/kernels.hpp"

#include <algorithm>
#include <limits>
#include <atomic>
#include <cmath>
#include <utility>
#include <vector>

namespace tseg::kern {

namespace {

constexpr int kStripes = 32;
constexpr int64_t kChunks = 64;

// Fixed-order striped accumulator. Lane j owns every kStripes-th element of
// the value sequence fed in, and total() folds lanes with a fixed pairwise tree,
// so the summation order depends only on the data layout — never on the
// thread count. Lanes are independent chains, which also lets the compiler
// vectorize them.
template <typename A>
struct Striped {
  A lane[kStripes] = {};

  template <typename T>
  void add(const T* a, int64_t n) {
    int64_t i = 0;
    for (; i + kStripes <= n; i += kStripes)
      for (int j = 0; j < kStripes; ++j) lane[j] += A(a[i + j]);
    for (int j = 0; i < n; ++i, ++j) lane[j] += A(a[i]);
  }
  template <typename T>
  void add_dot(const T* a, const T* b, int64_t n) {
    int64_t i = 0;
    for (; i + kStripes <= n; i += kStripes)
      for (int j = 0; j < kStripes; ++j) lane[j] += A(a[i + j]) * A(b[i + j]);
    for (int j = 0; i < n; ++i, ++j) lane[j] += A(a[i]) * A(b[i]);
  }
  template <typename T>
  void add_sq_dev(const T* a, double mu, int64_t n) {
    int64_t i = 0;
    for (; i + kStripes <= n; i += kStripes)
      for (int j = 0; j < kStripes; ++j) {
        const double d = double(a[i + j]) - mu;
        lane[j] += A(d * d);
      }
    for (int j = 0; i < n; ++i, ++j) {
      const double d = double(a[i]) - mu;
      lane[j] += A(d * d);
    }
  }
  template <typename T>
  void add_dot_centered(const T* a, const T* b, double mu, int64_t n) {
    int64_t i = 0;
    for (; i + kStripes <= n; i += kStripes)
      for (int j = 0; j < kStripes; ++j)
        lane[j] += A(a[i + j]) * (A(b[i + j]) - A(mu));
    for (int j = 0; i < n; ++i, ++j) lane[j] += A(a[i]) * (A(b[i]) - A(mu));
  }

  A total() const {
    A t[kStripes];
    for (int j = 0; j < kStripes; ++j) t[j] = lane[j];
    for (int s = kStripes / 2; s > 0; s /= 2)
      for (int j = 0; j < s; ++j) t[j] += t[j + s];
    return t[0];
  }
};

// Contiguous dot with a fixed 64-lane striped order and a single tail.
// Leaf function so the accumulator lanes live in vector registers.
template <typename T>
T flat_dot(const T* a, const T* b, int64_t n) {
  constexpr int S = 64;
  T acc[S] = {};
  int64_t i = 0;
  for (; i + S <= n; i += S)
    for (int j = 0; j < S; ++j) acc[j] += a[i + j] * b[i + j];
  for (int j = 0; i < n; ++i, ++j) acc[j] += a[i] * b[i];
  for (int s = S / 2; s > 0; s /= 2)
    for (int j = 0; j < s; ++j) acc[j] += acc[j + s];
  return acc[0];
}

// Dot over a rectangle whose rows are nearly full width: run one contiguous
// flat dot across the whole span, then subtract the handful of row-boundary
// terms that do not belong to the rectangle. Both pointers stay inside their
// planes because row ranges were already clipped to the valid shift range.
template <typename T>
T rect_dot(const T* a, const T* b, int64_t rows, int64_t stride, int64_t len) {
  if (rows <= 0 || len <= 0) return T(0);
  const int64_t gap = stride - len;
  T total = flat_dot(a, b, (rows - 1) * stride + len);
  T wrap = 0;
  for (int64_t r = 1; r < rows; ++r)
    for (int64_t g = 1; g <= gap; ++g)
      wrap += a[r * stride - g] * b[r * stride - g];
  return total - wrap;
}

// Half-pixel-center source mapping for 2x bilinear upsampling with edge
// clamping: s = (d + 0.5)/2 - 0.5, clamped into [0, h-1].
struct UpAxis {
  std::vector<int64_t> lo, hi;
  std::vector<double> fr;
};

UpAxis up_axis(int64_t h) {
  UpAxis a;
  a.lo.resize(2 * h);
  a.hi.resize(2 * h);
  a.fr.resize(2 * h);
  for (int64_t d = 0; d < 2 * h; ++d) {
    const double s = 0.5 * double(d) - 0.25;
    if (s <= 0.0) {
      a.lo[d] = a.hi[d] = 0;
      a.fr[d] = 0.0;
    } else if (s >= double(h - 1)) {
      a.lo[d] = a.hi[d] = h - 1;
      a.fr[d] = 0.0;
    } else {
      const int64_t l = int64_t(s);
      a.lo[d] = l;
      a.hi[d] = l + 1;
      a.fr[d] = s - double(l);
    }
  }
  return a;
}

// Adjoint of up_axis: for each input index, the (output, weight) pairs that
// read it, in ascending output order.
std::vector<std::vector<std::pair<int64_t, double>>> up_adjoint(int64_t h) {
  const UpAxis a = up_axis(h);
  std::vector<std::vector<std::pair<int64_t, double>>> adj(h);
  for (int64_t d = 0; d < 2 * h; ++d) {
    adj[a.lo[d]].push_back({d, 1.0 - a.fr[d]});
    if (a.hi[d] != a.lo[d]) adj[a.hi[d]].push_back({d, a.fr[d]});
  }
  return adj;
}

} // namespace

template <typename T>
double det_sum(const T* a, int64_t n) {
  double part[kChunks];
#pragma omp parallel for schedule(static)
  for (int64_t ch = 0; ch < kChunks; ++ch) {
    const int64_t b = ch * n / kChunks, e = (ch + 1) * n / kChunks;
    Striped<double> s;
    s.add(a + b, e - b);
    part[ch] = s.total();
  }
  double t = 0.0;
  for (int64_t ch = 0; ch < kChunks; ++ch) t += part[ch];
  return t;
}

template <typename T>
double det_dot(const T* a, const T* b, int64_t n) {
  double part[kChunks];
#pragma omp parallel for schedule(static)
  for (int64_t ch = 0; ch < kChunks; ++ch) {
    const int64_t lo = ch * n / kChunks, hi = (ch + 1) * n / kChunks;
    Striped<double> s;
    s.add_dot(a + lo, b + lo, hi - lo);
    part[ch] = s.total();
  }
  double t = 0.0;
  for (int64_t ch = 0; ch < kChunks; ++ch) t += part[ch];
  return t;
}

template <typename T>
bool all_finite(const T* a, int64_t n) {
  std::atomic<bool> bad{false};
#pragma omp parallel for schedule(static)
  for (int64_t ch = 0; ch < kChunks; ++ch) {
    if (bad.load(std::memory_order_relaxed)) continue;
    const int64_t b = ch * n / kChunks, e = (ch + 1) * n / kChunks;
    for (int64_t i = b; i < e; ++i)
      if (!std::isfinite(a[i])) {
        bad.store(true, std::memory_order_relaxed);
        break;
      }
  }
  return !bad.load();
}

// Output rows are processed in strips small enough to stay in L1 across all
// (input channel, tap) passes. Each output element still accumulates its
// terms in ascending (ci, tap) order, so strip size does not affect values.
constexpr int64_t kRowStrip = 16;

template <typename T>
void conv2d_forward(const T* x, Shape4 xs, const T* w, int64_t co, int64_t k,
                    const T* b, T* y) {
  const int64_t N = xs.n, Ci = xs.c, H = xs.h, W = xs.w, HW = H * W;
  const int64_t p = (k - 1) / 2, kk = k * k;
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < co; ++o) {
      T* yp = y + (n * co + o) * HW;
      const T bias = b ? b[o] : T(0);
      for (int64_t i = 0; i < HW; ++i) yp[i] = bias;
      for (int64_t s0 = 0; s0 < H; s0 += kRowStrip) {
        const int64_t s1 = std::min(H, s0 + kRowStrip);
        for (int64_t ci = 0; ci < Ci; ++ci) {
          const T* xp = x + (n * Ci + ci) * HW;
          const T* wp = w + (o * Ci + ci) * kk;
          for (int64_t t = 0; t < kk; ++t) {
            const T wv = wp[t];
            const int64_t dy = t / k - p, dx = t % k - p;
            const int64_t y0 = std::max(s0, std::max<int64_t>(0, -dy));
            const int64_t y1 = std::min(s1, H - std::max<int64_t>(0, dy));
            const int64_t x0 = std::max<int64_t>(0, -dx);
            const int64_t x1 = W - std::max<int64_t>(0, dx);
            for (int64_t yy = y0; yy < y1; ++yy) {
              T* yr = yp + yy * W;
              const T* xr = xp + (yy + dy) * W + dx;
              for (int64_t xx = x0; xx < x1; ++xx) yr[xx] += wv * xr[xx];
            }
          }
        }
      }
    }
}

template <typename T>
void conv2d_dgrad(const T* gy, Shape4 ys, const T* w, int64_t ci, int64_t k,
                  T* gx) {
  const int64_t N = ys.n, Co = ys.c, H = ys.h, W = ys.w, HW = H * W;
  const int64_t p = (k - 1) / 2, kk = k * k;
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < ci; ++c) {
      T* gp = gx + (n * ci + c) * HW;
      for (int64_t s0 = 0; s0 < H; s0 += kRowStrip) {
        const int64_t s1 = std::min(H, s0 + kRowStrip);
        for (int64_t o = 0; o < Co; ++o) {
          const T* gyp = gy + (n * Co + o) * HW;
          const T* wp = w + (o * ci + c) * kk;
          for (int64_t t = 0; t < kk; ++t) {
            const T wv = wp[t];
            const int64_t dy = t / k - p, dx = t % k - p;
            const int64_t y0 = std::max(s0, std::max<int64_t>(0, dy));
            const int64_t y1 = std::min(s1, H + std::min<int64_t>(0, dy));
            const int64_t x0 = std::max<int64_t>(0, dx);
            const int64_t x1 = W + std::min<int64_t>(0, dx);
            for (int64_t yy = y0; yy < y1; ++yy) {
              T* gr = gp + yy * W;
              const T* gyr = gyp + (yy - dy) * W - dx;
              for (int64_t xx = x0; xx < x1; ++xx) gr[xx] += wv * gyr[xx];
            }
          }
        }
      }
    }
}

template <typename T>
void conv2d_wgrad(const T* x, Shape4 xs, const T* gy, int64_t co, int64_t k,
                  T* gw, T* gb) {
  const int64_t N = xs.n, Ci = xs.c, H = xs.h, W = xs.w, HW = H * W;
  const int64_t p = (k - 1) / 2, kk = k * k;
  const int64_t wsz = co * Ci * kk;
  // Per-sample partials, then a fixed ascending sum over samples: the weight
  // gradient reduction order is identical for every thread count.
  std::vector<T> part(size_t(N) * size_t(wsz));
  std::vector<T> bpart(gb ? size_t(N) * size_t(co) : 0);
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < co; ++o) {
      const T* gyp = gy + (n * co + o) * HW;
      std::vector<T> acc(Ci * kk, T(0));
      for (int64_t s0 = 0; s0 < H; s0 += kRowStrip) {
        const int64_t s1 = std::min(H, s0 + kRowStrip);
        for (int64_t ci = 0; ci < Ci; ++ci) {
          const T* xp = x + (n * Ci + ci) * HW;
          for (int64_t t = 0; t < kk; ++t) {
            const int64_t dy = t / k - p, dx = t % k - p;
            const int64_t y0 = std::max(s0, std::max<int64_t>(0, -dy));
            const int64_t y1 = std::min(s1, H - std::max<int64_t>(0, dy));
            const int64_t x0 = std::max<int64_t>(0, -dx);
            const int64_t x1 = W - std::max<int64_t>(0, dx);
            if (y1 > y0)
              acc[ci * kk + t] +=
                  rect_dot(gyp + y0 * W + x0, xp + (y0 + dy) * W + dx + x0,
                           y1 - y0, W, x1 - x0);
          }
        }
      }
      for (int64_t i = 0; i < Ci * kk; ++i)
        part[n * wsz + o * Ci * kk + i] = acc[i];
      if (gb) {
        Striped<T> s;
        s.add(gyp, HW);
        bpart[n * co + o] = s.total();
      }
    }
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < wsz; ++i) {
    T acc = 0;
    for (int64_t n = 0; n < N; ++n) acc += part[n * wsz + i];
    gw[i] += acc;
  }
  if (gb)
    for (int64_t o = 0; o < co; ++o) {
      T acc = 0;
      for (int64_t n = 0; n < N; ++n) acc += bpart[n * co + o];
      gb[o] += acc;
    }
}

template <typename T>
void maxpool2_forward(const T* x, Shape4 xs, T* y, uint8_t* idx) {
  const int64_t N = xs.n, C = xs.c, H = xs.h, W = xs.w;
  const int64_t H2 = H / 2, W2 = W / 2, HW = H * W, HW2 = H2 * W2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* xp = x + (n * C + c) * HW;
      T* yp = y + (n * C + c) * HW2;
      uint8_t* ip = idx + (n * C + c) * HW2;
      for (int64_t oy = 0; oy < H2; ++oy)
        for (int64_t ox = 0; ox < W2; ++ox) {
          const T* wnd = xp + 2 * oy * W + 2 * ox;
          const T cand[4] = {wnd[0], wnd[1], wnd[W], wnd[W + 1]};
          T best = cand[0];
          uint8_t bi = 0;
          for (uint8_t j = 1; j < 4; ++j)
            if (cand[j] > best) {
              best = cand[j];
              bi = j;
            }
          yp[oy * W2 + ox] = best;
          ip[oy * W2 + ox] = bi;
        }
    }
}

template <typename T>
void maxpool2_backward(const T* gy, Shape4 ys, const uint8_t* idx, T* gx) {
  const int64_t N = ys.n, C = ys.c, H2 = ys.h, W2 = ys.w;
  const int64_t W = 2 * W2, HW = 4 * H2 * W2, HW2 = H2 * W2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* gyp = gy + (n * C + c) * HW2;
      const uint8_t* ip = idx + (n * C + c) * HW2;
      T* gp = gx + (n * C + c) * HW;
      for (int64_t oy = 0; oy < H2; ++oy)
        for (int64_t ox = 0; ox < W2; ++ox) {
          const int64_t o = oy * W2 + ox;
          const uint8_t b = ip[o];
          gp[(2 * oy + (b >> 1)) * W + 2 * ox + (b & 1)] += gyp[o];
        }
    }
}

template <typename T>
void upsample2_forward(const T* x, Shape4 xs, T* y) {
  const int64_t N = xs.n, C = xs.c, H = xs.h, W = xs.w;
  const int64_t H2 = 2 * H, W2 = 2 * W;
  const UpAxis ay = up_axis(H), ax = up_axis(W);
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* xp = x + (n * C + c) * H * W;
      T* yp = y + (n * C + c) * H2 * W2;
      for (int64_t dy = 0; dy < H2; ++dy) {
        const T* r0 = xp + ay.lo[dy] * W;
        const T* r1 = xp + ay.hi[dy] * W;
        const T fy = T(ay.fr[dy]), ey = T(1) - fy;
        T* yr = yp + dy * W2;
        for (int64_t dx = 0; dx < W2; ++dx) {
          const T fx = T(ax.fr[dx]), ex = T(1) - fx;
          const int64_t l = ax.lo[dx], h = ax.hi[dx];
          yr[dx] = ey * (ex * r0[l] + fx * r0[h]) + fy * (ex * r1[l] + fx * r1[h]);
        }
      }
    }
}

template <typename T>
void upsample2_backward(const T* gy, Shape4 ys, T* gx) {
  const int64_t N = ys.n, C = ys.c, H2 = ys.h, W2 = ys.w;
  const int64_t H = H2 / 2, W = W2 / 2;
  const auto ay = up_adjoint(H), ax = up_adjoint(W);
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* gp = gy + (n * C + c) * H2 * W2;
      T* op = gx + (n * C + c) * H * W;
      // contract columns first so the row pass runs contiguous
      std::vector<T> u(size_t(H2) * size_t(W));
      for (int64_t dy = 0; dy < H2; ++dy) {
        const T* gr = gp + dy * W2;
        T* ur = u.data() + dy * W;
        for (int64_t xx = 0; xx < W; ++xx) {
          T s = 0;
          for (const auto& [d, wt] : ax[xx]) s += T(wt) * gr[d];
          ur[xx] = s;
        }
      }
      for (int64_t yy = 0; yy < H; ++yy) {
        T* orow = op + yy * W;
        for (const auto& [d, wt] : ay[yy]) {
          const T wv = T(wt);
          const T* ur = u.data() + d * W;
          for (int64_t xx = 0; xx < W; ++xx) orow[xx] += wv * ur[xx];
        }
      }
    }
}

template <typename T>
void batchnorm_train_forward(const T* x, Shape4 xs, const T* gamma,
                             const T* beta, T eps, T* y, T* mean, T* var) {
  const int64_t N = xs.n, C = xs.c, HW = xs.h * xs.w;
  const double M = double(N) * double(HW);
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < C; ++c) {
    Striped<double> s;
    for (int64_t n = 0; n < N; ++n) s.add(x + (n * C + c) * HW, HW);
    const double mu = s.total() / M;
    Striped<double> v;
    for (int64_t n = 0; n < N; ++n) v.add_sq_dev(x + (n * C + c) * HW, mu, HW);
    mean[c] = T(mu);
    var[c] = T(v.total() / M);
  }
  std::vector<T> scale(C), shift(C);
  for (int64_t c = 0; c < C; ++c) {
    const double inv = 1.0 / std::sqrt(double(var[c]) + double(eps));
    scale[c] = T(double(gamma[c]) * inv);
    shift[c] = T(double(beta[c]) - double(gamma[c]) * inv * double(mean[c]));
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* xp = x + (n * C + c) * HW;
      T* yp = y + (n * C + c) * HW;
      const T a = scale[c], b = shift[c];
      for (int64_t i = 0; i < HW; ++i) yp[i] = a * xp[i] + b;
    }
}

template <typename T>
void batchnorm_train_backward(const T* gy, const T* x, Shape4 xs,
                              const T* gamma, const T* mean, const T* var,
                              T eps, T* gx, T* dgamma, T* dbeta) {
  const int64_t N = xs.n, C = xs.c, HW = xs.h * xs.w;
  const double M = double(N) * double(HW);
  std::vector<double> s1(C), s2(C), inv(C);
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < C; ++c) {
    const double mu = double(mean[c]);
    inv[c] = 1.0 / std::sqrt(double(var[c]) + double(eps));
    Striped<double> a, b;
    for (int64_t n = 0; n < N; ++n) {
      a.add(gy + (n * C + c) * HW, HW);
      b.add_dot_centered(gy + (n * C + c) * HW, x + (n * C + c) * HW, mu, HW);
    }
    s1[c] = a.total();
    s2[c] = b.total() * inv[c]; // sum gy * xhat
  }
  for (int64_t c = 0; c < C; ++c) {
    dgamma[c] += T(s2[c]);
    dbeta[c] += T(s1[c]);
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* gyp = gy + (n * C + c) * HW;
      const T* xp = x + (n * C + c) * HW;
      T* gp = gx + (n * C + c) * HW;
      const T a = T(double(gamma[c]) * inv[c]);
      const T m1 = T(s1[c] / M), m2 = T(s2[c] / M);
      const T mu = mean[c], iv = T(inv[c]);
      for (int64_t i = 0; i < HW; ++i) {
        const T xh = (xp[i] - mu) * iv;
        gp[i] += a * (gyp[i] - m1 - xh * m2);
      }
    }
}

template <typename T>
void batchnorm_infer_forward(const T* x, Shape4 xs, const T* gamma,
                             const T* beta, const T* rmean, const T* rvar,
                             T eps, T* y) {
  const int64_t N = xs.n, C = xs.c, HW = xs.h * xs.w;
  std::vector<T> scale(C), shift(C);
  for (int64_t c = 0; c < C; ++c) {
    const double inv = 1.0 / std::sqrt(double(rvar[c]) + double(eps));
    scale[c] = T(double(gamma[c]) * inv);
    shift[c] = T(double(beta[c]) - double(gamma[c]) * inv * double(rmean[c]));
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* xp = x + (n * C + c) * HW;
      T* yp = y + (n * C + c) * HW;
      const T a = scale[c], b = shift[c];
      for (int64_t i = 0; i < HW; ++i) yp[i] = a * xp[i] + b;
    }
}

template <typename T>
void batchnorm_infer_backward(const T* gy, const T* x, Shape4 xs,
                              const T* gamma, const T* rmean, const T* rvar,
                              T eps, T* gx, T* dgamma, T* dbeta) {
  const int64_t N = xs.n, C = xs.c, HW = xs.h * xs.w;
  std::vector<double> inv(C);
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < C; ++c) {
    const double mu = double(rmean[c]);
    inv[c] = 1.0 / std::sqrt(double(rvar[c]) + double(eps));
    Striped<double> a, b;
    for (int64_t n = 0; n < N; ++n) {
      a.add(gy + (n * C + c) * HW, HW);
      b.add_dot_centered(gy + (n * C + c) * HW, x + (n * C + c) * HW, mu, HW);
    }
    dbeta[c] += T(a.total());
    dgamma[c] += T(b.total() * inv[c]);
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* gyp = gy + (n * C + c) * HW;
      T* gp = gx + (n * C + c) * HW;
      const T a = T(double(gamma[c]) * inv[c]);
      for (int64_t i = 0; i < HW; ++i) gp[i] += a * gyp[i];
    }
}

template <typename T>
void relu_forward(const T* x, int64_t n, T* y, uint64_t* mask) {
  if (mask) {
    const int64_t words = mask_words(n);
#pragma omp parallel for schedule(static)
    for (int64_t w = 0; w < words; ++w) {
      const int64_t b = w * 64, e = std::min(n, b + 64);
      uint64_t m = 0;
      for (int64_t i = b; i < e; ++i) {
        if (x[i] > T(0)) {
          y[i] = x[i];
          m |= uint64_t(1) << (i - b);
        } else {
          y[i] = T(0);
        }
      }
      mask[w] = m;
    }
  } else {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  }
}

template <typename T>
void relu_backward(const T* gy, int64_t n, const uint64_t* mask, T* gx) {
  const int64_t words = mask_words(n);
#pragma omp parallel for schedule(static)
  for (int64_t w = 0; w < words; ++w) {
    const int64_t b = w * 64, e = std::min(n, b + 64);
    const uint64_t m = mask[w];
    for (int64_t i = b; i < e; ++i)
      if ((m >> (i - b)) & 1u) gx[i] += gy[i];
  }
}

template <typename T>
void sigmoid_forward(const T* x, int64_t n, T* y) {
  // Clamp into the open interval so saturated inputs cannot round to an
  // exact 0 or 1 (downstream contracts require outputs strictly in (0,1)).
  const T lo = std::numeric_limits<T>::min();
  const T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    const T v = x[i];
    T s;
    if (v >= T(0)) {
      s = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      s = e / (T(1) + e);
    }
    y[i] = std::min(std::max(s, lo), hi);
  }
}

template <typename T>
void sigmoid_backward(const T* gy, const T* y, int64_t n, T* gx) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) gx[i] += gy[i] * y[i] * (T(1) - y[i]);
}

template <typename T>
void mul_forward(const T* a, const T* b, int64_t n, T* y) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

template <typename T>
void add_forward(const T* a, const T* b, int64_t n, T* y) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

template <typename T>
void accumulate(const T* gy, const T* scale, int64_t n, T* gx) {
  if (scale) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) gx[i] += gy[i] * scale[i];
  } else {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) gx[i] += gy[i];
  }
}

template <typename T>
void copy_channels_out(const T* x, Shape4 xs, T* dst, int64_t cout,
                       int64_t c0) {
  const int64_t N = xs.n, C = xs.c, HW = xs.h * xs.w;
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      std::copy_n(x + (n * C + c) * HW, HW, dst + (n * cout + c0 + c) * HW);
}

template <typename T>
void accum_channels_in(const T* src, int64_t cin, int64_t c0, Shape4 cs,
                       T* g) {
  const int64_t N = cs.n, C = cs.c, HW = cs.h * cs.w;
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* s = src + (n * cin + c0 + c) * HW;
      T* d = g + (n * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) d[i] += s[i];
    }
}

template <typename T>
void accum_channels_out(const T* x, Shape4 xs, T* dst, int64_t cout,
                        int64_t c0) {
  const int64_t N = xs.n, C = xs.c, HW = xs.h * xs.w;
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* s = x + (n * C + c) * HW;
      T* d = dst + (n * cout + c0 + c) * HW;
      for (int64_t i = 0; i < HW; ++i) d[i] += s[i];
    }
}

template <typename T>
void slice_channels(const T* x, Shape4 xs, int64_t c0, int64_t cout, T* y) {
  const int64_t N = xs.n, C = xs.c, HW = xs.h * xs.w;
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < cout; ++c)
      std::copy_n(x + (n * C + c0 + c) * HW, HW, y + (n * cout + c) * HW);
}

template <typename T>
void overlap_sums(const T* p, const T* t, int64_t n, double& spt, double& sp,
                  double& st) {
  double ppt[kChunks], pp[kChunks], pt[kChunks];
#pragma omp parallel for schedule(static)
  for (int64_t ch = 0; ch < kChunks; ++ch) {
    const int64_t b = ch * n / kChunks, e = (ch + 1) * n / kChunks;
    Striped<double> a, c, d;
    a.add_dot(p + b, t + b, e - b);
    c.add(p + b, e - b);
    d.add(t + b, e - b);
    ppt[ch] = a.total();
    pp[ch] = c.total();
    pt[ch] = d.total();
  }
  spt = sp = st = 0.0;
  for (int64_t ch = 0; ch < kChunks; ++ch) {
    spt += ppt[ch];
    sp += pp[ch];
    st += pt[ch];
  }
}

#define TSEG_INSTANTIATE_KERNELS(T)                                            \
  template double det_sum<T>(const T*, int64_t);                               \
  template double det_dot<T>(const T*, const T*, int64_t);                     \
  template bool all_finite<T>(const T*, int64_t);                              \
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
                                           const T*, T, T*, T*, T*);           \
  template void batchnorm_train_backward<T>(const T*, const T*, Shape4,        \
                                            const T*, const T*, const T*, T,   \
                                            T*, T*, T*);                       \
  template void batchnorm_infer_forward<T>(const T*, Shape4, const T*,         \
                                           const T*, const T*, const T*, T,    \
                                           T*);                                \
  template void batchnorm_infer_backward<T>(const T*, const T*, Shape4,        \
                                            const T*, const T*, const T*, T,   \
                                            T*, T*, T*);                       \
  template void relu_forward<T>(const T*, int64_t, T*, uint64_t*);             \
  template void relu_backward<T>(const T*, int64_t, const uint64_t*, T*);      \
  template void sigmoid_forward<T>(const T*, int64_t, T*);                     \
  template void sigmoid_backward<T>(const T*, const T*, int64_t, T*);          \
  template void mul_forward<T>(const T*, const T*, int64_t, T*);               \
  template void add_forward<T>(const T*, const T*, int64_t, T*);               \
  template void accumulate<T>(const T*, const T*, int64_t, T*);                \
  template void copy_channels_out<T>(const T*, Shape4, T*, int64_t, int64_t);  \
  template void accum_channels_in<T>(const T*, int64_t, int64_t, Shape4, T*);  \
  template void accum_channels_out<T>(const T*, Shape4, T*, int64_t,           \
                                      int64_t);                                \
  template void slice_channels<T>(const T*, Shape4, int64_t, int64_t, T*);     \
  template void overlap_sums<T>(const T*, const T*, int64_t, double&, double&, \
                                double&);

TSEG_INSTANTIATE_KERNELS(float)
TSEG_INSTANTIATE_KERNELS(double)

} // namespace tseg::kern
