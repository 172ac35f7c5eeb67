#include <doctest.h>
#include <omp.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "tseg/kernels.hpp"
#include "tseg/rng.hpp"
#include "tseg/tensor.hpp"

using namespace tseg;

namespace {

template <typename T>
std::vector<T> randu(Rng& rng, int64_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<T> v(n);
  for (auto& x : v) x = T(rng.uniform(lo, hi));
  return v;
}

// max |a-b| / max(|a|_inf, |b|_inf, guard)
template <typename T>
double rel_err(const std::vector<T>& a, const std::vector<T>& b,
               double guard = 1e-8) {
  REQUIRE(a.size() == b.size());
  double maxd = 0.0, maxm = guard;
  for (size_t i = 0; i < a.size(); ++i) {
    maxd = std::max(maxd, std::abs(double(a[i]) - double(b[i])));
    maxm = std::max({maxm, std::abs(double(a[i])), std::abs(double(b[i]))});
  }
  return maxd / maxm;
}

template <typename T>
bool bitwise_equal(const std::vector<T>& a, const std::vector<T>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

} // namespace

TEST_CASE("conv2d identity kernel reproduces input") {
  Shape4 xs{1, 1, 3, 3};
  std::vector<float> x(9, 1.0f), w(9, 0.0f), b(1, 0.0f), y(9);
  w[4] = 1.0f; // center tap
  kern::conv2d_forward(x.data(), xs, w.data(), 1, 3, b.data(), y.data());
  for (float v : y) CHECK(v == 1.0f);
}

TEST_CASE("conv2d all-ones kernel on all-ones 3x3 input") {
  Shape4 xs{1, 1, 3, 3};
  std::vector<float> x(9, 1.0f), w(9, 1.0f), b(1, 0.0f), y(9);
  kern::conv2d_forward(x.data(), xs, w.data(), 1, 3, b.data(), y.data());
  const float want[9] = {4, 6, 4, 6, 9, 6, 4, 6, 4};
  for (int i = 0; i < 9; ++i) CHECK(y[i] == want[i]);
}

TEST_CASE("conv2d matches naive oracle") {
  auto rng = Rng::substream(42, "conv-oracle");
  for (int64_t k : {1LL, 3LL}) {
    Shape4 xs{2, 2, 5, 7};
    const int64_t co = 4;
    auto x = randu<float>(rng, xs.numel());
    auto w = randu<float>(rng, co * xs.c * k * k);
    auto b = randu<float>(rng, co);
    std::vector<float> y(xs.n * co * xs.h * xs.w), yr(y.size());
    kern::conv2d_forward(x.data(), xs, w.data(), co, k, b.data(), y.data());
    kern::ref::conv2d_forward(x.data(), xs, w.data(), co, k, b.data(),
                              yr.data());
    CHECK(rel_err(y, yr) < 1e-6);
  }
}

TEST_CASE("conv2d is linear in x when bias is zero") {
  auto rng = Rng::substream(7, "conv-linear");
  Shape4 xs{1, 3, 6, 6};
  const int64_t co = 2, k = 3;
  auto x1 = randu<float>(rng, xs.numel());
  auto x2 = randu<float>(rng, xs.numel());
  auto w = randu<float>(rng, co * xs.c * k * k);
  std::vector<float> b(co, 0.0f);
  const float a = 1.7f, c = -0.4f;
  std::vector<float> xc(xs.numel());
  for (size_t i = 0; i < xc.size(); ++i) xc[i] = a * x1[i] + c * x2[i];
  std::vector<float> y1(xs.n * co * 36), y2(y1.size()), yc(y1.size());
  kern::conv2d_forward(x1.data(), xs, w.data(), co, k, b.data(), y1.data());
  kern::conv2d_forward(x2.data(), xs, w.data(), co, k, b.data(), y2.data());
  kern::conv2d_forward(xc.data(), xs, w.data(), co, k, b.data(), yc.data());
  std::vector<float> lin(y1.size());
  for (size_t i = 0; i < lin.size(); ++i) lin[i] = a * y1[i] + c * y2[i];
  CHECK(rel_err(yc, lin) < 1e-5);
}

TEST_CASE("conv2d gradients match naive oracle (double)") {
  auto rng = Rng::substream(9, "conv-grad");
  Shape4 xs{2, 3, 5, 6};
  const int64_t co = 4, k = 3;
  Shape4 ys{xs.n, co, xs.h, xs.w};
  auto x = randu<double>(rng, xs.numel());
  auto w = randu<double>(rng, co * xs.c * k * k);
  auto gy = randu<double>(rng, ys.numel());

  std::vector<double> gx(xs.numel(), 0.0), gxr(xs.numel(), 0.0);
  kern::conv2d_dgrad(gy.data(), ys, w.data(), xs.c, k, gx.data());
  kern::ref::conv2d_dgrad(gy.data(), ys, w.data(), xs.c, k, gxr.data());
  CHECK(rel_err(gx, gxr) < 1e-12);

  std::vector<double> gw(w.size(), 0.0), gwr(w.size(), 0.0);
  std::vector<double> gb(co, 0.0), gbr(co, 0.0);
  kern::conv2d_wgrad(x.data(), xs, gy.data(), co, k, gw.data(), gb.data());
  kern::ref::conv2d_wgrad(x.data(), xs, gy.data(), co, k, gwr.data(),
                          gbr.data());
  CHECK(rel_err(gw, gwr) < 1e-12);
  CHECK(rel_err(gb, gbr) < 1e-12);
}

TEST_CASE("maxpool2 single window and tie-break") {
  Shape4 xs{1, 1, 2, 2};
  std::vector<float> x = {1, 2, 3, 4}, y(1);
  std::vector<uint8_t> idx(1);
  kern::maxpool2_forward(x.data(), xs, y.data(), idx.data());
  CHECK(y[0] == 4.0f);
  CHECK(idx[0] == 3);

  std::vector<float> c(16, 5.0f), yc(4);
  std::vector<uint8_t> ic(4);
  kern::maxpool2_forward(c.data(), Shape4{1, 1, 4, 4}, yc.data(), ic.data());
  for (float v : yc) CHECK(v == 5.0f);
  for (uint8_t i : ic) CHECK(i == 0); // ties go to the first window position
}

TEST_CASE("maxpool2 matches window-scan oracle exactly") {
  auto rng = Rng::substream(3, "pool-oracle");
  Shape4 xs{2, 3, 8, 8};
  auto x = randu<float>(rng, xs.numel());
  const int64_t on = xs.numel() / 4;
  std::vector<float> y(on), yr(on);
  std::vector<uint8_t> i1(on), i2(on);
  kern::maxpool2_forward(x.data(), xs, y.data(), i1.data());
  kern::ref::maxpool2_forward(x.data(), xs, yr.data(), i2.data());
  CHECK(bitwise_equal(y, yr));
  CHECK(std::memcmp(i1.data(), i2.data(), on) == 0);
}

TEST_CASE("maxpool2 backward conserves gradient mass") {
  auto rng = Rng::substream(4, "pool-bwd");
  Shape4 xs{1, 2, 6, 6};
  auto x = randu<float>(rng, xs.numel());
  Shape4 ys{1, 2, 3, 3};
  std::vector<float> y(ys.numel());
  std::vector<uint8_t> idx(ys.numel());
  kern::maxpool2_forward(x.data(), xs, y.data(), idx.data());
  auto gy = randu<float>(rng, ys.numel());
  std::vector<float> gx(xs.numel(), 0.0f), gxr(xs.numel(), 0.0f);
  kern::maxpool2_backward(gy.data(), ys, idx.data(), gx.data());
  kern::ref::maxpool2_backward(gy.data(), ys, idx.data(), gxr.data());
  CHECK(bitwise_equal(gx, gxr));
  double in = 0, out = 0;
  for (float g : gy) in += g;
  int nonzero = 0;
  for (float g : gx) {
    out += g;
    nonzero += g != 0.0f;
  }
  CHECK(out == doctest::Approx(in).epsilon(1e-6));
  CHECK(nonzero <= int(ys.numel()));
}

TEST_CASE("upsample2 frozen example and constant input") {
  Shape4 xs{1, 1, 1, 2};
  std::vector<float> x = {1.0f, 2.0f}, y(8);
  kern::upsample2_forward(x.data(), xs, y.data());
  // two output rows, both [1.0, 1.25, 1.75, 2.0]
  const float want[4] = {1.0f, 1.25f, 1.75f, 2.0f};
  for (int r = 0; r < 2; ++r)
    for (int i = 0; i < 4; ++i)
      CHECK(y[4 * r + i] == doctest::Approx(want[i]).epsilon(1e-7));

  std::vector<float> c(2 * 3 * 3, 2.5f), yc(2 * 6 * 6);
  kern::upsample2_forward(c.data(), Shape4{1, 2, 3, 3}, yc.data());
  for (float v : yc) CHECK(v == 2.5f);
}

TEST_CASE("upsample2 matches per-pixel formula oracle") {
  auto rng = Rng::substream(5, "ups-oracle");
  Shape4 xs{2, 2, 5, 4};
  auto x = randu<float>(rng, xs.numel());
  std::vector<float> y(xs.numel() * 4), yr(y.size());
  kern::upsample2_forward(x.data(), xs, y.data());
  kern::ref::upsample2_forward(x.data(), xs, yr.data());
  CHECK(rel_err(y, yr) < 1e-6);
}

TEST_CASE("upsample2 backward matches scatter oracle and conserves mass") {
  auto rng = Rng::substream(6, "ups-bwd");
  Shape4 xs{1, 2, 4, 5};
  Shape4 ys{1, 2, 8, 10};
  auto gy = randu<double>(rng, ys.numel());
  std::vector<double> gx(xs.numel(), 0.0), gxr(xs.numel(), 0.0);
  kern::upsample2_backward(gy.data(), ys, gx.data());
  kern::ref::upsample2_backward(gy.data(), ys, gxr.data());
  CHECK(rel_err(gx, gxr) < 1e-12);
  double in = 0, out = 0;
  for (double g : gy) in += g;
  for (double g : gx) out += g;
  CHECK(out == doctest::Approx(in).epsilon(1e-10));
}

TEST_CASE("batchnorm train normalizes and matches oracle") {
  auto rng = Rng::substream(8, "bn");
  Shape4 xs{4, 3, 6, 5};
  auto x = randu<float>(rng, xs.numel(), -3.0, 7.0);
  std::vector<float> gamma(xs.c, 1.0f), beta(xs.c, 0.0f);
  std::vector<float> y(xs.numel()), yr(xs.numel());
  std::vector<float> mean(xs.c), var(xs.c), meanr(xs.c), varr(xs.c);
  const float eps = 1e-3f;
  kern::batchnorm_train_forward(x.data(), xs, gamma.data(), beta.data(), eps,
                                y.data(), mean.data(), var.data());
  kern::ref::batchnorm_train_forward(x.data(), xs, gamma.data(), beta.data(),
                                     eps, yr.data(), meanr.data(),
                                     varr.data());
  CHECK(rel_err(y, yr) < 1e-5);
  const int64_t M = xs.n * xs.h * xs.w;
  for (int64_t c = 0; c < xs.c; ++c) {
    double s = 0, ss = 0;
    for (int64_t n = 0; n < xs.n; ++n)
      for (int64_t i = 0; i < xs.h * xs.w; ++i) {
        const double v = y[(n * xs.c + c) * xs.h * xs.w + i];
        s += v;
        ss += v * v;
      }
    const double mu = s / double(M);
    const double v = ss / double(M) - mu * mu;
    CHECK(std::abs(mu) < 1e-5);
    CHECK(v == doctest::Approx(1.0).epsilon(2e-3)); // eps in denominator
  }
}

TEST_CASE("batchnorm infer with unit running stats is near-identity") {
  auto rng = Rng::substream(11, "bn-infer");
  Shape4 xs{2, 2, 4, 4};
  auto x = randu<float>(rng, xs.numel());
  std::vector<float> gamma(xs.c, 1.0f), beta(xs.c, 0.0f), rm(xs.c, 0.0f),
      rv(xs.c, 1.0f), y(xs.numel());
  const float eps = 1e-3f;
  kern::batchnorm_infer_forward(x.data(), xs, gamma.data(), beta.data(),
                                rm.data(), rv.data(), eps, y.data());
  const double scale = 1.0 / std::sqrt(1.0 + double(eps));
  for (int64_t i = 0; i < xs.numel(); ++i)
    CHECK(double(y[i]) ==
          doctest::Approx(double(x[i]) * scale).epsilon(1e-6));
}

TEST_CASE("relu and sigmoid point values") {
  std::vector<float> x = {-1.0f, 2.0f, 0.0f, -100.0f, 100.0f};
  std::vector<float> y(x.size());
  std::vector<uint64_t> mask(kern::mask_words(x.size()));
  kern::relu_forward(x.data(), int64_t(x.size()), y.data(), mask.data());
  CHECK(y[0] == 0.0f);
  CHECK(y[1] == 2.0f);
  CHECK(y[2] == 0.0f);
  CHECK(((mask[0] >> 1) & 1) == 1);
  CHECK(((mask[0] >> 0) & 1) == 0);
  CHECK(((mask[0] >> 2) & 1) == 0); // relu'(0) = 0

  kern::sigmoid_forward(x.data(), int64_t(x.size()), y.data());
  CHECK(y[2] == 0.5f);
  CHECK(y[3] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(y[4] == doctest::Approx(1.0).epsilon(1e-6));
  for (float v : y) CHECK(std::isfinite(v));
}

TEST_CASE("relu backward routes through mask only") {
  std::vector<float> x = {-1.0f, 3.0f, 0.5f, 0.0f};
  std::vector<float> y(4), gy = {10, 20, 30, 40}, gx(4, 1.0f);
  std::vector<uint64_t> mask(1);
  kern::relu_forward(x.data(), 4, y.data(), mask.data());
  kern::relu_backward(gy.data(), 4, mask.data(), gx.data());
  CHECK(gx[0] == 1.0f);
  CHECK(gx[1] == 21.0f);
  CHECK(gx[2] == 31.0f);
  CHECK(gx[3] == 1.0f);
}

TEST_CASE("deterministic reductions are thread-count invariant") {
  auto rng = Rng::substream(12, "det-sum");
  auto a = randu<double>(rng, 100003);
  auto b = randu<double>(rng, 100003);
  const int save = omp_get_max_threads();
  omp_set_num_threads(1);
  const double s1 = kern::det_sum(a.data(), int64_t(a.size()));
  const double d1 = kern::det_dot(a.data(), b.data(), int64_t(a.size()));
  omp_set_num_threads(4);
  const double s4 = kern::det_sum(a.data(), int64_t(a.size()));
  const double d4 = kern::det_dot(a.data(), b.data(), int64_t(a.size()));
  omp_set_num_threads(save);
  CHECK(std::memcmp(&s1, &s4, sizeof(double)) == 0);
  CHECK(std::memcmp(&d1, &d4, sizeof(double)) == 0);
  double naive = 0;
  for (double v : a) naive += v;
  CHECK(s1 == doctest::Approx(naive).epsilon(1e-12));
}

TEST_CASE("kernels are bitwise identical across thread counts") {
  auto rng = Rng::substream(13, "threads");
  Shape4 xs{3, 4, 10, 12};
  const int64_t co = 6, k = 3;
  Shape4 ys{xs.n, co, xs.h, xs.w};
  auto x = randu<float>(rng, xs.numel());
  auto w = randu<float>(rng, co * xs.c * k * k);
  auto bias = randu<float>(rng, co);
  auto gy = randu<float>(rng, ys.numel());
  auto bngy = randu<float>(rng, xs.numel());
  std::vector<float> gamma(xs.c, 1.2f), beta(xs.c, -0.3f);

  auto run_all = [&] {
    std::vector<std::vector<float>> outs;
    std::vector<float> y(ys.numel());
    kern::conv2d_forward(x.data(), xs, w.data(), co, k, bias.data(), y.data());
    outs.push_back(y);
    std::vector<float> gx(xs.numel(), 0.0f);
    kern::conv2d_dgrad(gy.data(), ys, w.data(), xs.c, k, gx.data());
    outs.push_back(gx);
    std::vector<float> gw(w.size(), 0.0f), gb(co, 0.0f);
    kern::conv2d_wgrad(x.data(), xs, gy.data(), co, k, gw.data(), gb.data());
    outs.push_back(gw);
    outs.push_back(gb);
    std::vector<float> py(xs.numel() / 4);
    std::vector<uint8_t> idx(py.size());
    kern::maxpool2_forward(x.data(), xs, py.data(), idx.data());
    outs.push_back(py);
    std::vector<float> uy(xs.numel() * 4);
    kern::upsample2_forward(x.data(), xs, uy.data());
    outs.push_back(uy);
    std::vector<float> ug(xs.numel(), 0.0f);
    kern::upsample2_backward(uy.data(), Shape4{xs.n, xs.c, 2 * xs.h, 2 * xs.w},
                             ug.data());
    outs.push_back(ug);
    std::vector<float> bny(xs.numel()), m(xs.c), v(xs.c);
    kern::batchnorm_train_forward(x.data(), xs, gamma.data(), beta.data(),
                                  1e-3f, bny.data(), m.data(), v.data());
    outs.push_back(bny);
    std::vector<float> bgx(xs.numel(), 0.0f), dg(xs.c, 0.0f), db(xs.c, 0.0f);
    kern::batchnorm_train_backward(bngy.data(), x.data(), xs, gamma.data(),
                                   m.data(), v.data(), 1e-3f, bgx.data(),
                                   dg.data(), db.data());
    outs.push_back(bgx);
    outs.push_back(dg);
    return outs;
  };

  const int save = omp_get_max_threads();
  omp_set_num_threads(1);
  auto r1 = run_all();
  omp_set_num_threads(3);
  auto r3 = run_all();
  omp_set_num_threads(save);
  REQUIRE(r1.size() == r3.size());
  for (size_t i = 0; i < r1.size(); ++i) CHECK(bitwise_equal(r1[i], r3[i]));
}

TEST_CASE("overlap sums match naive accumulation") {
  auto rng = Rng::substream(14, "overlap");
  auto p = randu<float>(rng, 5000, 0.0, 1.0);
  std::vector<float> t(5000);
  for (auto& v : t) v = rng.next_bool() ? 1.0f : 0.0f;
  double spt, sp, st;
  kern::overlap_sums(p.data(), t.data(), 5000, spt, sp, st);
  double a = 0, b = 0, c = 0;
  for (int i = 0; i < 5000; ++i) {
    a += double(p[i]) * double(t[i]);
    b += double(p[i]);
    c += double(t[i]);
  }
  CHECK(spt == doctest::Approx(a).epsilon(1e-12));
  CHECK(sp == doctest::Approx(b).epsilon(1e-12));
  CHECK(st == doctest::Approx(c).epsilon(1e-12));
}
