#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tseg/errors.hpp"
#include "tseg/kernels.hpp"
#include "tseg/tensor.hpp"

// Reverse-mode autodiff over rank-4 tensors. A Tape records one forward pass
// as a flat node list; backward() walks it in reverse creation order, which
// is a valid reverse topological order because inputs always precede users.
//
// Memory policy: drop(id) releases a node's stored output after its last
// forward consumer. If backward later needs that value (e.g. batchnorm needs
// its input), ensure_output() recomputes it from the node's own inputs and
// the recomputed storage is released again right after the consuming step.

namespace tseg {

enum class Mode { train, infer };

template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Parameter() = default;
  explicit Parameter(Tensor<T> v, bool train_flag = true)
      : value(std::move(v)), grad(value.shape()), trainable(train_flag) {}

  void zero_grad() { std::fill(grad.vec().begin(), grad.vec().end(), T(0)); }
};

template <typename T>
class Tape {
  enum class Op : uint8_t {
    Input,
    Conv,
    Bn,
    Relu,
    Sigmoid,
    Pool,
    Upsample,
    Mul,
    Add,
    Concat,
    Slice,
    Sum,
    Dice,
    Tversky
  };

  struct Node {
    Op op;
    int a = -1, b = -1;
    std::vector<int> srcs; // concat only
    Tensor<T> out;
    Tensor<T> grad;
    bool needs_grad = true; // false only for plain inputs
    bool recomputed = false;
    // conv
    Parameter<T>* w = nullptr;
    Parameter<T>* bias = nullptr;
    int64_t k = 0;
    // batchnorm
    Parameter<T>* gamma = nullptr;
    Parameter<T>* beta = nullptr;
    Parameter<T>* rmean = nullptr;
    Parameter<T>* rvar = nullptr;
    T eps{};
    bool bn_train = false;
    std::vector<T> bn_mean, bn_var;
    // caches
    std::vector<uint64_t> mask; // relu
    std::vector<uint8_t> idx;   // maxpool argmax
    int64_t c0 = 0;             // slice
    // losses
    Tensor<T> target;
    double spt = 0, sp = 0, st = 0;
    T t_alpha{}, t_beta{};
  };

public:
  explicit Tape(Mode mode = Mode::train, bool recording = true)
      : mode_(mode), recording_(recording) {}

  Mode mode() const { return mode_; }
  bool recording() const { return recording_; }
  int size() const { return int(nodes_.size()); }

  int input(Tensor<T> x, bool needs_grad = false) {
    Node n;
    n.op = Op::Input;
    n.out = std::move(x);
    n.needs_grad = needs_grad;
    return push(std::move(n));
  }

  int conv2d(int x, Parameter<T>& w, Parameter<T>& b, int64_t k) {
    const Shape4 xs = shape_of(x);
    const Shape4 ws = w.value.shape();
    if (k != 1 && k != 3)
      throw DimensionError("conv2d kernel size must be 1 or 3, got " +
                           std::to_string(k));
    if (ws.h != k || ws.w != k || ws.c != xs.c)
      throw DimensionError("conv2d weight " + ws.str() +
                           " incompatible with input " + xs.str() +
                           " and k=" + std::to_string(k));
    if (b.value.numel() != ws.n)
      throw DimensionError("conv2d bias length " +
                           std::to_string(b.value.numel()) +
                           " != output channels " + std::to_string(ws.n));
    Node n;
    n.op = Op::Conv;
    n.a = x;
    n.w = &w;
    n.bias = &b;
    n.k = k;
    n.out = Tensor<T>({xs.n, ws.n, xs.h, xs.w});
    kern::conv2d_forward(data_of(x), xs, w.value.data(), ws.n, k,
                         b.value.data(), n.out.data());
    if (!kern::all_finite(n.out.data(), n.out.numel()))
      throw NumericError("conv2d produced a non-finite output");
    return push(std::move(n));
  }

  int batchnorm(int x, Parameter<T>& gamma, Parameter<T>& beta,
                Parameter<T>& rmean, Parameter<T>& rvar, T eps, T momentum,
                bool update_running) {
    const Shape4 xs = shape_of(x);
    if (gamma.value.numel() != xs.c || beta.value.numel() != xs.c ||
        rmean.value.numel() != xs.c || rvar.value.numel() != xs.c)
      throw DimensionError("batchnorm parameter length != channel count " +
                           std::to_string(xs.c));
    Node n;
    n.op = Op::Bn;
    n.a = x;
    n.gamma = &gamma;
    n.beta = &beta;
    n.rmean = &rmean;
    n.rvar = &rvar;
    n.eps = eps;
    n.bn_train = mode_ == Mode::train;
    n.out = Tensor<T>(xs);
    if (n.bn_train) {
      n.bn_mean.resize(xs.c);
      n.bn_var.resize(xs.c);
      kern::batchnorm_train_forward(data_of(x), xs, gamma.value.data(),
                                    beta.value.data(), eps, n.out.data(),
                                    n.bn_mean.data(), n.bn_var.data());
      if (update_running)
        for (int64_t c = 0; c < xs.c; ++c) {
          rmean.value[c] =
              (T(1) - momentum) * rmean.value[c] + momentum * n.bn_mean[c];
          rvar.value[c] =
              (T(1) - momentum) * rvar.value[c] + momentum * n.bn_var[c];
        }
    } else {
      kern::batchnorm_infer_forward(data_of(x), xs, gamma.value.data(),
                                    beta.value.data(), rmean.value.data(),
                                    rvar.value.data(), eps, n.out.data());
    }
    return push(std::move(n));
  }

  int relu(int x) {
    const Shape4 xs = shape_of(x);
    Node n;
    n.op = Op::Relu;
    n.a = x;
    n.out = Tensor<T>(xs);
    if (recording_) n.mask.resize(kern::mask_words(xs.numel()));
    kern::relu_forward(data_of(x), xs.numel(), n.out.data(),
                       recording_ ? n.mask.data() : nullptr);
    return push(std::move(n));
  }

  int sigmoid(int x) {
    const Shape4 xs = shape_of(x);
    Node n;
    n.op = Op::Sigmoid;
    n.a = x;
    n.out = Tensor<T>(xs);
    kern::sigmoid_forward(data_of(x), xs.numel(), n.out.data());
    return push(std::move(n));
  }

  int maxpool2(int x) {
    const Shape4 xs = shape_of(x);
    if (xs.h % 2 || xs.w % 2)
      throw DimensionError("maxpool2 needs even H and W, got " + xs.str());
    Node n;
    n.op = Op::Pool;
    n.a = x;
    n.out = Tensor<T>({xs.n, xs.c, xs.h / 2, xs.w / 2});
    n.idx.resize(size_t(n.out.numel()));
    kern::maxpool2_forward(data_of(x), xs, n.out.data(), n.idx.data());
    if (!recording_) n.idx = {};
    return push(std::move(n));
  }

  int upsample2(int x) {
    const Shape4 xs = shape_of(x);
    Node n;
    n.op = Op::Upsample;
    n.a = x;
    n.out = Tensor<T>({xs.n, xs.c, 2 * xs.h, 2 * xs.w});
    kern::upsample2_forward(data_of(x), xs, n.out.data());
    return push(std::move(n));
  }

  int mul(int a, int b) {
    require_same_shape(nodes_[a].out, nodes_[b].out, "mul");
    Node n;
    n.op = Op::Mul;
    n.a = a;
    n.b = b;
    n.out = Tensor<T>(shape_of(a));
    kern::mul_forward(data_of(a), data_of(b), n.out.numel(), n.out.data());
    return push(std::move(n));
  }

  int add(int a, int b) {
    require_same_shape(nodes_[a].out, nodes_[b].out, "add");
    Node n;
    n.op = Op::Add;
    n.a = a;
    n.b = b;
    n.out = Tensor<T>(shape_of(a));
    kern::add_forward(data_of(a), data_of(b), n.out.numel(), n.out.data());
    return push(std::move(n));
  }

  int concat(const std::vector<int>& xs) {
    if (xs.empty()) throw ContractError("concat of zero tensors");
    const Shape4 first = shape_of(xs[0]);
    int64_t ctot = 0;
    for (int id : xs) {
      const Shape4 s = shape_of(id);
      if (s.n != first.n || s.h != first.h || s.w != first.w)
        throw DimensionError("concat: mismatched shapes " + first.str() +
                             " vs " + s.str());
      ctot += s.c;
    }
    Node n;
    n.op = Op::Concat;
    n.srcs = xs;
    n.out = Tensor<T>({first.n, ctot, first.h, first.w});
    int64_t c0 = 0;
    for (int id : xs) {
      const Shape4 s = shape_of(id);
      kern::copy_channels_out(data_of(id), s, n.out.data(), ctot, c0);
      c0 += s.c;
    }
    return push(std::move(n));
  }

  int slice(int x, int64_t c0, int64_t c) {
    const Shape4 xs = shape_of(x);
    if (c0 < 0 || c <= 0 || c0 + c > xs.c)
      throw DimensionError("slice channels [" + std::to_string(c0) + "," +
                           std::to_string(c0 + c) + ") out of range for " +
                           xs.str());
    Node n;
    n.op = Op::Slice;
    n.a = x;
    n.c0 = c0;
    n.out = Tensor<T>({xs.n, c, xs.h, xs.w});
    kern::slice_channels(data_of(x), xs, c0, c, n.out.data());
    return push(std::move(n));
  }

  int sum(int x) {
    Node n;
    n.op = Op::Sum;
    n.a = x;
    n.out = Tensor<T>::scalar(T(kern::det_sum(data_of(x), numel_of(x))));
    return push(std::move(n));
  }

  int dice_loss(int pred, const Tensor<T>& target, T eps) {
    require_same_shape(nodes_[pred].out, target, "dice_loss");
    Node n;
    n.op = Op::Dice;
    n.a = pred;
    n.eps = eps;
    n.target = target;
    kern::overlap_sums(data_of(pred), target.data(), target.numel(), n.spt,
                       n.sp, n.st);
    const double loss =
        1.0 - (2.0 * n.spt + double(eps)) / (n.sp + n.st + double(eps));
    if (!std::isfinite(loss)) throw NumericError("dice_loss is non-finite");
    n.out = Tensor<T>::scalar(T(loss));
    return push(std::move(n));
  }

  int tversky_loss(int pred, const Tensor<T>& target, T alpha, T beta, T eps) {
    require_same_shape(nodes_[pred].out, target, "tversky_loss");
    Node n;
    n.op = Op::Tversky;
    n.a = pred;
    n.eps = eps;
    n.t_alpha = alpha;
    n.t_beta = beta;
    n.target = target;
    kern::overlap_sums(data_of(pred), target.data(), target.numel(), n.spt,
                       n.sp, n.st);
    // denominator = spt + alpha*sum p(1-t) + beta*sum (1-p)t + eps
    const double den = n.spt + double(alpha) * (n.sp - n.spt) +
                       double(beta) * (n.st - n.spt) + double(eps);
    const double loss = 1.0 - (n.spt + double(eps)) / den;
    if (!std::isfinite(loss)) throw NumericError("tversky_loss is non-finite");
    n.out = Tensor<T>::scalar(T(loss));
    return push(std::move(n));
  }

  const Tensor<T>& out(int id) const {
    const Node& n = nodes_.at(size_t(id));
    if (n.out.released())
      throw ContractError("output of node " + std::to_string(id) +
                          " was dropped");
    return n.out;
  }

  // Shape survives drop(), so this works for released nodes too.
  Shape4 node_shape(int id) const { return nodes_.at(size_t(id)).out.shape(); }

  T scalar(int id) const { return out(id).item(); }

  // Gradient w.r.t. a node's output (valid for inputs created with
  // needs_grad=true, after backward).
  const Tensor<T>& grad(int id) const {
    const Node& n = nodes_.at(size_t(id));
    if (n.grad.numel() == 0)
      throw ContractError("node " + std::to_string(id) + " has no gradient");
    return n.grad;
  }

  // Releases a node's stored output. Callers may only drop values whose last
  // forward consumer has already run; backward restores them on demand.
  void drop(int id) { nodes_.at(size_t(id)).out.release(); }

  void backward(int loss) {
    if (!recording_)
      throw ContractError("backward on a non-recording tape");
    if (backward_done_) throw ContractError("backward already ran");
    const Shape4 ls = nodes_.at(size_t(loss)).out.shape();
    if (!(ls == Shape4{1, 1, 1, 1}))
      throw ContractError("loss must be scalar [1,1,1,1], got " + ls.str());
    backward_done_ = true;
    grad_buf(loss)[0] = T(1);
    for (int id = loss; id >= 0; --id) {
      if (nodes_[size_t(id)].grad.numel() == 0) continue; // off the loss path
      step_backward(id);
      Node& n = nodes_[size_t(id)];
      if (n.op != Op::Input) {
        n.grad = Tensor<T>();
        // Safe to free eagerly: every consumer sits later on the tape, so its
        // backward step (the only reader of this output) has already run.
        n.out.release();
      }
      release_recomputed();
    }
  }

  // Total bytes of live tensor storage (outputs + grads), for memory tests.
  size_t live_bytes() const {
    size_t b = 0;
    for (const Node& n : nodes_) {
      b += n.out.vec().capacity() * sizeof(T);
      b += n.grad.vec().capacity() * sizeof(T);
      b += n.target.vec().capacity() * sizeof(T);
      b += n.mask.capacity() * 8 + n.idx.capacity();
    }
    return b;
  }

private:
  int push(Node n) {
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
  }

  Shape4 shape_of(int id) const { return nodes_.at(size_t(id)).out.shape(); }
  int64_t numel_of(int id) const { return nodes_.at(size_t(id)).out.numel(); }

  // Pointer to a node's output for a forward computation (must be live).
  const T* data_of(int id) {
    Node& n = nodes_.at(size_t(id));
    if (n.out.released())
      throw ContractError("node " + std::to_string(id) +
                          " used after drop() during forward");
    return n.out.data();
  }

  Tensor<T>& grad_buf(int id) {
    Node& n = nodes_[size_t(id)];
    if (n.grad.numel() == 0) n.grad = Tensor<T>(n.out.shape());
    return n.grad;
  }

  bool wants_grad(int id) const { return nodes_[size_t(id)].needs_grad; }

  // Release a child's output right after a recompute consumed it. Only
  // values ensure_output itself restored are touched; anything still live
  // from the forward pass is left alone. A shared ancestor may be restored
  // twice within one step, trading repeat work for peak memory.
  void drop_recomputed(int id) {
    Node& c = nodes_[size_t(id)];
    if (c.recomputed) {
      c.out.release();
      c.recomputed = false;
    }
  }

  // Recompute a dropped output from the node's own inputs (recursively).
  // Children are released as soon as this node's kernel has consumed them,
  // so a deep chain never holds more than parent plus child at once.
  const Tensor<T>& ensure_output(int id) {
    Node& n = nodes_[size_t(id)];
    if (!n.out.released()) return n.out;
    n.out = Tensor<T>(n.out.shape());
    n.recomputed = true;
    switch (n.op) {
      case Op::Conv: {
        const Tensor<T>& x = ensure_output(n.a);
        kern::conv2d_forward(x.data(), x.shape(), n.w->value.data(),
                             n.w->value.shape().n, n.k, n.bias->value.data(),
                             n.out.data());
        drop_recomputed(n.a);
        break;
      }
      case Op::Bn: {
        const Tensor<T>& x = ensure_output(n.a);
        if (n.bn_train) {
          // reuse the recorded batch statistics
          std::vector<T> scale(size_t(x.shape().c)), shift(scale.size());
          for (int64_t c = 0; c < x.shape().c; ++c) {
            const double inv =
                1.0 / std::sqrt(double(n.bn_var[size_t(c)]) + double(n.eps));
            scale[size_t(c)] = T(double(n.gamma->value[c]) * inv);
            shift[size_t(c)] = T(double(n.beta->value[c]) -
                                 double(n.gamma->value[c]) * inv *
                                     double(n.bn_mean[size_t(c)]));
          }
          const int64_t C = x.shape().c, HW = x.shape().h * x.shape().w;
          for (int64_t nn = 0; nn < x.shape().n; ++nn)
            for (int64_t c = 0; c < C; ++c) {
              const T* xp = x.data() + (nn * C + c) * HW;
              T* yp = n.out.data() + (nn * C + c) * HW;
              for (int64_t i = 0; i < HW; ++i)
                yp[i] = scale[size_t(c)] * xp[i] + shift[size_t(c)];
            }
        } else {
          kern::batchnorm_infer_forward(
              x.data(), x.shape(), n.gamma->value.data(),
              n.beta->value.data(), n.rmean->value.data(),
              n.rvar->value.data(), n.eps, n.out.data());
        }
        drop_recomputed(n.a);
        break;
      }
      case Op::Relu: {
        const Tensor<T>& x = ensure_output(n.a);
        kern::relu_forward(x.data(), x.numel(), n.out.data(),
                           static_cast<uint64_t*>(nullptr));
        drop_recomputed(n.a);
        break;
      }
      case Op::Sigmoid: {
        const Tensor<T>& x = ensure_output(n.a);
        kern::sigmoid_forward(x.data(), x.numel(), n.out.data());
        drop_recomputed(n.a);
        break;
      }
      case Op::Upsample: {
        const Tensor<T>& x = ensure_output(n.a);
        kern::upsample2_forward(x.data(), x.shape(), n.out.data());
        drop_recomputed(n.a);
        break;
      }
      case Op::Mul: {
        const Tensor<T>& a = ensure_output(n.a);
        const Tensor<T>& b = ensure_output(n.b);
        kern::mul_forward(a.data(), b.data(), a.numel(), n.out.data());
        drop_recomputed(n.a);
        drop_recomputed(n.b);
        break;
      }
      case Op::Add: {
        const Tensor<T>& a = ensure_output(n.a);
        const Tensor<T>& b = ensure_output(n.b);
        kern::add_forward(a.data(), b.data(), a.numel(), n.out.data());
        drop_recomputed(n.a);
        drop_recomputed(n.b);
        break;
      }
      case Op::Concat: {
        int64_t c0 = 0;
        for (int src : n.srcs) {
          const Tensor<T>& x = ensure_output(src);
          kern::copy_channels_out(x.data(), x.shape(), n.out.data(),
                                  n.out.shape().c, c0);
          c0 += x.shape().c;
          drop_recomputed(src);
        }
        break;
      }
      case Op::Slice: {
        const Tensor<T>& x = ensure_output(n.a);
        kern::slice_channels(x.data(), x.shape(), n.c0, n.out.shape().c,
                             n.out.data());
        drop_recomputed(n.a);
        break;
      }
      default:
        throw ContractError("dropped output of this op kind cannot be "
                            "recomputed in backward");
    }
    return n.out;
  }

  void release_recomputed() {
    for (Node& n : nodes_)
      if (n.recomputed) {
        n.out.release();
        n.recomputed = false;
      }
  }

  void step_backward(int id) {
    Node& n = nodes_[size_t(id)];
    const Tensor<T>& gy = n.grad;
    switch (n.op) {
      case Op::Input:
        break; // leaf: gradient stays in n.grad for the caller
      case Op::Conv: {
        const Shape4 ys = n.out.shape();
        if (n.w->trainable) {
          const Tensor<T>& x = ensure_output(n.a);
          kern::conv2d_wgrad(x.data(), x.shape(), gy.data(), ys.c, n.k,
                             n.w->grad.data(),
                             n.bias->trainable ? n.bias->grad.data()
                                               : nullptr);
        } else if (n.bias->trainable) {
          kern::conv2d_wgrad(ensure_output(n.a).data(), shape_of(n.a),
                             gy.data(), ys.c, n.k, scratch_wgrad(n),
                             n.bias->grad.data());
        }
        if (wants_grad(n.a))
          kern::conv2d_dgrad(gy.data(), ys, n.w->value.data(),
                             shape_of(n.a).c, n.k, grad_buf(n.a).data());
        break;
      }
      case Op::Bn: {
        const Tensor<T>& x = ensure_output(n.a);
        Tensor<T>& gx = grad_buf(n.a);
        // per-channel scratch so non-trainable gamma/beta stay zero
        std::vector<T> dg(size_t(x.shape().c), T(0)),
            db(size_t(x.shape().c), T(0));
        if (n.bn_train)
          kern::batchnorm_train_backward(
              gy.data(), x.data(), x.shape(), n.gamma->value.data(),
              n.bn_mean.data(), n.bn_var.data(), n.eps, gx.data(), dg.data(),
              db.data());
        else
          kern::batchnorm_infer_backward(
              gy.data(), x.data(), x.shape(), n.gamma->value.data(),
              n.rmean->value.data(), n.rvar->value.data(), n.eps, gx.data(),
              dg.data(), db.data());
        if (n.gamma->trainable)
          for (int64_t c = 0; c < x.shape().c; ++c)
            n.gamma->grad[c] += dg[size_t(c)];
        if (n.beta->trainable)
          for (int64_t c = 0; c < x.shape().c; ++c)
            n.beta->grad[c] += db[size_t(c)];
        break;
      }
      case Op::Relu:
        kern::relu_backward(gy.data(), gy.numel(), n.mask.data(),
                            grad_buf(n.a).data());
        break;
      case Op::Sigmoid: {
        const Tensor<T>& y = ensure_output(id);
        kern::sigmoid_backward(gy.data(), y.data(), gy.numel(),
                               grad_buf(n.a).data());
        break;
      }
      case Op::Pool:
        kern::maxpool2_backward(gy.data(), n.out.shape(), n.idx.data(),
                                grad_buf(n.a).data());
        break;
      case Op::Upsample:
        kern::upsample2_backward(gy.data(), n.out.shape(),
                                 grad_buf(n.a).data());
        break;
      case Op::Mul: {
        if (wants_grad(n.a)) {
          const Tensor<T>& b = ensure_output(n.b);
          kern::accumulate(gy.data(), b.data(), gy.numel(),
                           grad_buf(n.a).data());
        }
        if (wants_grad(n.b)) {
          const Tensor<T>& a = ensure_output(n.a);
          kern::accumulate(gy.data(), a.data(), gy.numel(),
                           grad_buf(n.b).data());
        }
        break;
      }
      case Op::Add:
        if (wants_grad(n.a))
          kern::accumulate(gy.data(), static_cast<const T*>(nullptr),
                           gy.numel(), grad_buf(n.a).data());
        if (wants_grad(n.b))
          kern::accumulate(gy.data(), static_cast<const T*>(nullptr),
                           gy.numel(), grad_buf(n.b).data());
        break;
      case Op::Concat: {
        int64_t c0 = 0;
        for (int src : n.srcs) {
          const Shape4 ss = shape_of(src);
          if (wants_grad(src))
            kern::accum_channels_in(gy.data(), n.out.shape().c, c0, ss,
                                    grad_buf(src).data());
          c0 += ss.c;
        }
        break;
      }
      case Op::Slice:
        if (wants_grad(n.a))
          kern::accum_channels_out(gy.data(), n.out.shape(),
                                   grad_buf(n.a).data(), shape_of(n.a).c,
                                   n.c0);
        break;
      case Op::Sum: {
        const T g = gy[0];
        Tensor<T>& gx = grad_buf(n.a);
        T* p = gx.data();
        const int64_t m = gx.numel();
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < m; ++i) p[i] += g;
        break;
      }
      case Op::Dice: {
        const T g = gy[0];
        Tensor<T>& gx = grad_buf(n.a);
        const T* t = n.target.data();
        T* p = gx.data();
        const int64_t m = gx.numel();
        const double num = 2.0 * n.spt + double(n.eps);
        const double den = n.sp + n.st + double(n.eps);
        const double inv2 = 1.0 / (den * den);
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < m; ++i) {
          const double ti = double(t[i]);
          p[i] += g * T(-(2.0 * ti * den - num) * inv2);
        }
        break;
      }
      case Op::Tversky: {
        const T g = gy[0];
        Tensor<T>& gx = grad_buf(n.a);
        const T* t = n.target.data();
        T* p = gx.data();
        const int64_t m = gx.numel();
        const double al = double(n.t_alpha), be = double(n.t_beta);
        const double num = n.spt + double(n.eps);
        const double den = n.spt + al * (n.sp - n.spt) +
                           be * (n.st - n.spt) + double(n.eps);
        const double inv2 = 1.0 / (den * den);
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < m; ++i) {
          const double ti = double(t[i]);
          const double dden = ti + al * (1.0 - ti) - be * ti;
          p[i] += g * T(-(ti * den - num * dden) * inv2);
        }
        break;
      }
    }
  }

  T* scratch_wgrad(Node& n) {
    scratch_.assign(size_t(n.w->value.numel()), T(0));
    return scratch_.data();
  }

  Mode mode_;
  bool recording_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  std::vector<T> scratch_;
};

} // namespace tseg
