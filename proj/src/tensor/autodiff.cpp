#include "lpie/autodiff.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <limits>

namespace lpie::ad {

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
  if (grad.empty() && value.numel() > 0) grad = Tensor<T>(value.shape());
  return grad;
}

template <typename T>
void Node<T>::accumulate(const Tensor<T>& g) {
  if (g.shape() != value.shape()) {
    throw ShapeError(std::string("gradient shape ") + g.shape().str() + " does not match value " + value.shape().str() +
                     " in op " + op);
  }
  Tensor<T>& buf = grad_buffer();
  auto dst = buf.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
Tensor<T> Var<T>::grad() const {
  if (node_->grad.empty()) return Tensor<T>(node_->value.shape());
  return node_->grad;
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, std::string label) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = recording_;
  node->label = std::move(label);
  if (recording_) nodes_.push_back(node);
  return Var<T>(this, std::move(node));
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = "constant";
  return Var<T>(this, std::move(node));
}

template <typename T>
Var<T> Tape<T>::make(Tensor<T> value, const char* op, std::span<const Var<T>> parents,
                     std::function<void(const Tensor<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  if (recording_) {
    const bool needs = std::any_of(parents.begin(), parents.end(), [](const Var<T>& p) { return p.requires_grad(); });
    if (needs) {
      node->requires_grad = true;
      for (const auto& p : parents) node->parents.push_back(p.node_ptr());
      node->backward = std::move(backward);
    }
    nodes_.push_back(node);
  }
  return Var<T>(this, std::move(node));
}

template <typename T>
void Tape<T>::backward(const Var<T>& root) {
  if (root.value().numel() != 1) {
    throw ShapeError("backward: root must be scalar (1x1x1x1), got " + root.shape().str());
  }
  if (!recording_) throw std::logic_error("backward: tape was not recording");
  for (auto& n : nodes_) {
    if (n->backward) n->grad = Tensor<T>();
  }
  Node<T>& r = root.node();
  if (!r.requires_grad) return;
  r.grad_buffer()[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node<T>& n = **it;
    if (n.backward && !n.grad.empty()) n.backward(n.grad);
  }
}

template <typename T>
void Tape<T>::zero_grad() {
  for (auto& n : nodes_) n->grad = Tensor<T>();
}

template <typename T>
const Node<T>* Tape<T>::first_non_finite() const {
  for (const auto& n : nodes_) {
    if (!n->value.all_finite()) return n.get();
  }
  return nullptr;
}

// ---- helpers ------------------------------------------------------------

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::array<std::size_t, 4> da{a.n, a.c, a.h, a.w}, db{b.n, b.c, b.h, b.w};
  static constexpr std::array<const char*, 4> names{"n", "c", "h", "w"};
  std::array<std::size_t, 4> out{};
  for (int i = 0; i < 4; ++i) {
    if (da[i] == db[i] || db[i] == 1) {
      out[i] = da[i];
    } else if (da[i] == 1) {
      out[i] = db[i];
    } else {
      throw ShapeError(std::string("incompatible broadcast in dimension ") + names[i] + ": " + a.str() + " vs " +
                       b.str());
    }
  }
  return {out[0], out[1], out[2], out[3]};
}

namespace {

struct Strides {
  std::size_t n, c, h, w;
};

Strides broadcast_strides(const Shape& s) {
  return {s.n == 1 ? 0 : s.c * s.h * s.w, s.c == 1 ? 0 : s.h * s.w, s.h == 1 ? 0 : s.w, s.w == 1 ? std::size_t{0} : 1};
}

// Calls f(out_index, a_index, b_index) over the broadcast shape.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  const Strides sa = broadcast_strides(a), sb = broadcast_strides(b);
  std::size_t o = 0;
  for (std::size_t n = 0; n < out.n; ++n) {
    for (std::size_t c = 0; c < out.c; ++c) {
      for (std::size_t y = 0; y < out.h; ++y) {
        const std::size_t ab = n * sa.n + c * sa.c + y * sa.h;
        const std::size_t bb = n * sb.n + c * sb.c + y * sb.h;
        for (std::size_t x = 0; x < out.w; ++x, ++o) f(o, ab + x * sa.w, bb + x * sb.w);
      }
    }
  }
}

// Sums `g` (shape `full`) down to `target` along broadcast dimensions.
template <typename T>
Tensor<T> reduce_to(const Tensor<T>& g, const Shape& target) {
  if (g.shape() == target) return g;
  Tensor<T> out(target);
  const Strides st = broadcast_strides(target);
  const Shape& s = g.shape();
  std::size_t o = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < s.h; ++y) {
        const std::size_t base = n * st.n + c * st.c + y * st.h;
        for (std::size_t x = 0; x < s.w; ++x, ++o) out[base + x * st.w] += g[o];
      }
    }
  }
  return out;
}

template <typename T>
std::array<Var<T>, 1> one(const Var<T>& a) {
  return {a};
}
template <typename T>
std::array<Var<T>, 2> two(const Var<T>& a, const Var<T>& b) {
  return {a, b};
}

template <typename T>
void check_same_tape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (&a.tape() != &b.tape()) throw std::logic_error(std::string(op) + ": operands live on different tapes");
}

}  // namespace

// ---- ops ----------------------------------------------------------------

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const std::optional<Var<T>>& bias,
              const kernels::ConvParams& params) {
  check_same_tape(x, weight, "conv2d");
  const kernels::ConvGeometry g = kernels::conv_geometry(x.shape(), weight.shape(), params);
  Tensor<T> out = kernels::conv2d(x.value(), weight.value(), bias ? &bias->value() : nullptr, params);
  std::vector<Var<T>> parents{x, weight};
  if (bias) parents.push_back(*bias);
  Node<T>* xn = &x.node();
  Node<T>* wn = &weight.node();
  Node<T>* bn = bias ? &bias->node() : nullptr;
  return x.tape().make(std::move(out), "conv2d", parents, [xn, wn, bn, g](const Tensor<T>& go) {
    if (xn->requires_grad) xn->accumulate(kernels::conv2d_grad_input(go, wn->value, g));
    if (wn->requires_grad) wn->accumulate(kernels::conv2d_grad_weight(go, xn->value, g));
    if (bn != nullptr && bn->requires_grad) {
      Tensor<T> gb = kernels::conv2d_grad_bias(go);
      bn->accumulate(Tensor<T>(bn->value.shape(), std::move(gb.storage())));
    }
  });
}

template <typename T>
Var<T> maxpool2x2(const Var<T>& x) {
  auto argmax = std::make_shared<std::vector<std::uint8_t>>();
  Tensor<T> out = kernels::maxpool2x2(x.value(), argmax.get());
  Tape<T>& tape = x.tape();
  if (tape.logging_branches()) {
    for (auto a : *argmax) tape.log_branch(a);
  }
  Node<T>* xn = &x.node();
  const Shape in_shape = x.shape();
  return tape.make(std::move(out), "maxpool2x2", one(x), [xn, argmax, in_shape](const Tensor<T>& go) {
    xn->accumulate(kernels::maxpool2x2_backward(go, *argmax, in_shape));
  });
}

template <typename T>
Var<T> upsample2x(const Var<T>& x) {
  Node<T>* xn = &x.node();
  const Shape in_shape = x.shape();
  return x.tape().make(kernels::upsample2x(x.value()), "upsample2x", one(x), [xn, in_shape](const Tensor<T>& go) {
    xn->accumulate(kernels::upsample2x_backward(go, in_shape));
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  check_same_tape(a, b, "concat_channels");
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n) throw ShapeError("concat_channels: batch mismatch n=" + std::to_string(sa.n) + " vs " + std::to_string(sb.n));
  if (sa.h != sb.h) throw ShapeError("concat_channels: height mismatch h=" + std::to_string(sa.h) + " vs " + std::to_string(sb.h));
  if (sa.w != sb.w) throw ShapeError("concat_channels: width mismatch w=" + std::to_string(sa.w) + " vs " + std::to_string(sb.w));
  Tensor<T> out({sa.n, sa.c + sb.c, sa.h, sa.w});
  for (std::size_t n = 0; n < sa.n; ++n) {
    std::copy_n(a.value().plane(n, 0), sa.c * sa.plane(), out.plane(n, 0));
    std::copy_n(b.value().plane(n, 0), sb.c * sb.plane(), out.plane(n, sa.c));
  }
  Node<T>* an = &a.node();
  Node<T>* bn = &b.node();
  return a.tape().make(std::move(out), "concat_channels", two(a, b), [an, bn, sa, sb](const Tensor<T>& go) {
    if (an->requires_grad) an->accumulate(slice_channels(go, 0, sa.c));
    if (bn->requires_grad) bn->accumulate(slice_channels(go, sa.c, sb.c));
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const auto in = x.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] > T(0) ? in[i] : T(0);
  Tape<T>& tape = x.tape();
  if (tape.logging_branches()) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < in.size(); ++i) {
      word = (word << 1) | (in[i] > T(0) ? 1u : 0u);
      if (i % 64 == 63) tape.log_branch(word), word = 0;
    }
    tape.log_branch(word);
  }
  Node<T>* xn = &x.node();
  return tape.make(std::move(out), "relu", one(x), [xn](const Tensor<T>& go) {
    Tensor<T> g(go.shape());
    const auto in = xn->value.data();
    for (std::size_t i = 0; i < in.size(); ++i) g[i] = in[i] > T(0) ? go[i] : T(0);
    xn->accumulate(g);
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const auto in = x.value().data();
  for (std::size_t i = 0; i < in.size(); ++i) {
    // Split by sign so exp never overflows.
    const T v = in[i];
    if (v >= 0) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  auto y = std::make_shared<Tensor<T>>(out);
  Node<T>* xn = &x.node();
  return x.tape().make(std::move(out), "sigmoid", one(x), [xn, y](const Tensor<T>& go) {
    Tensor<T> g(go.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] = go[i] * (*y)[i] * (T(1) - (*y)[i]);
    xn->accumulate(g);
  });
}

namespace {

template <typename T, typename F, typename GA, typename GB>
Var<T> binary(const Var<T>& a, const Var<T>& b, const char* op, F f, GA ga, GB gb) {
  check_same_tape(a, b, op);
  const Shape sa = a.shape(), sb = b.shape();
  const Shape so = broadcast_shape(sa, sb);
  Tensor<T> out(so);
  const auto av = a.value().data();
  const auto bv = b.value().data();
  for_each_broadcast(so, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = f(av[i], bv[j]); });
  Node<T>* an = &a.node();
  Node<T>* bn = &b.node();
  return a.tape().make(std::move(out), op, two(a, b), [an, bn, sa, sb, so, ga, gb](const Tensor<T>& go) {
    const auto av = an->value.data();
    const auto bv = bn->value.data();
    if (an->requires_grad) {
      Tensor<T> g(so);
      for_each_broadcast(so, sa, sb,
                         [&](std::size_t o, std::size_t i, std::size_t j) { g[o] = ga(go[o], av[i], bv[j]); });
      an->accumulate(reduce_to(g, sa));
    }
    if (bn->requires_grad) {
      Tensor<T> g(so);
      for_each_broadcast(so, sa, sb,
                         [&](std::size_t o, std::size_t i, std::size_t j) { g[o] = gb(go[o], av[i], bv[j]); });
      bn->accumulate(reduce_to(g, sb));
    }
  });
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T g, T, T) { return g; }, [](T g, T, T) { return g; });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T g, T, T) { return g; }, [](T g, T, T) { return -g; });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; }, [](T g, T x, T) { return g * x; });
}

template <typename T>
Var<T> scalar_mul(const Var<T>& x, T s) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x.value()[i] * s;
  Node<T>* xn = &x.node();
  return x.tape().make(std::move(out), "scalar_mul", one(x), [xn, s](const Tensor<T>& go) {
    Tensor<T> g(go.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] = go[i] * s;
    xn->accumulate(g);
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape s = x.shape();
  if (s.plane() == 0) throw ShapeError("global_avg_pool: empty spatial extent");
  Tensor<T> out({s.n, s.c, 1, 1});
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const T* src = x.value().data().data() + p * s.plane();
    T acc = 0;
    for (std::size_t i = 0; i < s.plane(); ++i) acc += src[i];
    out[p] = acc / static_cast<T>(s.plane());
  }
  Node<T>* xn = &x.node();
  return x.tape().make(std::move(out), "global_avg_pool", one(x), [xn, s](const Tensor<T>& go) {
    Tensor<T> g(s);
    const T inv = T(1) / static_cast<T>(s.plane());
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
      std::fill_n(g.data().data() + p * s.plane(), s.plane(), go[p] * inv);
    }
    xn->accumulate(g);
  });
}

template <typename T>
Var<T> global_max_pool(const Var<T>& x) {
  const Shape s = x.shape();
  if (s.plane() == 0) throw ShapeError("global_max_pool: empty spatial extent");
  Tensor<T> out({s.n, s.c, 1, 1});
  auto where = std::make_shared<std::vector<std::size_t>>(s.n * s.c);
  Tape<T>& tape = x.tape();
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const T* src = x.value().data().data() + p * s.plane();
    std::size_t best = 0;
    for (std::size_t i = 1; i < s.plane(); ++i) {
      if (src[i] > src[best]) best = i;
    }
    out[p] = src[best];
    (*where)[p] = best;
    if (tape.logging_branches()) tape.log_branch(best);
  }
  Node<T>* xn = &x.node();
  return tape.make(std::move(out), "global_max_pool", one(x), [xn, s, where](const Tensor<T>& go) {
    Tensor<T> g(s);
    for (std::size_t p = 0; p < s.n * s.c; ++p) g[p * s.plane() + (*where)[p]] = go[p];
    xn->accumulate(g);
  });
}

template <typename T>
Var<T> channel_mean(const Var<T>& x) {
  const Shape s = x.shape();
  if (s.c == 0) throw ShapeError("channel_mean: no channels");
  Tensor<T> out({s.n, 1, s.h, s.w});
  const T inv = T(1) / static_cast<T>(s.c);
  for (std::size_t n = 0; n < s.n; ++n) {
    T* dst = out.plane(n, 0);
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = x.value().plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) dst[i] += src[i];
    }
    for (std::size_t i = 0; i < s.plane(); ++i) dst[i] *= inv;
  }
  Node<T>* xn = &x.node();
  return x.tape().make(std::move(out), "channel_mean", one(x), [xn, s, inv](const Tensor<T>& go) {
    Tensor<T> g(s);
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* src = go.plane(n, 0);
      for (std::size_t c = 0; c < s.c; ++c) {
        T* dst = g.plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) dst[i] = src[i] * inv;
      }
    }
    xn->accumulate(g);
  });
}

template <typename T>
Var<T> channel_max(const Var<T>& x) {
  const Shape s = x.shape();
  if (s.c == 0) throw ShapeError("channel_max: no channels");
  Tensor<T> out({s.n, 1, s.h, s.w});
  auto which = std::make_shared<std::vector<std::uint32_t>>(s.n * s.plane(), 0);
  for (std::size_t n = 0; n < s.n; ++n) {
    T* dst = out.plane(n, 0);
    std::uint32_t* wi = which->data() + n * s.plane();
    std::copy_n(x.value().plane(n, 0), s.plane(), dst);
    for (std::size_t c = 1; c < s.c; ++c) {
      const T* src = x.value().plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        if (src[i] > dst[i]) {
          dst[i] = src[i];
          wi[i] = static_cast<std::uint32_t>(c);
        }
      }
    }
  }
  Tape<T>& tape = x.tape();
  if (tape.logging_branches()) {
    for (auto c : *which) tape.log_branch(c);
  }
  Node<T>* xn = &x.node();
  return tape.make(std::move(out), "channel_max", one(x), [xn, s, which](const Tensor<T>& go) {
    Tensor<T> g(s);
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* src = go.plane(n, 0);
      const std::uint32_t* wi = which->data() + n * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) g.plane(n, wi[i])[i] = src[i];
    }
    xn->accumulate(g);
  });
}

template <typename T>
Var<T> clip(const Var<T>& x, T lo, T hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clip: lo > hi");
  Tensor<T> out(x.shape());
  const auto in = x.value().data();
  Tape<T>& tape = x.tape();
  std::uint64_t word = 0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = std::clamp(in[i], lo, hi);
    if (tape.logging_branches()) {
      const std::uint64_t region = in[i] < lo ? 0 : (in[i] > hi ? 2 : 1);
      word = word * 3 + region;
      if (i % 32 == 31) tape.log_branch(word), word = 0;
    }
  }
  if (tape.logging_branches()) tape.log_branch(word);
  Node<T>* xn = &x.node();
  return tape.make(std::move(out), "clip", one(x), [xn, lo, hi](const Tensor<T>& go) {
    Tensor<T> g(go.shape());
    const auto in = xn->value.data();
    for (std::size_t i = 0; i < in.size(); ++i) g[i] = (in[i] >= lo && in[i] <= hi) ? go[i] : T(0);
    xn->accumulate(g);
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  Node<T>* xn = &x.node();
  const Shape s = x.shape();
  return x.tape().make(Tensor<T>({1, 1, 1, 1}, acc), "sum", one(x), [xn, s](const Tensor<T>& go) {
    xn->accumulate(Tensor<T>(s, go[0]));
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  const std::size_t count = x.value().numel();
  if (count == 0) throw ShapeError("mean: empty tensor");
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  Node<T>* xn = &x.node();
  const Shape s = x.shape();
  return x.tape().make(Tensor<T>({1, 1, 1, 1}, acc / static_cast<T>(count)), "mean", one(x),
                       [xn, s, count](const Tensor<T>& go) {
                         xn->accumulate(Tensor<T>(s, go[0] / static_cast<T>(count)));
                       });
}

#define LPIE_INSTANTIATE(T)                                                                          \
  template struct Node<T>;                                                                           \
  template class Var<T>;                                                                             \
  template class Tape<T>;                                                                            \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&,                 \
                         const kernels::ConvParams&);                                                \
  template Var<T> maxpool2x2(const Var<T>&);                                                         \
  template Var<T> upsample2x(const Var<T>&);                                                         \
  template Var<T> concat_channels(const Var<T>&, const Var<T>&);                                     \
  template Var<T> relu(const Var<T>&);                                                               \
  template Var<T> sigmoid(const Var<T>&);                                                            \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> scalar_mul(const Var<T>&, T);                                                      \
  template Var<T> global_avg_pool(const Var<T>&);                                                    \
  template Var<T> global_max_pool(const Var<T>&);                                                    \
  template Var<T> channel_mean(const Var<T>&);                                                       \
  template Var<T> channel_max(const Var<T>&);                                                        \
  template Var<T> clip(const Var<T>&, T, T);                                                         \
  template Var<T> sum(const Var<T>&);                                                                \
  template Var<T> mean(const Var<T>&);

LPIE_INSTANTIATE(float)
LPIE_INSTANTIATE(double)
#undef LPIE_INSTANTIATE

}  // namespace lpie::ad
