#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lpie/kernels.hpp"
#include "lpie/tensor.hpp"

// Reverse-mode differentiation over an explicit operation tape.
//
// Every op appends one node to the tape in creation order, which is a valid
// topological order; backward() walks that list once in reverse. Leaf grads
// accumulate across backward() calls until zero_grad(); interior grads are
// rebuilt on each call.
//
// A tape constructed with recording = false keeps no history: ops only compute
// values and intermediates are released as soon as the caller drops them.
namespace lpie::ad {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::string label;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Tensor<T>&)> backward;

  void accumulate(const Tensor<T>& g);
  Tensor<T>& grad_buffer();
};

template <typename T>
class Tape;

template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::shared_ptr<Node<T>> node) : tape_(tape), node_(std::move(node)) {}

  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  // Gradient w.r.t. this value; a zero tensor if nothing flowed here.
  Tensor<T> grad() const;
  bool requires_grad() const { return node_->requires_grad; }
  bool valid() const { return node_ != nullptr; }

  Tape<T>& tape() const { return *tape_; }
  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  Tape<T>* tape_ = nullptr;
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  // Differentiable input. Only tracked when recording.
  Var<T> leaf(Tensor<T> value, std::string label = {});
  Var<T> constant(Tensor<T> value);

  // Registers an op result. `backward` receives the node's output grad and
  // must accumulate into the parents that require grad.
  Var<T> make(Tensor<T> value, const char* op, std::span<const Var<T>> parents,
              std::function<void(const Tensor<T>&)> backward);

  // root must be 1x1x1x1.
  void backward(const Var<T>& root);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }
  // First recorded node (leaf or op) holding a NaN/Inf, for diagnostics.
  const Node<T>* first_non_finite() const;

  // Branch log: non-smooth ops hash their branch decisions here so the
  // gradient checker can detect perturbations that cross a kink.
  void set_branch_logging(bool on) {
    log_branches_ = on;
    branch_hash_ = kHashSeed;
  }
  bool logging_branches() const { return log_branches_; }
  void log_branch(std::uint64_t v) {
    std::uint64_t z = branch_hash_ + v + 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    branch_hash_ = z ^ (z >> 31);
  }
  std::uint64_t branch_hash() const { return branch_hash_; }

 private:
  static constexpr std::uint64_t kHashSeed = 0xcbf29ce484222325ULL;
  bool recording_;
  bool log_branches_ = false;
  std::uint64_t branch_hash_ = kHashSeed;
  std::vector<std::shared_ptr<Node<T>>> nodes_;
};

// ---- ops ----------------------------------------------------------------

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const std::optional<Var<T>>& bias,
              const kernels::ConvParams& params = {});
template <typename T>
Var<T> maxpool2x2(const Var<T>& x);
template <typename T>
Var<T> upsample2x(const Var<T>& x);
template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> sigmoid(const Var<T>& x);

// Elementwise with broadcasting: every dimension of the operands must match
// or be 1 on one side, e.g. (n,c,h,w) against (n,c,1,1) or (n,1,h,w).
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scalar_mul(const Var<T>& x, T s);

// Reductions over h,w -> (n,c,1,1).
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);
template <typename T>
Var<T> global_max_pool(const Var<T>& x);
// Reductions over c -> (n,1,h,w).
template <typename T>
Var<T> channel_mean(const Var<T>& x);
template <typename T>
Var<T> channel_max(const Var<T>& x);

template <typename T>
Var<T> clip(const Var<T>& x, T lo, T hi);
// Sum / mean of all elements -> (1,1,1,1).
template <typename T>
Var<T> sum(const Var<T>& x);
template <typename T>
Var<T> mean(const Var<T>& x);

// Shape of a broadcast between a and b, or ShapeError.
Shape broadcast_shape(const Shape& a, const Shape& b);

}  // namespace lpie::ad
