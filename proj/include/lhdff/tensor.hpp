#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "lhdff/common.hpp"

namespace lhdff {

namespace detail {

inline uint64_t next_tape_id() {
  static std::atomic<uint64_t> counter{1};
  return counter.fetch_add(1);
}

template <class S>
struct TensorNode {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated lazily, same extent as value
  bool requires_grad = false;
  uint64_t tape_id = 0;  // nonzero: produced by an op recorded on that tape

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

}  // namespace detail

// Value-semantics handle to a shared node. Tensors are the carrier of every
// model quantity; contents are immutable after construction except through
// optimizer steps (mutable_data) and gradient accumulation.
template <class S>
class TensorT {
 public:
  using Node = detail::TensorNode<S>;

  TensorT() = default;

  TensorT(Shape shape, std::vector<S> data) : node_(std::make_shared<Node>()) {
    for (size_t d : shape)
      require<ShapeError>(d > 0, "tensor extents must be positive, got " + shape_str(shape));
    require<ShapeError>(numel(shape) == data.size(),
                        "data length " + std::to_string(data.size()) + " does not match shape " +
                            shape_str(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(data);
  }

  static TensorT zeros(Shape shape) {
    size_t n = numel(shape);
    return TensorT(std::move(shape), std::vector<S>(n, S(0)));
  }

  static TensorT full(Shape shape, S v) {
    size_t n = numel(shape);
    return TensorT(std::move(shape), std::vector<S>(n, v));
  }

  static TensorT scalar(S v) { return TensorT(Shape{1}, std::vector<S>{v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  size_t rank() const { return node_->shape.size(); }
  size_t dim(size_t i) const { return node_->shape.at(i); }
  size_t size() const { return node_->value.size(); }

  std::span<const S> data() const { return node_->value; }
  std::span<S> mutable_data() { return node_->value; }

  S item() const {
    require<ShapeError>(size() == 1, "item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  TensorT& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }
  std::span<const S> grad() const {
    require<Error>(has_grad(), "gradient not populated");
    return node_->grad;
  }
  std::span<S> grad_buffer() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  bool all_finite() const {
    for (S v : node_->value)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Ordered record of the differentiable ops executed while the tape was the
// active one. Execution order is a topological order of the data-flow graph,
// so replaying the records backwards visits every node exactly once with its
// output gradient complete. A tape is scoped: constructing one activates it
// for the current thread, destruction restores the previous tape.
template <class S>
class GradientTapeT {
 public:
  GradientTapeT() : id_(detail::next_tape_id()), prev_(current_) { current_ = this; }
  ~GradientTapeT() {
    clear();
    current_ = prev_;
  }

  GradientTapeT(const GradientTapeT&) = delete;
  GradientTapeT& operator=(const GradientTapeT&) = delete;

  // Recording is suspended while the tape replays its own records.
  static GradientTapeT* current() {
    return (current_ && current_->replaying_) ? nullptr : current_;
  }

  uint64_t id() const { return id_; }
  size_t size() const { return records_.size(); }

  void record(std::function<void()> backward_fn) { records_.push_back(std::move(backward_fn)); }

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients through every
  // recorded op. Gradients add across multiple uses of a tensor.
  void backward(const TensorT<S>& loss) {
    require<Error>(!consumed_, "stale tape: backward() already ran; re-run the forward pass");
    require<ShapeError>(loss.size() == 1, "backward() expects a scalar loss");
    require<Error>(loss.node()->tape_id == id_,
                   "loss was not produced under this tape; re-run the forward pass");
    loss.node()->ensure_grad();
    loss.node()->grad[0] += S(1);
    replaying_ = true;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
    replaying_ = false;
    consumed_ = true;
  }

  // Frees every recorded reference and makes the tape reusable.
  void clear() {
    records_.clear();
    consumed_ = false;
  }

 private:
  uint64_t id_;
  GradientTapeT* prev_ = nullptr;
  std::vector<std::function<void()>> records_;
  bool consumed_ = false;
  bool replaying_ = false;

  static thread_local GradientTapeT* current_;
};

template <class S>
thread_local GradientTapeT<S>* GradientTapeT<S>::current_ = nullptr;

using Tensor = TensorT<float>;
using GradientTape = GradientTapeT<float>;

namespace detail {

// An op participates in the tape when some input is a trainable leaf or was
// itself produced under the currently active tape.
template <class S>
inline bool tracked(const GradientTapeT<S>* tape, const TensorT<S>& t) {
  return t.requires_grad() || (tape && t.node()->tape_id == tape->id());
}

template <class S, class... Ts>
inline bool any_tracked(const GradientTapeT<S>* tape, const Ts&... ts) {
  return (tracked(tape, ts) || ...);
}

template <class S>
inline void mark_output(GradientTapeT<S>* tape, TensorT<S>& out) {
  out.node()->tape_id = tape->id();
}

}  // namespace detail

}  // namespace lhdff
