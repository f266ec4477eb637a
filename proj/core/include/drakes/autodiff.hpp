#pragma once

// Reverse-mode automatic differentiation over dense row-major arrays.
//
// A Var is a handle to a graph node. Leaves that require gradients are
// created through a Tape; every primitive applied to an input that requires
// gradients records itself on that tape. Calling Tape::backward replays the
// recorded operations in reverse creation order, which is a valid reverse
// topological order because a node can only consume nodes created before it.
//
// Constants (created with ad::constant, or produced while a tape is paused)
// never touch a tape.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace drakes::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Array {
  Shape shape;
  std::vector<double> values;

  Array() = default;
  explicit Array(Shape s, double fill = 0.0);
  Array(Shape s, std::vector<double> v);

  static Array scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  double item() const;
  bool all_finite() const;
};

class Tape;

struct Node {
  Array value;
  Array grad;  // empty until something flows into it
  bool requires_grad = false;
  Tape* tape = nullptr;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  // Adds `g` into the gradient buffer, allocating it on first use.
  void accumulate(std::span<const double> g);
  Array& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Array& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t axis) const { return node_->value.shape.at(axis); }
  double item() const { return node_->value.item(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& handle() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Gradients of the leaves reached by one backward pass.
class Gradients {
 public:
  // Zero array of the leaf's shape when the leaf did not contribute.
  Array of(const Var& leaf) const;
  bool contains(const Var& leaf) const { return grads_.count(leaf.node()) != 0; }

 private:
  friend class Tape;
  std::unordered_map<const Node*, Array> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var variable(Array value);

  // Reverse pass from a scalar loss. The tape is consumed.
  Gradients backward(const Var& loss);

  bool recording() const { return recording_; }
  std::size_t size() const { return ops_.size(); }

  // While alive, primitives on this tape produce constants.
  class Pause {
   public:
    explicit Pause(Tape& tape) : tape_(tape), previous_(tape.recording_) { tape_.recording_ = false; }
    ~Pause() { tape_.recording_ = previous_; }
    Pause(const Pause&) = delete;
    Pause& operator=(const Pause&) = delete;

   private:
    Tape& tape_;
    bool previous_;
  };

  void record(const std::shared_ptr<Node>& node) { ops_.push_back(node); }

 private:
  std::vector<std::shared_ptr<Node>> ops_;
  std::vector<std::shared_ptr<Node>> leaves_;
  bool recording_ = true;
  bool consumed_ = false;
};

Var constant(Array value);
Var constant_scalar(double v);
Var detach(const Var& x);

// Builds a node from `value` and records it when any input is live on a
// recording tape. `backward` receives the node; its `grad` holds dL/d(out).
// Exposed so that modules can define fused primitives.
Var make_op(Array value, std::initializer_list<Var> inputs, std::function<void(Node&)> backward);

// Elementwise binary ops with right-aligned broadcasting.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);

Var scale(const Var& x, double s);
Var add_scalar(const Var& x, double s);
Var neg(const Var& x);

Var exp(const Var& x);
Var log(const Var& x);
Var tanh(const Var& x);

// Softmax over the last axis with max-subtraction. Entries equal to -inf
// receive probability zero.
Var softmax(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);
Var sum_last(const Var& x);  // keeps the axis with size 1

// (m,k)x(k,n), (b,m,k)x(k,n), (m,k)x(b,k,n), (b,m,k)x(b,k,n).
Var matmul(const Var& a, const Var& b);

Var concat_last(const std::vector<Var>& parts);
Var slice_last(const Var& x, std::size_t begin, std::size_t end);
Var index_select(const Var& x, const std::vector<std::size_t>& rows);  // along axis 0
Var reshape(const Var& x, Shape shape);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }

}  // namespace drakes::ad
