#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

namespace jfbctrl {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid until the node is rewound away.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
};

enum class Op : std::uint8_t {
  Leaf,
  Affine,  // c0 * x + c1, elementwise constants
  Add,
  Sub,
  Mul,     // elementwise; either side may be scalar
  MatMul,  // optional transposes; rank-1 operands promoted to row/column
  Tanh,
  Sin,
  Cos,
  Exp,
  Log,
  Pow,  // x^q, constant exponent q
  Sum,
  Concat,
  Slice,
  Clamp,  // componentwise box; pass-through subgradient on the closed box
};

const char* op_name(Op op);

struct Node {
  Tensor value;
  Op op = Op::Leaf;
  std::vector<std::uint32_t> parents;
  double a0 = 0.0, a1 = 0.0;        // affine coefficients / pow exponent
  std::uint32_t i0 = 0, i1 = 0;     // slice offset+length / matmul transpose flags
  Tensor lo, hi;                    // clamp bounds (scalar or value-shaped)
  std::int32_t scope = -1;          // operator-application scope, -1 outside
};

struct TapeStats {
  std::size_t node_count = 0;       // nodes recorded over the tape's lifetime
  std::size_t live_node_count = 0;  // nodes currently held
  std::size_t peak_node_count = 0;  // maximum simultaneous nodes
  std::size_t vjp_count = 0;        // operator applications traversed by reverse sweeps
};

struct VjpResult {
  // Gradients for requested leaves; leaves the sweep never reached hold zeros.
  std::unordered_map<std::uint32_t, Tensor> leaf_grads;
  // Accumulated cotangents at observed interior nodes (sweep continues past them).
  std::unordered_map<std::uint32_t, Tensor> observed;
  // Per-scope contributions into the requested leaves, keyed by scope id.
  std::unordered_map<std::int32_t, std::unordered_map<std::uint32_t, Tensor>> per_scope;
  std::size_t scopes_traversed = 0;

  const Tensor& grad(Var v) const;
};

// Reverse-mode tape over dense tensors. Eager evaluation: every operation
// computes its value immediately and records one node. One tape per rollout.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value) { return leaf(std::move(value)); }
  Var constant(double value) { return leaf(Tensor::scalar(value)); }

  // Same value, no parents: gradients do not flow past the result.
  Var detach(Var x);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Node& node(std::uint32_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  // Checkpointing for fixed-point iterations that must not retain graph:
  // rewind drops every node (and scope) recorded after the mark.
  std::size_t mark() const { return nodes_.size(); }
  void rewind(std::size_t mark);

  // Brackets one application of the feedback operator for work accounting.
  void begin_operator_scope();
  void end_operator_scope();
  std::size_t scope_count() const { return scopes_.size(); }

  // Reverse sweep from root seeded with cotangent. Stops at requested leaves,
  // reports accumulated cotangents at observed nodes, counts traversed scopes.
  VjpResult vjp(Var root, const Tensor& cotangent, std::span<const Var> leaves,
                std::span<const Var> observed = {}, bool attribute_scopes = false);

  void close() { open_ = false; }
  bool is_open() const { return open_; }

  const TapeStats& stats() const { return stats_; }

  // Primitive recording; exposed through the free functions below.
  Var record(Node n);

 private:
  friend struct Var;
  std::vector<Node> nodes_;
  struct ScopeRec {
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    bool closed = false;
  };
  std::vector<ScopeRec> scopes_;
  std::int32_t open_scope_ = -1;
  bool open_ = true;
  TapeStats stats_;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var affine(Var x, double scale, double shift);
inline Var neg(Var x) { return affine(x, -1.0, 0.0); }
Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
Var tanh(Var x);
Var sin(Var x);
Var cos(Var x);
Var exp(Var x);
Var log(Var x);
Var pow(Var x, double exponent);
Var sum(Var x);
Var concat(std::span<const Var> parts);
Var slice(Var x, std::size_t offset, std::size_t length);
Var clamp(Var x, Tensor lo, Tensor hi);
Var clamp(Var x, double lo, double hi);
inline Var dot(Var a, Var b) { return sum(mul(a, b)); }

}  // namespace jfbctrl
