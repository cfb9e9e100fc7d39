#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "xmodal/tensor.hpp"

namespace xmodal {

// Handle to a node on a Tape. Only valid for the tape that produced it.
struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

// Eager tape of tensor operations with reverse-mode differentiation.
// Creation order is a topological order, so backward() is a single reverse
// sweep; gradients accumulate additively when a node feeds several
// consumers. A tape is built, differentiated once, and discarded; it is
// confined to one thread.
class Tape {
 public:
  Var leaf(Tensor value);

  // elementwise, identical shapes
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);

  Var matmul(Var a, Var b);  // [m,k] x [k,n] -> [m,n]

  Var sigmoid(Var x);
  Var relu(Var x);
  Var tanh(Var x);

  Var spatial_max(Var x);    // [C,H,W] -> [C], grad to first argmax
  Var spatial_avg(Var x);    // [C,H,W] -> [C]
  Var max_over_time(Var h);  // [N,D] -> [D], grad to first argmax step

  // x [Cin,H,W], w [Cout,Cin,kh,kw], b [Cout]; valid padding.
  Var conv2d(Var x, Var w, Var b, std::size_t stride);

  // table [V,E] -> [N,E]; grads accumulate into the selected rows only.
  Var embed_rows(Var table, const std::vector<std::size_t>& rows);

  Var concat(const std::vector<Var>& parts);      // rank-1 parts -> rank-1
  Var stack_rows(const std::vector<Var>& rows);   // N x [D] -> [N,D]
  Var slice(Var v, std::size_t offset, std::size_t len);  // rank-1
  Var reshape(Var v, Shape shape);

  Var dot(Var a, Var b);  // -> [1]
  Var sum(Var x);         // -> [1]
  Var sqrt(Var x);        // elementwise; d/dx at 0 defined as 0
  Var log(Var x);         // elementwise; requires x > 0
  Var recip(Var x);       // elementwise 1/x
  Var clamp(Var x, double lo, double hi);  // grad passes only where x in [lo,hi]
  Var add_const(Var x, double c);
  Var scale_const(Var x, double c);
  Var scale_by(Var t, Var s);  // t * s[0], s a 1-element tensor
  Var add_n(const std::vector<Var>& xs);  // left-to-right elementwise sum

  // Reverse sweep from a scalar root. Each node is visited at most once.
  void backward(Var root);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  // Gradient of the last backward() root w.r.t. v; zeros if unreachable.
  const Tensor& grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool touched = false;  // received any gradient during backward
    std::function<void(Tape&, const Node&)> pull;
  };

  Var push(Tensor value, std::function<void(Tape&, const Node&)> pull);
  void accum(std::uint32_t parent, const Tensor& g);
  void accum_at(std::uint32_t parent, std::size_t index, double g);
  const Tensor& val(std::uint32_t id) const { return nodes_[id].value; }

  std::vector<Node> nodes_;
  mutable Tensor zero_like_;  // scratch for grad() on untouched nodes
};

}  // namespace xmodal
