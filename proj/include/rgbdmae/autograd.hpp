#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rgbdmae/mat.hpp"

namespace rgbdmae {

// A learnable tensor. `grad` is accumulated by Tape::backward and consumed by
// the optimizer; it is owned here so gradients survive tape destruction.
struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param() = default;
  Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)), grad(value.rows, value.cols) {}

  void zero_grad() { grad.fill(0.0); }
};

struct Var {
  i64 idx = -1;
  bool valid() const { return idx >= 0; }
};

// Reverse-mode tape over Mats. A fresh tape is built per training step
// (dynamic graph); backward runs nodes in reverse creation order.
class Tape {
 public:
  Var input(Mat value);               // constant leaf, no gradient
  Var param(Param& p);                // leaf bound to external value/grad

  Var matmul(Var a, Var b);           // (m,k)x(k,n)
  Var matmul_nt(Var a, Var b);        // (m,k)x(n,k)^T

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);              // elementwise
  Var scale(Var a, double c);
  Var add_rowvec(Var a, Var bias);    // bias (1,c) broadcast over rows
  Var add_const(Var a, const Mat& m); // constant, same shape or (1,c) row
  Var add_tiled(Var a, const Mat& table, i64 times);  // a (times*R,c) + tiled table (R,c)

  Var gelu(Var x);
  Var square(Var x);
  Var abs(Var x);

  Var layernorm_rows(Var x, Var gamma, Var beta, double eps = 1e-6);
  Var softmax_rows(Var x);
  Var log_softmax_rows(Var x);
  Var l2normalize_rows(Var x, double eps = 1e-8);

  Var gather_rows(Var x, std::vector<i64> idx);
  Var scatter_rows(Var x, std::vector<i64> idx, i64 out_rows);  // idx must be distinct
  Var slice_rows(Var x, i64 begin, i64 count);
  Var slice_cols(Var x, i64 begin, i64 count);
  Var concat_rows(const std::vector<Var>& xs);
  Var concat_cols(const std::vector<Var>& xs);
  Var broadcast_row(Var x, i64 n);    // (1,c) -> (n,c)
  Var mean_rows(Var x);               // (r,c) -> (1,c)
  Var reshape_rows(Var x, i64 rows, i64 cols);  // same numel, row-major view

  Var weighted_sum(Var x, Mat weights);  // sum(x .* w) -> (1,1)
  Var zero_scalar() { return input(Mat(1, 1)); }

  double scalar(Var v) const;
  const Mat& value(Var v) const { return nodes_[static_cast<size_t>(v.idx)].value; }
  const Mat& grad(Var v) const { return nodes_[static_cast<size_t>(v.idx)].grad; }

  void backward(Var loss);

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&, i64)> back;  // pushes this node's grad to parents
    bool needs_grad = false;
    Param* bound = nullptr;
  };

  Var push(Mat value, bool needs_grad, std::function<void(Tape&, i64)> back);
  Node& node(Var v) { return nodes_[static_cast<size_t>(v.idx)]; }
  Node& node(i64 i) { return nodes_[static_cast<size_t>(i)]; }
  bool ng(Var v) const { return nodes_[static_cast<size_t>(v.idx)].needs_grad; }

  std::vector<Node> nodes_;
};

}  // namespace rgbdmae
