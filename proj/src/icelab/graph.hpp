#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "icelab/tensor.hpp"

namespace icelab::ad {

// Handle to a node of a Graph. Only meaningful together with the graph that
// created it.
struct Var {
  std::uint32_t index = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so every node's
// parents precede it and backward is a single reverse sweep.
//
// A Graph is single-threaded. Leaves bound with `leaf()` receive their
// gradients when `backward()` runs; the bound tensors must outlive the graph.
class Graph {
 public:
  // With record_gradients == false no backward closures are stored and every
  // node is treated as a constant; used for scoring and sampling.
  explicit Graph(bool record_gradients = true) : record_(record_gradients) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor t);
  Var constant(Shape shape, std::vector<double> values);
  Var leaf(Tensor& t);
  // Gradient-free view of x; the value is copied, no gradient flows back.
  Var detach(Var x);

  const Shape& shape(Var v) const { return nodes_[v.index].shape; }
  std::span<const double> value(Var v) const { return nodes_[v.index].value; }
  double scalar(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.index].requires_grad; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  // m[r, c] + row[c]
  Var add_row(Var m, Var row);
  Var matmul(Var a, Var b);
  // a * b^T
  Var matmul_nt(Var a, Var b);
  Var tanh(Var a);
  Var gelu(Var a);
  Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
  // Row-wise softmax where entry (i, j) with j > i is masked out.
  Var causal_softmax_rows(Var scores);
  Var log_softmax_rows(Var logits);
  Var gather_rows(Var table, std::span<const int> rows);
  Var slice_rows(Var m, std::size_t begin, std::size_t end);
  Var slice_cols(Var m, std::size_t begin, std::size_t end);
  Var concat_cols(std::span<const Var> parts);
  // Elements m[r, c] for each (r, c), as a vector.
  Var pick(Var m, std::span<const std::pair<std::size_t, std::size_t>> positions);
  Var sum(Var a);
  // sum_r exp(t[r]) * (t[r] - m[r]). `target_log_weights` must not require grad.
  Var kl_onehot_weighted(Var target_log_weights, Var model_log_probs);

  // Populates the gradient of every bound leaf with requires_grad. May run
  // once per graph.
  void backward(Var loss);

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    Tensor* bound = nullptr;
    std::function<void()> backward;
  };

  Var push(Shape shape, std::vector<double> value, bool requires_grad);
  bool any_grad(std::initializer_list<Var> vars) const;
  Node& node(Var v) { return nodes_[v.index]; }
  std::size_t rows_of(Var v) const;
  std::size_t cols_of(Var v) const;
  void require_matrix(Var v, const char* op) const;

  bool record_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
};

}  // namespace icelab::ad
