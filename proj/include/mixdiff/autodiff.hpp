#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace mixdiff {

class Rng;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace ad {

// Named trainable tensors. Values are owned here; gradient buffers with the
// same shapes are separate so several passes can share one store.
class ParamStore {
 public:
  int add(std::string name, RowMatrix value);
  int index_of(const std::string& name) const;

  std::size_t count() const { return values_.size(); }
  std::size_t scalar_count() const;
  const std::string& name(std::size_t i) const { return names_[i]; }
  RowMatrix& value(std::size_t i) { return values_[i]; }
  const RowMatrix& value(std::size_t i) const { return values_[i]; }
  RowMatrix& value(const std::string& name) { return values_[static_cast<std::size_t>(index_of(name))]; }

  // Flat view, parameters concatenated in registration order, row-major.
  double& flat(std::size_t k);
  double flat(std::size_t k) const;

  std::vector<RowMatrix> zeros_like() const;

 private:
  std::pair<std::size_t, std::size_t> locate(std::size_t k) const;

  std::vector<std::string> names_;
  std::vector<RowMatrix> values_;
};

using Gradients = std::vector<RowMatrix>;

double flat_at(const Gradients& g, std::size_t k);

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Append-only computation record. Each op pushes one node holding its value
// and, when recording and some input needs a gradient, a closure that
// propagates the node's gradient to its inputs.
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}

  Var constant(RowMatrix value);
  // Leaf bound to a stored parameter; the store must outlive the tape.
  Var parameter(const ParamStore& store, int index);

  const RowMatrix& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds output gradients, runs every closure in reverse order and adds
  // parameter gradients into `grads` (shaped like the store).
  void backward(const std::vector<std::pair<Var, RowMatrix>>& seeds, Gradients& grads);

  // Used by op implementations.
  Var push(RowMatrix value, bool requires_grad);
  void set_backward(Var v, std::function<void()> fn);
  RowMatrix& grad(Var v);
  bool has_grad(Var v) const;
  template <typename Expr>
  void accumulate(Var v, const Expr& g) {
    auto& n = nodes_[static_cast<std::size_t>(v.id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

 private:
  struct Node {
    RowMatrix own;
    const RowMatrix* external = nullptr;
    RowMatrix grad;
    int param = -1;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  bool record_;
  std::vector<Node> nodes_;
};

// y = x W (+ b). W is in x out, b is 1 x out.
Var linear(Tape& tape, Var x, Var w, Var b = {});
Var add(Tape& tape, Var a, Var b);
Var gelu(Tape& tape, Var x);
// Row-wise normalisation to zero mean and unit variance, no affine part.
Var layer_norm(Tape& tape, Var x, double eps = 1e-6);
// y = x * (1 + scale_g) + shift_g where g = row / rows_per_group.
Var modulate(Tape& tape, Var x, Var scale, Var shift, int rows_per_group);
// Multi-head scaled dot-product attention applied independently to each of
// `groups` blocks of rows: q has groups * nq rows, k and v groups * nk rows.
// Dropout on attention weights when rng is non-null and p > 0.
Var attention(Tape& tape, Var q, Var k, Var v, int heads, int groups, double dropout_p = 0.0,
              Rng* rng = nullptr);
Var gather_rows(Tape& tape, Var table, std::vector<int> indices);
// Column-wise max over each block of rows_per_group rows.
Var max_pool_groups(Tape& tape, Var x, int rows_per_group);
// Each row of x repeated rows_per_group times.
Var repeat_rows(Tape& tape, Var x, int rows_per_group);
// The whole of x stacked `times` times.
Var tile(Tape& tape, Var x, int times);
Var hconcat(Tape& tape, Var a, Var b);
Var dropout(Tape& tape, Var x, double p, Rng* rng);

}  // namespace ad
}  // namespace mixdiff
