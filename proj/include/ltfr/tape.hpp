#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ltfr/matrix.hpp"

namespace ltfr {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid for the tape's lifetime.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff over Matrix values. A tape records one forward pass;
// backward() walks the recorded ops in reverse and accumulates gradients.
// Every op checks its output for NaN/Inf and throws NonFiniteError instead of
// letting bad values propagate. Single-threaded by design.
class Tape {
 public:
  Var leaf(Matrix value);
  // Create-or-fetch a leaf keyed by name. Repeated calls with the same name
  // return the same node so gradient contributions accumulate.
  Var named_leaf(const std::string& name, const Matrix& value);
  const std::map<std::string, int>& named_leaves() const { return named_; }

  const Matrix& value(Var v) const;
  // Gradient of the last backward() target w.r.t. v. Throws Error if
  // backward() has not run on this tape.
  const Matrix& grad(Var v) const;

  // Seeds d(loss)/d(loss) = 1; loss must be 1x1.
  void backward(Var loss);
  // Seeds an arbitrary upstream gradient at `node` (same shape as its value).
  void backward(Var node, const Matrix& seed_grad);
  bool backward_run() const { return backward_run_; }

  size_t node_count() const { return nodes_.size(); }

  // ---- ops ----
  Var matmul(Var a, Var b);     // a * b
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var hadamard(Var a, Var b);
  Var scale(Var a, double s);
  // x: T x d, row: 1 x d; adds row to every row of x.
  Var add_row_broadcast(Var x, Var row);
  // slope is a 1x1 learnable scalar.
  Var prelu(Var x, Var slope);
  Var softmax_rows(Var x);
  // gain/bias are 1 x d; normalizes each row to zero mean / unit variance.
  Var layer_norm_rows(Var x, Var gain, Var bias, double eps);
  Var concat_cols(Var a, Var b);
  Var concat_rows(const std::vector<Var>& parts);
  Var slice_cols(Var x, size_t c0, size_t c1);
  Var reshape(Var x, size_t rows, size_t cols);
  Var sum_rows(Var x);  // T x d -> 1 x d
  Var sum_all(Var x);   // -> 1 x 1
  Var l2_normalize_rows(Var x);
  Var gather_rows(Var x, std::vector<size_t> rows);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Tape&, int self)> back;  // null for leaves
  };

  Var push(Matrix value, std::function<void(Tape&, int)> back, const char* op);
  Matrix& grad_ref(int id);
  void run_backward(int from);

  std::vector<Node> nodes_;
  std::map<std::string, int> named_;
  bool backward_run_ = false;
};

}  // namespace ltfr
