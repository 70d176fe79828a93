#include "ltfr/tape.hpp"

#include <cmath>

#include "ltfr/error.hpp"

namespace ltfr {

Var Tape::push(Matrix value, std::function<void(Tape&, int)> back, const char* op) {
  if (!value.all_finite()) {
    throw NonFiniteError(std::string("tape op '") + op + "' produced a non-finite value");
  }
  nodes_.push_back(Node{std::move(value), Matrix(), std::move(back)});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Matrix value) { return push(std::move(value), nullptr, "leaf"); }

Var Tape::named_leaf(const std::string& name, const Matrix& value) {
  auto it = named_.find(name);
  if (it != named_.end()) return Var{it->second};
  Var v = leaf(value);
  named_.emplace(name, v.id);
  return v;
}

const Matrix& Tape::value(Var v) const { return nodes_.at(v.id).value; }

const Matrix& Tape::grad(Var v) const {
  if (!backward_run_) {
    throw Error("Tape::grad: backward() has not run on this tape (backward before forward?)");
  }
  return nodes_.at(v.id).grad;
}

Matrix& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  const Matrix& v = value(loss);
  if (v.rows() != 1 || v.cols() != 1) {
    throw DimensionError("Tape::backward: loss must be 1x1");
  }
  Matrix seed(1, 1, 1.0);
  backward(loss, seed);
}

void Tape::backward(Var node, const Matrix& seed_grad) {
  if (!node.valid() || static_cast<size_t>(node.id) >= nodes_.size()) {
    throw Error("Tape::backward: invalid node");
  }
  if (!seed_grad.same_shape(nodes_[node.id].value)) {
    throw DimensionError("Tape::backward: seed gradient shape mismatch");
  }
  for (auto& n : nodes_) {
    if (!n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  }
  add_in_place(grad_ref(node.id), seed_grad);
  run_backward(node.id);
  backward_run_ = true;
}

void Tape::run_backward(int from) {
  for (int i = from; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.back && !n.grad.empty()) n.back(*this, i);
  }
}

Var Tape::matmul(Var a, Var b) {
  Matrix c = ltfr::matmul(value(a), value(b));
  return push(std::move(c),
              [a, b](Tape& t, int self) {
                const Matrix& g = t.nodes_[self].grad;
                add_in_place(t.grad_ref(a.id), ltfr::matmul_nt(g, t.value(b)));
                add_in_place(t.grad_ref(b.id), ltfr::matmul_tn(t.value(a), g));
              },
              "matmul");
}

Var Tape::matmul_nt(Var a, Var b) {
  Matrix c = ltfr::matmul_nt(value(a), value(b));
  return push(std::move(c),
              [a, b](Tape& t, int self) {
                const Matrix& g = t.nodes_[self].grad;
                add_in_place(t.grad_ref(a.id), ltfr::matmul(g, t.value(b)));
                add_in_place(t.grad_ref(b.id), ltfr::matmul_tn(g, t.value(a)));
              },
              "matmul_nt");
}

Var Tape::add(Var a, Var b) {
  return push(ltfr::add(value(a), value(b)),
              [a, b](Tape& t, int self) {
                const Matrix& g = t.nodes_[self].grad;
                add_in_place(t.grad_ref(a.id), g);
                add_in_place(t.grad_ref(b.id), g);
              },
              "add");
}

Var Tape::sub(Var a, Var b) {
  return push(ltfr::sub(value(a), value(b)),
              [a, b](Tape& t, int self) {
                const Matrix& g = t.nodes_[self].grad;
                add_in_place(t.grad_ref(a.id), g);
                add_scaled_in_place(t.grad_ref(b.id), g, -1.0);
              },
              "sub");
}

Var Tape::hadamard(Var a, Var b) {
  return push(ltfr::hadamard(value(a), value(b)),
              [a, b](Tape& t, int self) {
                const Matrix& g = t.nodes_[self].grad;
                add_in_place(t.grad_ref(a.id), ltfr::hadamard(g, t.value(b)));
                add_in_place(t.grad_ref(b.id), ltfr::hadamard(g, t.value(a)));
              },
              "hadamard");
}

Var Tape::scale(Var a, double s) {
  return push(ltfr::scaled(value(a), s),
              [a, s](Tape& t, int self) {
                add_scaled_in_place(t.grad_ref(a.id), t.nodes_[self].grad, s);
              },
              "scale");
}

Var Tape::add_row_broadcast(Var x, Var row) {
  const Matrix& xv = value(x);
  const Matrix& rv = value(row);
  if (rv.rows() != 1 || rv.cols() != xv.cols()) {
    throw DimensionError("add_row_broadcast: row must be 1 x cols(x)");
  }
  Matrix out = xv;
  for (size_t i = 0; i < out.rows(); ++i)
    for (size_t j = 0; j < out.cols(); ++j) out(i, j) += rv(0, j);
  return push(std::move(out),
              [x, row](Tape& t, int self) {
                const Matrix& g = t.nodes_[self].grad;
                add_in_place(t.grad_ref(x.id), g);
                Matrix& rg = t.grad_ref(row.id);
                for (size_t i = 0; i < g.rows(); ++i)
                  for (size_t j = 0; j < g.cols(); ++j) rg(0, j) += g(i, j);
              },
              "add_row_broadcast");
}

Var Tape::prelu(Var x, Var slope) {
  const Matrix& xv = value(x);
  const Matrix& sv = value(slope);
  if (sv.rows() != 1 || sv.cols() != 1) throw DimensionError("prelu: slope must be 1x1");
  const double s = sv(0, 0);
  Matrix out = xv;
  for (size_t i = 0; i < out.size(); ++i) {
    if (out[i] < 0.0) out[i] *= s;
  }
  return push(std::move(out),
              [x, slope](Tape& t, int self) {
                const Matrix& g = t.nodes_[self].grad;
                const Matrix& xv = t.value(x);
                const double s = t.value(slope)(0, 0);
                Matrix& xg = t.grad_ref(x.id);
                Matrix& sg = t.grad_ref(slope.id);
                double sacc = 0.0;
                for (size_t i = 0; i < g.size(); ++i) {
                  if (xv[i] >= 0.0) {
                    xg[i] += g[i];
                  } else {
                    xg[i] += g[i] * s;
                    sacc += g[i] * xv[i];
                  }
                }
                sg(0, 0) += sacc;
              },
              "prelu");
}

Var Tape::softmax_rows(Var x) {
  const Matrix& xv = value(x);
  Matrix out(xv.rows(), xv.cols());
  for (size_t i = 0; i < xv.rows(); ++i) {
    double mx = xv(i, 0);
    for (size_t j = 1; j < xv.cols(); ++j) mx = std::max(mx, xv(i, j));
    double denom = 0.0;
    for (size_t j = 0; j < xv.cols(); ++j) {
      out(i, j) = std::exp(xv(i, j) - mx);
      denom += out(i, j);
    }
    for (size_t j = 0; j < xv.cols(); ++j) out(i, j) /= denom;
  }
  return push(std::move(out),
              [x](Tape& t, int self) {
                const Matrix& g = t.nodes_[self].grad;
                const Matrix& y = t.nodes_[self].value;
                Matrix& xg = t.grad_ref(x.id);
                for (size_t i = 0; i < y.rows(); ++i) {
                  double dotgy = 0.0;
                  for (size_t j = 0; j < y.cols(); ++j) dotgy += g(i, j) * y(i, j);
                  for (size_t j = 0; j < y.cols(); ++j)
                    xg(i, j) += y(i, j) * (g(i, j) - dotgy);
                }
              },
              "softmax_rows");
}

Var Tape::layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  const Matrix& xv = value(x);
  const Matrix& gv = value(gain);
  const Matrix& bv = value(bias);
  if (gv.rows() != 1 || gv.cols() != xv.cols() || bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw DimensionError("layer_norm_rows: gain/bias must be 1 x cols(x)");
  }
  Matrix out(xv.rows(), xv.cols());
  const double d = static_cast<double>(xv.cols());
  for (size_t i = 0; i < xv.rows(); ++i) {
    double mean = 0.0;
    for (size_t j = 0; j < xv.cols(); ++j) mean += xv(i, j);
    mean /= d;
    double var = 0.0;
    for (size_t j = 0; j < xv.cols(); ++j) {
      double c = xv(i, j) - mean;
      var += c * c;
    }
    var /= d;
    const double inv_std = 1.0 / std::sqrt(var + eps);
    for (size_t j = 0; j < xv.cols(); ++j)
      out(i, j) = (xv(i, j) - mean) * inv_std * gv(0, j) + bv(0, j);
  }
  return push(std::move(out),
              [x, gain, bias, eps](Tape& t, int self) {
                const Matrix& g = t.nodes_[self].grad;
                const Matrix& xv = t.value(x);
                const Matrix& gv = t.value(gain);
                Matrix& xg = t.grad_ref(x.id);
                Matrix& gg = t.grad_ref(gain.id);
                Matrix& bg = t.grad_ref(bias.id);
                const double d = static_cast<double>(xv.cols());
                for (size_t i = 0; i < xv.rows(); ++i) {
                  double mean = 0.0;
                  for (size_t j = 0; j < xv.cols(); ++j) mean += xv(i, j);
                  mean /= d;
                  double var = 0.0;
                  for (size_t j = 0; j < xv.cols(); ++j) {
                    double c = xv(i, j) - mean;
                    var += c * c;
                  }
                  var /= d;
                  const double inv_std = 1.0 / std::sqrt(var + eps);
                  // dy = g .* gain through xhat = (x - mean) * inv_std
                  double sum_dy = 0.0, sum_dy_xhat = 0.0;
                  for (size_t j = 0; j < xv.cols(); ++j) {
                    double xhat = (xv(i, j) - mean) * inv_std;
                    double dy = g(i, j) * gv(0, j);
                    sum_dy += dy;
                    sum_dy_xhat += dy * xhat;
                    gg(0, j) += g(i, j) * xhat;
                    bg(0, j) += g(i, j);
                  }
                  for (size_t j = 0; j < xv.cols(); ++j) {
                    double xhat = (xv(i, j) - mean) * inv_std;
                    double dy = g(i, j) * gv(0, j);
                    xg(i, j) += inv_std * (dy - sum_dy / d - xhat * sum_dy_xhat / d);
                  }
                }
              },
              "layer_norm_rows");
}

Var Tape::concat_cols(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (av.rows() != bv.rows()) throw DimensionError("concat_cols: row count mismatch");
  Matrix out(av.rows(), av.cols() + bv.cols());
  for (size_t i = 0; i < out.rows(); ++i) {
    for (size_t j = 0; j < av.cols(); ++j) out(i, j) = av(i, j);
    for (size_t j = 0; j < bv.cols(); ++j) out(i, av.cols() + j) = bv(i, j);
  }
  const size_t split = av.cols();
  return push(std::move(out),
              [a, b, split](Tape& t, int self) {
                const Matrix& g = t.nodes_[self].grad;
                Matrix& ag = t.grad_ref(a.id);
                Matrix& bg = t.grad_ref(b.id);
                for (size_t i = 0; i < g.rows(); ++i) {
                  for (size_t j = 0; j < split; ++j) ag(i, j) += g(i, j);
                  for (size_t j = split; j < g.cols(); ++j) bg(i, j - split) += g(i, j);
                }
              },
              "concat_cols");
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  const size_t cols = value(parts[0]).cols();
  size_t rows = 0;
  for (Var p : parts) {
    if (value(p).cols() != cols) throw DimensionError("concat_rows: column count mismatch");
    rows += value(p).rows();
  }
  Matrix out(rows, cols);
  size_t r = 0;
  for (Var p : parts) {
    const Matrix& pv = value(p);
    for (size_t i = 0; i < pv.rows(); ++i, ++r)
      for (size_t j = 0; j < cols; ++j) out(r, j) = pv(i, j);
  }
  std::vector<Var> ps = parts;
  return push(std::move(out),
              [ps](Tape& t, int self) {
                const Matrix& g = t.nodes_[self].grad;
                size_t r = 0;
                for (Var p : ps) {
                  Matrix& pg = t.grad_ref(p.id);
                  for (size_t i = 0; i < pg.rows(); ++i, ++r)
                    for (size_t j = 0; j < pg.cols(); ++j) pg(i, j) += g(r, j);
                }
              },
              "concat_rows");
}

Var Tape::slice_cols(Var x, size_t c0, size_t c1) {
  const Matrix& xv = value(x);
  if (c0 >= c1 || c1 > xv.cols()) throw DimensionError("slice_cols: bad range");
  Matrix out(xv.rows(), c1 - c0);
  for (size_t i = 0; i < out.rows(); ++i)
    for (size_t j = 0; j < out.cols(); ++j) out(i, j) = xv(i, c0 + j);
  return push(std::move(out),
              [x, c0](Tape& t, int self) {
                const Matrix& g = t.nodes_[self].grad;
                Matrix& xg = t.grad_ref(x.id);
                for (size_t i = 0; i < g.rows(); ++i)
                  for (size_t j = 0; j < g.cols(); ++j) xg(i, c0 + j) += g(i, j);
              },
              "slice_cols");
}

Var Tape::reshape(Var x, size_t rows, size_t cols) {
  const Matrix& xv = value(x);
  if (rows * cols != xv.size()) throw DimensionError("reshape: element count mismatch");
  Matrix out(rows, cols, xv.values());
  return push(std::move(out),
              [x](Tape& t, int self) {
                const Matrix& g = t.nodes_[self].grad;
                Matrix& xg = t.grad_ref(x.id);
                for (size_t i = 0; i < g.size(); ++i) xg[i] += g[i];
              },
              "reshape");
}

Var Tape::sum_rows(Var x) {
  const Matrix& xv = value(x);
  Matrix out(1, xv.cols());
  for (size_t i = 0; i < xv.rows(); ++i)
    for (size_t j = 0; j < xv.cols(); ++j) out(0, j) += xv(i, j);
  return push(std::move(out),
              [x](Tape& t, int self) {
                const Matrix& g = t.nodes_[self].grad;
                Matrix& xg = t.grad_ref(x.id);
                for (size_t i = 0; i < xg.rows(); ++i)
                  for (size_t j = 0; j < xg.cols(); ++j) xg(i, j) += g(0, j);
              },
              "sum_rows");
}

Var Tape::sum_all(Var x) {
  const Matrix& xv = value(x);
  double s = 0.0;
  for (size_t i = 0; i < xv.size(); ++i) s += xv[i];
  return push(Matrix(1, 1, s),
              [x](Tape& t, int self) {
                const double g = t.nodes_[self].grad(0, 0);
                Matrix& xg = t.grad_ref(x.id);
                for (size_t i = 0; i < xg.size(); ++i) xg[i] += g;
              },
              "sum_all");
}

Var Tape::l2_normalize_rows(Var x) {
  const Matrix& xv = value(x);
  Matrix out(xv.rows(), xv.cols());
  for (size_t i = 0; i < xv.rows(); ++i) {
    double n2 = 0.0;
    for (size_t j = 0; j < xv.cols(); ++j) n2 += xv(i, j) * xv(i, j);
    double n = std::sqrt(n2);
    if (!(n > 1e-12) || !std::isfinite(n)) {
      throw NonFiniteError("l2_normalize_rows: zero or non-finite row norm");
    }
    for (size_t j = 0; j < xv.cols(); ++j) out(i, j) = xv(i, j) / n;
  }
  return push(std::move(out),
              [x](Tape& t, int self) {
                const Matrix& g = t.nodes_[self].grad;
                const Matrix& y = t.nodes_[self].value;
                const Matrix& xv = t.value(x);
                Matrix& xg = t.grad_ref(x.id);
                for (size_t i = 0; i < y.rows(); ++i) {
                  double n2 = 0.0;
                  for (size_t j = 0; j < y.cols(); ++j) n2 += xv(i, j) * xv(i, j);
                  double n = std::sqrt(n2);
                  double gy = 0.0;
                  for (size_t j = 0; j < y.cols(); ++j) gy += g(i, j) * y(i, j);
                  for (size_t j = 0; j < y.cols(); ++j)
                    xg(i, j) += (g(i, j) - y(i, j) * gy) / n;
                }
              },
              "l2_normalize_rows");
}

Var Tape::gather_rows(Var x, std::vector<size_t> rows) {
  const Matrix& xv = value(x);
  Matrix out(rows.size(), xv.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.rows()) throw DimensionError("gather_rows: index out of range");
    for (size_t j = 0; j < xv.cols(); ++j) out(i, j) = xv(rows[i], j);
  }
  return push(std::move(out),
              [x, rows](Tape& t, int self) {
                const Matrix& g = t.nodes_[self].grad;
                Matrix& xg = t.grad_ref(x.id);
                for (size_t i = 0; i < rows.size(); ++i)
                  for (size_t j = 0; j < g.cols(); ++j) xg(rows[i], j) += g(i, j);
              },
              "gather_rows");
}

}  // namespace ltfr
