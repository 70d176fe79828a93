#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ltfr/matrix.hpp"
#include "ltfr/rng.hpp"
#include "ltfr/tape.hpp"

namespace ltfr {

// Named parameter tensors with matching gradients and per-tensor optimizer
// state. Names are unique; iteration order is the sorted name order, which
// keeps every downstream consumer deterministic.
class ParameterSet {
 public:
  Matrix& add(const std::string& name, Matrix init);
  bool has(const std::string& name) const { return slots_.count(name) > 0; }

  Matrix& value(const std::string& name);
  const Matrix& value(const std::string& name) const;
  Matrix& grad(const std::string& name);
  const Matrix& grad(const std::string& name) const;

  void zero_grads();
  size_t parameter_count() const;  // total scalar count
  std::vector<std::string> names() const;

  int64_t step() const { return step_; }

  // Adam state accessors used by adam_step.
  Matrix& moment1(const std::string& name);
  Matrix& moment2(const std::string& name);
  void increment_step() { ++step_; }

 private:
  struct Slot {
    Matrix value, grad, m, v;
  };
  std::map<std::string, Slot> slots_;
  int64_t step_ = 0;

  Slot& slot(const std::string& name);
  const Slot& slot(const std::string& name) const;
};

// Fetches (or creates) the tape leaf for a parameter of `ps`.
Var param(Tape& tape, const ParameterSet& ps, const std::string& name);
// Copies accumulated leaf gradients back into `ps` (assignment, not +=).
// Parameters never touched on the tape get zero gradients.
void export_grads(const Tape& tape, ParameterSet& ps);

// Parametric rectified linear unit: x for x >= 0, slope * x otherwise.
inline double prelu(double x, double slope) { return x >= 0.0 ? x : slope * x; }

// Uniform Glorot init in +-sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(size_t fan_in, size_t fan_out, Rng& rng);

// Registers "<prefix>.w" (in x out) and "<prefix>.b" (1 x out).
void init_linear(ParameterSet& ps, Rng& rng, const std::string& prefix, size_t in, size_t out);
Var linear_forward(Tape& tape, const ParameterSet& ps, const std::string& prefix, Var x);

// A stack of Linear layers, each followed by PReLU (learnable slope per
// layer, init 0.25). dims = {in, h1, ..., out}.
struct MlpSpec {
  std::vector<size_t> dims;
  size_t layers() const { return dims.empty() ? 0 : dims.size() - 1; }
};
void init_mlp(ParameterSet& ps, Rng& rng, const std::string& prefix, const MlpSpec& spec);
Var mlp_forward(Tape& tape, const ParameterSet& ps, const std::string& prefix,
                const MlpSpec& spec, Var x);

struct AttentionLayerConfig {
  size_t model_dim = 32;
  size_t num_heads = 2;
  size_t ff_dim = 64;
  void validate() const;
};

// Post-norm encoder block: multi-head self-attention + residual + layer norm,
// then a PReLU feed-forward + residual + layer norm. Layer-norm epsilon 1e-5.
void init_encoder_layer(ParameterSet& ps, Rng& rng, const std::string& prefix,
                        const AttentionLayerConfig& cfg);
// tokens: T x model_dim. When attn_out is non-null it receives one T x T
// softmax matrix per head.
Var encoder_layer_forward(Tape& tape, const ParameterSet& ps, const std::string& prefix,
                          const AttentionLayerConfig& cfg, Var tokens,
                          std::vector<Matrix>* attn_out = nullptr);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected adaptive-moment update over every parameter in `ps`.
void adam_step(ParameterSet& ps, const AdamConfig& cfg);

// model_fn must deterministically map `ps` to a scalar loss; when
// `with_grads` is true it must also fill ps gradients (zeroed first).
// Returns max over parameter elements of
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
// with numeric = central finite differences at +-eps.
// Throws NonFiniteError if the loss is not finite.
using GradCheckFn = std::function<double(ParameterSet&, bool with_grads)>;
double gradcheck(const GradCheckFn& model_fn, ParameterSet& ps, double eps);

}  // namespace ltfr
