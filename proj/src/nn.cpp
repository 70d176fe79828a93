#include "ltfr/nn.hpp"

#include <cmath>

#include "ltfr/error.hpp"

namespace ltfr {

Matrix& ParameterSet::add(const std::string& name, Matrix init) {
  if (slots_.count(name)) throw Error("ParameterSet::add: duplicate name '" + name + "'");
  Slot s;
  s.grad = Matrix(init.rows(), init.cols());
  s.m = Matrix(init.rows(), init.cols());
  s.v = Matrix(init.rows(), init.cols());
  s.value = std::move(init);
  auto [it, ok] = slots_.emplace(name, std::move(s));
  (void)ok;
  return it->second.value;
}

ParameterSet::Slot& ParameterSet::slot(const std::string& name) {
  auto it = slots_.find(name);
  if (it == slots_.end()) throw Error("ParameterSet: unknown parameter '" + name + "'");
  return it->second;
}

const ParameterSet::Slot& ParameterSet::slot(const std::string& name) const {
  auto it = slots_.find(name);
  if (it == slots_.end()) throw Error("ParameterSet: unknown parameter '" + name + "'");
  return it->second;
}

Matrix& ParameterSet::value(const std::string& name) { return slot(name).value; }
const Matrix& ParameterSet::value(const std::string& name) const { return slot(name).value; }
Matrix& ParameterSet::grad(const std::string& name) { return slot(name).grad; }
const Matrix& ParameterSet::grad(const std::string& name) const { return slot(name).grad; }
Matrix& ParameterSet::moment1(const std::string& name) { return slot(name).m; }
Matrix& ParameterSet::moment2(const std::string& name) { return slot(name).v; }

void ParameterSet::zero_grads() {
  for (auto& [name, s] : slots_) s.grad = Matrix(s.value.rows(), s.value.cols());
}

size_t ParameterSet::parameter_count() const {
  size_t n = 0;
  for (const auto& [name, s] : slots_) n += s.value.size();
  return n;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  out.reserve(slots_.size());
  for (const auto& [name, s] : slots_) out.push_back(name);
  return out;
}

Var param(Tape& tape, const ParameterSet& ps, const std::string& name) {
  return tape.named_leaf(name, ps.value(name));
}

void export_grads(const Tape& tape, ParameterSet& ps) {
  ps.zero_grads();
  for (const auto& [name, id] : tape.named_leaves()) {
    if (!ps.has(name)) continue;
    const Matrix& g = tape.grad(Var{id});
    if (g.empty()) continue;  // leaf never reached by backward
    if (!g.same_shape(ps.value(name))) {
      throw DimensionError("export_grads: gradient shape mismatch for '" + name + "'");
    }
    ps.grad(name) = g;
  }
}

Matrix glorot_uniform(size_t fan_in, size_t fan_out, Rng& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix m(fan_in, fan_out);
  for (size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-limit, limit);
  return m;
}

void init_linear(ParameterSet& ps, Rng& rng, const std::string& prefix, size_t in, size_t out) {
  ps.add(prefix + ".w", glorot_uniform(in, out, rng));
  ps.add(prefix + ".b", Matrix(1, out));
}

Var linear_forward(Tape& tape, const ParameterSet& ps, const std::string& prefix, Var x) {
  const Matrix& w = ps.value(prefix + ".w");
  if (tape.value(x).cols() != w.rows()) {
    throw DimensionError("linear '" + prefix + "': input cols " +
                         std::to_string(tape.value(x).cols()) + " != weight rows " +
                         std::to_string(w.rows()));
  }
  Var xw = tape.matmul(x, param(tape, ps, prefix + ".w"));
  return tape.add_row_broadcast(xw, param(tape, ps, prefix + ".b"));
}

namespace {
std::string layer_name(const std::string& prefix, size_t i) {
  return prefix + "." + std::to_string(i);
}
}  // namespace

void init_mlp(ParameterSet& ps, Rng& rng, const std::string& prefix, const MlpSpec& spec) {
  if (spec.dims.size() < 2) throw Error("init_mlp: need at least {in, out} dims");
  for (size_t i = 0; i + 1 < spec.dims.size(); ++i) {
    init_linear(ps, rng, layer_name(prefix, i), spec.dims[i], spec.dims[i + 1]);
    ps.add(layer_name(prefix, i) + ".slope", Matrix(1, 1, 0.25));
  }
}

Var mlp_forward(Tape& tape, const ParameterSet& ps, const std::string& prefix,
                const MlpSpec& spec, Var x) {
  if (tape.value(x).cols() != spec.dims.front()) {
    throw DimensionError("mlp '" + prefix + "' layer 0: input cols " +
                         std::to_string(tape.value(x).cols()) + " != expected " +
                         std::to_string(spec.dims.front()));
  }
  Var h = x;
  for (size_t i = 0; i + 1 < spec.dims.size(); ++i) {
    h = linear_forward(tape, ps, layer_name(prefix, i), h);
    h = tape.prelu(h, param(tape, ps, layer_name(prefix, i) + ".slope"));
  }
  return h;
}

void AttentionLayerConfig::validate() const {
  if (model_dim < 1 || num_heads < 1 || ff_dim < 1) {
    throw Error("AttentionLayerConfig: all dims must be >= 1");
  }
  if (model_dim % num_heads != 0) {
    throw Error("AttentionLayerConfig: model_dim must be divisible by num_heads");
  }
}

void init_encoder_layer(ParameterSet& ps, Rng& rng, const std::string& prefix,
                        const AttentionLayerConfig& cfg) {
  cfg.validate();
  for (const char* n : {".wq", ".wk", ".wv", ".wo"}) {
    ps.add(prefix + n, glorot_uniform(cfg.model_dim, cfg.model_dim, rng));
  }
  // No key bias: a per-row constant shift of the attention logits cancels in
  // the softmax, so it would be a dead parameter direction.
  for (const char* n : {".bq", ".bv", ".bo"}) {
    ps.add(prefix + n, Matrix(1, cfg.model_dim));
  }
  ps.add(prefix + ".ln1.g", Matrix(1, cfg.model_dim, 1.0));
  ps.add(prefix + ".ln1.b", Matrix(1, cfg.model_dim));
  ps.add(prefix + ".ln2.g", Matrix(1, cfg.model_dim, 1.0));
  ps.add(prefix + ".ln2.b", Matrix(1, cfg.model_dim));
  init_linear(ps, rng, prefix + ".ff.0", cfg.model_dim, cfg.ff_dim);
  ps.add(prefix + ".ff.0.slope", Matrix(1, 1, 0.25));
  init_linear(ps, rng, prefix + ".ff.1", cfg.ff_dim, cfg.model_dim);
}

Var encoder_layer_forward(Tape& tape, const ParameterSet& ps, const std::string& prefix,
                          const AttentionLayerConfig& cfg, Var tokens,
                          std::vector<Matrix>* attn_out) {
  cfg.validate();
  if (tape.value(tokens).cols() != cfg.model_dim) {
    throw DimensionError("encoder '" + prefix + "': token dim " +
                         std::to_string(tape.value(tokens).cols()) + " != model_dim " +
                         std::to_string(cfg.model_dim));
  }
  const size_t head_dim = cfg.model_dim / cfg.num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Var q = tape.add_row_broadcast(tape.matmul(tokens, param(tape, ps, prefix + ".wq")),
                                 param(tape, ps, prefix + ".bq"));
  Var k = tape.matmul(tokens, param(tape, ps, prefix + ".wk"));
  Var v = tape.add_row_broadcast(tape.matmul(tokens, param(tape, ps, prefix + ".wv")),
                                 param(tape, ps, prefix + ".bv"));

  Var heads;  // concatenated head outputs
  for (size_t h = 0; h < cfg.num_heads; ++h) {
    size_t c0 = h * head_dim, c1 = (h + 1) * head_dim;
    Var qh = tape.slice_cols(q, c0, c1);
    Var kh = tape.slice_cols(k, c0, c1);
    Var vh = tape.slice_cols(v, c0, c1);
    Var attn = tape.softmax_rows(tape.scale(tape.matmul_nt(qh, kh), scale));
    if (attn_out) attn_out->push_back(tape.value(attn));
    Var oh = tape.matmul(attn, vh);
    heads = (h == 0) ? oh : tape.concat_cols(heads, oh);
  }
  Var attn_proj = tape.add_row_broadcast(tape.matmul(heads, param(tape, ps, prefix + ".wo")),
                                         param(tape, ps, prefix + ".bo"));
  Var x1 = tape.layer_norm_rows(tape.add(tokens, attn_proj), param(tape, ps, prefix + ".ln1.g"),
                                param(tape, ps, prefix + ".ln1.b"), 1e-5);

  Var ff = linear_forward(tape, ps, prefix + ".ff.0", x1);
  ff = tape.prelu(ff, param(tape, ps, prefix + ".ff.0.slope"));
  ff = linear_forward(tape, ps, prefix + ".ff.1", ff);
  return tape.layer_norm_rows(tape.add(x1, ff), param(tape, ps, prefix + ".ln2.g"),
                              param(tape, ps, prefix + ".ln2.b"), 1e-5);
}

void adam_step(ParameterSet& ps, const AdamConfig& cfg) {
  ps.increment_step();
  const double t = static_cast<double>(ps.step());
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (const std::string& name : ps.names()) {
    Matrix& p = ps.value(name);
    const Matrix& g = ps.grad(name);
    Matrix& m = ps.moment1(name);
    Matrix& v = ps.moment2(name);
    for (size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    if (!p.all_finite()) {
      throw NonFiniteError("adam_step: parameter '" + name + "' went non-finite");
    }
  }
}

double gradcheck(const GradCheckFn& model_fn, ParameterSet& ps, double eps) {
  ps.zero_grads();
  double loss = model_fn(ps, true);
  if (!std::isfinite(loss)) throw NonFiniteError("gradcheck: non-finite loss");

  // Snapshot the analytic gradients before perturbing anything.
  std::map<std::string, Matrix> analytic;
  for (const std::string& name : ps.names()) analytic[name] = ps.grad(name);

  double max_rel = 0.0;
  for (const std::string& name : ps.names()) {
    Matrix& p = ps.value(name);
    const Matrix& a = analytic[name];
    for (size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + eps;
      double up = model_fn(ps, false);
      p[i] = orig - eps;
      double down = model_fn(ps, false);
      p[i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NonFiniteError("gradcheck: non-finite loss while perturbing '" + name + "'");
      }
      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max({std::abs(a[i]), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::abs(a[i] - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace ltfr
