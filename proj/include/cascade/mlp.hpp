#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cascade/error.hpp"
#include "cascade/grid.hpp"
#include "cascade/rng.hpp"

namespace cascade {

/// Dense feed-forward network: tanh hidden layers, identity output.
/// Weights are row-major (out x in) per layer.
struct Mlp {
  std::vector<int> dims;
  std::vector<std::vector<double>> w;
  std::vector<std::vector<double>> b;

  Mlp() = default;

  explicit Mlp(std::vector<int> layer_dims) : dims(std::move(layer_dims)) {
    if (dims.size() < 2) fail(ErrorCode::dimension_mismatch, "mlp needs >= 2 layer dims");
    for (int d : dims)
      if (d <= 0) fail(ErrorCode::dimension_mismatch, "mlp layer dims must be positive");
    w.resize(dims.size() - 1);
    b.resize(dims.size() - 1);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      w[l].assign(static_cast<std::size_t>(dims[l + 1]) * dims[l], 0.0);
      b[l].assign(static_cast<std::size_t>(dims[l + 1]), 0.0);
    }
  }

  int input_dim() const { return dims.front(); }
  int output_dim() const { return dims.back(); }
  std::size_t layer_count() const { return w.size(); }

  // Glorot uniform: +-sqrt(6 / (fan_in + fan_out)).
  void init_xavier(Rng& rng) {
    for (std::size_t l = 0; l < w.size(); ++l) {
      const double bound = std::sqrt(6.0 / (dims[l] + dims[l + 1]));
      for (auto& v : w[l]) v = bound * (2.0 * rng.uniform() - 1.0);
      for (auto& v : b[l]) v = 0.0;
    }
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < w.size(); ++l) n += w[l].size() + b[l].size();
    return n;
  }
};

/// Per-layer activation storage reused across calls in hot loops.
struct MlpWorkspace {
  std::vector<std::vector<double>> act;    // act[0] = input, act[L] = output
  std::vector<std::vector<double>> delta;  // backprop buffers
};

inline void mlp_forward(const Mlp& net, const double* x, MlpWorkspace& ws) {
  const std::size_t layers = net.layer_count();
  if (ws.act.size() != layers + 1) {
    ws.act.resize(layers + 1);
    ws.delta.resize(layers + 1);
    for (std::size_t l = 0; l <= layers; ++l) {
      ws.act[l].resize(static_cast<std::size_t>(net.dims[l]));
      ws.delta[l].resize(static_cast<std::size_t>(net.dims[l]));
    }
  }
  std::copy(x, x + net.dims[0], ws.act[0].begin());
  for (std::size_t l = 0; l < layers; ++l) {
    const int in = net.dims[l], out = net.dims[l + 1];
    const double* W = net.w[l].data();
    const double* prev = ws.act[l].data();
    double* cur = ws.act[l + 1].data();
    for (int o = 0; o < out; ++o) {
      double s = net.b[l][o];
      const double* row = W + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) s += row[i] * prev[i];
      cur[o] = (l + 1 < layers) ? std::tanh(s) : s;
    }
  }
}

inline Field mlp_forward(const Mlp& net, const Field& x) {
  if (static_cast<int>(x.size()) != net.input_dim())
    fail(ErrorCode::dimension_mismatch, "mlp input size mismatch");
  MlpWorkspace ws;
  mlp_forward(net, x.data(), ws);
  return ws.act.back();
}

/// Parameter gradients shaped like the network.
struct MlpGrads {
  std::vector<std::vector<double>> w;
  std::vector<std::vector<double>> b;

  explicit MlpGrads(const Mlp& net) {
    w.resize(net.w.size());
    b.resize(net.b.size());
    for (std::size_t l = 0; l < net.w.size(); ++l) {
      w[l].assign(net.w[l].size(), 0.0);
      b[l].assign(net.b[l].size(), 0.0);
    }
  }

  void zero() {
    for (auto& layer : w) std::fill(layer.begin(), layer.end(), 0.0);
    for (auto& layer : b) std::fill(layer.begin(), layer.end(), 0.0);
  }

  void add(const MlpGrads& other) {
    for (std::size_t l = 0; l < w.size(); ++l) {
      for (std::size_t i = 0; i < w[l].size(); ++i) w[l][i] += other.w[l][i];
      for (std::size_t i = 0; i < b[l].size(); ++i) b[l][i] += other.b[l][i];
    }
  }

  void scale(double s) {
    for (auto& layer : w)
      for (auto& v : layer) v *= s;
    for (auto& layer : b)
      for (auto& v : layer) v *= s;
  }
};

// Reverse-mode gradients of upstream . forward(net, x). Accumulates parameter
// gradients into `grads` (so mini-batch shards sum order-independently) and
// writes the input gradient into ws.delta[0]. Call mlp_forward first with the
// same workspace.
inline void mlp_backward_accum(const Mlp& net, const double* upstream,
                               MlpWorkspace& ws, MlpGrads& grads) {
  const std::size_t layers = net.layer_count();
  std::copy(upstream, upstream + net.dims[layers], ws.delta[layers].begin());
  for (std::size_t l = layers; l-- > 0;) {
    const int in = net.dims[l], out = net.dims[l + 1];
    double* dcur = ws.delta[l + 1].data();
    if (l + 1 < layers) {  // through tanh: act stores tanh(s)
      const double* a = ws.act[l + 1].data();
      for (int o = 0; o < out; ++o) dcur[o] *= (1.0 - a[o] * a[o]);
    }
    const double* prev = ws.act[l].data();
    double* gW = grads.w[l].data();
    for (int o = 0; o < out; ++o) {
      const double d = dcur[o];
      grads.b[l][o] += d;
      double* row = gW + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) row[i] += d * prev[i];
    }
    double* dprev = ws.delta[l].data();
    const double* W = net.w[l].data();
    for (int i = 0; i < in; ++i) dprev[i] = 0.0;
    for (int o = 0; o < out; ++o) {
      const double d = dcur[o];
      const double* row = W + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) dprev[i] += d * row[i];
    }
  }
}

// Input gradient only (no parameter accumulation); result in ws.delta[0].
inline void mlp_input_grad(const Mlp& net, const double* upstream, MlpWorkspace& ws) {
  const std::size_t layers = net.layer_count();
  std::copy(upstream, upstream + net.dims[layers], ws.delta[layers].begin());
  for (std::size_t l = layers; l-- > 0;) {
    const int in = net.dims[l], out = net.dims[l + 1];
    double* dcur = ws.delta[l + 1].data();
    if (l + 1 < layers) {
      const double* a = ws.act[l + 1].data();
      for (int o = 0; o < out; ++o) dcur[o] *= (1.0 - a[o] * a[o]);
    }
    double* dprev = ws.delta[l].data();
    const double* W = net.w[l].data();
    for (int i = 0; i < in; ++i) dprev[i] = 0.0;
    for (int o = 0; o < out; ++o) {
      const double d = dcur[o];
      const double* row = W + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) dprev[i] += d * row[i];
    }
  }
}

/// Exact reverse-mode gradients of upstream . forward(net, x).
/// Returns (parameter gradients, input gradient).
inline std::pair<MlpGrads, Field> mlp_grad(const Mlp& net, const Field& x,
                                           const Field& upstream) {
  if (static_cast<int>(x.size()) != net.input_dim())
    fail(ErrorCode::dimension_mismatch, "mlp input size mismatch");
  if (static_cast<int>(upstream.size()) != net.output_dim())
    fail(ErrorCode::dimension_mismatch, "mlp upstream size mismatch");
  MlpWorkspace ws;
  mlp_forward(net, x.data(), ws);
  MlpGrads grads(net);
  mlp_backward_accum(net, upstream.data(), ws, grads);
  return {std::move(grads), ws.delta[0]};
}

/// Preconditioned SGD settings. The update is descent on losses,
/// w <- w - lr * A * grad; the ascent form of an objective is the same
/// update applied to its negation.
struct Optimizer {
  double learning_rate = 1e-2;
  // Diagonal preconditioner over the flattened (w, b) parameter vector,
  // layer by layer; empty means identity.
  std::vector<double> precond;

  void validate(std::size_t param_count) const {
    if (learning_rate <= 0.0)
      fail(ErrorCode::config_invalid, "learning rate must be > 0");
    if (!precond.empty() && precond.size() != param_count)
      fail(ErrorCode::dimension_mismatch, "preconditioner size mismatch");
    for (double a : precond)
      if (a < 0.0) fail(ErrorCode::config_invalid, "preconditioner entries must be >= 0");
  }
};

inline void sgd_step(Mlp& net, const MlpGrads& grads, const Optimizer& opt) {
  opt.validate(net.param_count());
  const double lr = opt.learning_rate;
  std::size_t k = 0;
  const bool pre = !opt.precond.empty();
  for (std::size_t l = 0; l < net.w.size(); ++l) {
    for (std::size_t i = 0; i < net.w[l].size(); ++i, ++k)
      net.w[l][i] -= lr * (pre ? opt.precond[k] : 1.0) * grads.w[l][i];
    for (std::size_t i = 0; i < net.b[l].size(); ++i, ++k)
      net.b[l][i] -= lr * (pre ? opt.precond[k] : 1.0) * grads.b[l][i];
  }
}

// Checkpoint format: "mlp,1" header, layer manifest, then one line per layer
// of weights followed by biases. Deterministic round trip via format_double.
inline void save_mlp(const Mlp& net, std::ostream& os) {
  os << "mlp,1\n";
  os << "dims";
  for (int d : net.dims) os << ',' << d;
  os << '\n';
  for (std::size_t l = 0; l < net.w.size(); ++l) {
    os << "w" << l;
    for (double v : net.w[l]) os << ',' << format_double(v);
    os << '\n';
    os << "b" << l;
    for (double v : net.b[l]) os << ',' << format_double(v);
    os << '\n';
  }
}

inline void save_mlp(const Mlp& net, const std::string& path) {
  std::ofstream os(path);
  if (!os) fail(ErrorCode::io_error, "cannot open for write: " + path);
  save_mlp(net, os);
}

inline Mlp load_mlp(std::istream& is, const std::string& what = "mlp") {
  std::string line;
  if (!std::getline(is, line) || line.rfind("mlp,1", 0) != 0)
    fail(ErrorCode::io_error, "bad checkpoint header in " + what);
  if (!std::getline(is, line) || line.rfind("dims", 0) != 0)
    fail(ErrorCode::io_error, "missing dims line in " + what);
  std::vector<int> dims;
  {
    std::stringstream ss(line.substr(4));
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) dims.push_back(std::stoi(tok));
  }
  Mlp net(dims);
  auto parse_row = [&](const char* prefix, std::vector<double>& dst) {
    if (!std::getline(is, line) || line.rfind(prefix, 0) != 0)
      fail(ErrorCode::io_error, std::string("missing ") + prefix + " line in " + what);
    std::stringstream ss(line.substr(line.find(',') + 1));
    std::string tok;
    std::size_t i = 0;
    while (std::getline(ss, tok, ',') && i < dst.size()) dst[i++] = std::stod(tok);
    if (i != dst.size()) fail(ErrorCode::io_error, "short parameter row in " + what);
  };
  for (std::size_t l = 0; l < net.w.size(); ++l) {
    parse_row("w", net.w[l]);
    parse_row("b", net.b[l]);
  }
  return net;
}

inline Mlp load_mlp_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::io_error, "cannot open: " + path);
  return load_mlp(is, path);
}

}  // namespace cascade
