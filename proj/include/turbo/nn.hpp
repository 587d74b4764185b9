// SPDX-License-Identifier: Apache-2.0
//
// Small float64 tensor library with a per-forward reverse-mode tape, the
// layers used by the denoiser and surrogate, and Adam.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "turbo/common.hpp"

namespace turbo::nn {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, double fill = 0.0);
  Tensor(std::vector<std::size_t> s, std::vector<double> d);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) { return Tensor({rows, cols}, fill); }
  static Tensor row(std::vector<double> d) {
    const std::size_t n = d.size();
    return Tensor({1, n}, std::move(d));
  }

  std::size_t size() const { return data.size(); }
  /// 2-D view: a 1-D tensor is a single row.
  std::size_t rows() const { return shape.size() == 1 ? 1 : shape.at(0); }
  std::size_t cols() const { return shape.size() == 1 ? shape.at(0) : shape.at(1); }
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  bool all_finite() const;
  bool operator==(const Tensor&) const = default;
};

std::size_t shape_size(const std::vector<std::size_t>& shape);

class ParamStore {
 public:
  /// Adds a parameter initialised uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Tensor& add_uniform(const std::string& name, std::vector<std::size_t> shape, std::size_t fan_in,
                      std::uint64_t seed);
  Tensor& add_constant(const std::string& name, std::vector<std::size_t> shape, double value);

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  Tensor& grad(const std::string& name);
  const Tensor& grad(const std::string& name) const;

  void zero_grad();
  std::size_t parameter_count() const;
  bool all_finite() const;

  const std::map<std::string, Tensor>& params() const { return params_; }
  std::map<std::string, Tensor>& params() { return params_; }

  /// Set once weights are fitted (training or checkpoint load).
  bool trained = false;

  std::string to_json() const;
  static ParamStore from_json(const std::string& text);
  void save(const std::string& path) const;
  static ParamStore load(const std::string& path);

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, Tensor> grads_;
};

/// Handle to a tape node.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Records one forward evaluation; backward() pushes gradients into the
/// ParamStore. Parameters used more than once accumulate.
class Tape {
 public:
  explicit Tape(ParamStore* store = nullptr) : store_(store) {}

  Var constant(Tensor t);
  Var param(const std::string& name);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
  std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b);
  /// a[n x m] + bias[1 x m] broadcast over rows.
  Var add_bias(Var a, Var bias);
  Var add(Var a, Var b);
  Var scale(Var a, double s);
  Var silu(Var a);
  /// Row-wise layer normalisation with affine gamma, beta (eps 1e-5).
  Var layer_norm(Var a, Var gamma, Var beta);
  /// softmax(Q K^T / sqrt(d_k)) V on single matrices.
  Var attention(Var q, Var k, Var v);
  /// Self-attention over `groups` stacked sequences of equal length, with
  /// columns split into `heads` heads.
  Var multihead_attention(Var q, Var k, Var v, std::size_t groups, std::size_t heads);
  Var concat_cols(Var a, Var b);
  /// [groups*seq x w] -> [groups x w] by averaging each block of seq rows.
  Var mean_pool(Var a, std::size_t seq);
  /// a[groups*seq x w] + e[groups x w], row g*seq+i gets e row g.
  Var add_group(Var a, Var e, std::size_t seq);
  /// x[groups x seq] values -> tokens[groups*seq x w] = x_gi * vec_i + pos_i.
  Var token_embed(Var x, Var vec, Var pos);
  Var reshape(Var a, std::vector<std::size_t> shape);

  /// Reverse sweep seeded with d(loss)/d(root).
  void backward(Var root, const Tensor& seed);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void()> back;
    std::string param_name;
  };
  Var push(Tensor value, std::function<void()> back = {});
  Node& node(Var v) { return nodes_.at(v.id); }
  Tensor& g(Var v);

  ParamStore* store_;
  std::vector<Node> nodes_;
  std::map<std::string, Var> param_vars_;
};

// Layers -------------------------------------------------------------------

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Var forward(Tape& tape, Var x) const = 0;
  /// Create this layer's parameters in `store`.
  virtual void init(ParamStore& store, std::uint64_t seed) const = 0;
};

class Dense : public Layer {
 public:
  Dense(std::string name, std::size_t in, std::size_t out) : name_(std::move(name)), in_(in), out_(out) {}
  Var forward(Tape& tape, Var x) const override;
  void init(ParamStore& store, std::uint64_t seed) const override;

 private:
  std::string name_;
  std::size_t in_, out_;
};

class LayerNorm : public Layer {
 public:
  LayerNorm(std::string name, std::size_t width) : name_(std::move(name)), width_(width) {}
  Var forward(Tape& tape, Var x) const override;
  void init(ParamStore& store, std::uint64_t seed) const override;

 private:
  std::string name_;
  std::size_t width_;
};

class SiLU : public Layer {
 public:
  Var forward(Tape& tape, Var x) const override { return tape.silu(x); }
  void init(ParamStore&, std::uint64_t) const override {}
};

/// Multi-head self-attention over `groups` of `seq` rows (input width w).
class SelfAttention : public Layer {
 public:
  SelfAttention(std::string name, std::size_t width, std::size_t heads, std::size_t seq)
      : name_(std::move(name)), width_(width), heads_(heads), seq_(seq) {}
  Var forward(Tape& tape, Var x) const override;
  void init(ParamStore& store, std::uint64_t seed) const override;

 private:
  std::string name_;
  std::size_t width_, heads_, seq_;
};

/// x + f(x) for an inner layer stack.
class Residual : public Layer {
 public:
  explicit Residual(std::vector<std::shared_ptr<Layer>> inner) : inner_(std::move(inner)) {}
  Var forward(Tape& tape, Var x) const override;
  void init(ParamStore& store, std::uint64_t seed) const override;

 private:
  std::vector<std::shared_ptr<Layer>> inner_;
};

class TokenEmbedding : public Layer {
 public:
  TokenEmbedding(std::string name, std::size_t seq, std::size_t width)
      : name_(std::move(name)), seq_(seq), width_(width) {}
  Var forward(Tape& tape, Var x) const override;
  void init(ParamStore& store, std::uint64_t seed) const override;

 private:
  std::string name_;
  std::size_t seq_, width_;
};

class MeanPool : public Layer {
 public:
  explicit MeanPool(std::size_t seq) : seq_(seq) {}
  Var forward(Tape& tape, Var x) const override { return tape.mean_pool(x, seq_); }
  void init(ParamStore&, std::uint64_t) const override {}

 private:
  std::size_t seq_;
};

/// Layer sequence with a recorded forward pass.
class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<std::shared_ptr<Layer>> layers) : layers_(std::move(layers)) {}
  void add(std::shared_ptr<Layer> l) { layers_.push_back(std::move(l)); }
  void init(ParamStore& store, std::uint64_t seed) const;

  Tensor forward(ParamStore& store, const Tensor& input);
  /// Gradients of the recorded forward into store; throws NoForwardRecord.
  void backward(const Tensor& loss_grad);

 private:
  std::vector<std::shared_ptr<Layer>> layers_;
  std::unique_ptr<Tape> tape_;
  Var out_;
};

// Optimizer ----------------------------------------------------------------

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

/// Bias-corrected Adam update of every parameter, then zero the gradients.
void adam_step(AdamState& state, ParamStore& params);

/// Interleaved [sin(t w_0), cos(t w_0), sin(t w_1), ...], w_i = 10000^(-2i/dim).
std::vector<double> sinusoidal_embedding(double t, std::size_t dim);

}  // namespace turbo::nn
