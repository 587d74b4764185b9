// SPDX-License-Identifier: Apache-2.0
#include "turbo/nn.hpp"

#include <Eigen/Dense>
#include <cmath>
#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "json.hpp"
#include "turbo/data.hpp"
#include "turbo/random.hpp"

namespace turbo::nn {
namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const Mat>;
using MapM = Eigen::Map<Mat>;

constexpr double kLayerNormEps = 1e-5;

MapC view(const Tensor& t) { return MapC(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())); }
MapM view(Tensor& t) { return MapM(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())); }

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::ShapeMismatch, what);
}

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) fail(ErrorCode::NonFiniteValue, std::string("non-finite output from ") + op);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

#if defined(__GLIBC__)
// Activations are multi-megabyte and short-lived; keeping them on the heap
// instead of fresh mmaps avoids re-faulting zeroed pages every op.
[[maybe_unused]] const bool kHeapTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return true;
}();
#endif

std::uint64_t name_hash(const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (data.size() != shape_size(shape)) fail(ErrorCode::ShapeMismatch, "tensor data does not match shape");
}

bool Tensor::all_finite() const {
  return Eigen::Map<const Eigen::ArrayXd>(data.data(), static_cast<Eigen::Index>(data.size())).allFinite();
}

// ParamStore ---------------------------------------------------------------

Tensor& ParamStore::add_uniform(const std::string& name, std::vector<std::size_t> shape, std::size_t fan_in,
                                std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(derive_seed(seed, name_hash(name)));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  grads_[name] = Tensor(t.shape);
  return params_[name] = std::move(t);
}

Tensor& ParamStore::add_constant(const std::string& name, std::vector<std::size_t> shape, double value) {
  Tensor t(std::move(shape), value);
  grads_[name] = Tensor(t.shape);
  return params_[name] = std::move(t);
}

Tensor& ParamStore::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) fail(ErrorCode::InvalidArgument, "unknown parameter " + name);
  return it->second;
}

const Tensor& ParamStore::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) fail(ErrorCode::InvalidArgument, "unknown parameter " + name);
  return it->second;
}

Tensor& ParamStore::grad(const std::string& name) {
  auto it = grads_.find(name);
  if (it == grads_.end()) fail(ErrorCode::InvalidArgument, "unknown parameter " + name);
  return it->second;
}

const Tensor& ParamStore::grad(const std::string& name) const {
  auto it = grads_.find(name);
  if (it == grads_.end()) fail(ErrorCode::InvalidArgument, "unknown parameter " + name);
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [_, g] : grads_) std::fill(g.data.begin(), g.data.end(), 0.0);
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.size();
  return n;
}

bool ParamStore::all_finite() const {
  for (const auto& [_, p] : params_)
    if (!p.all_finite()) return false;
  return true;
}

std::string ParamStore::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "turbo-params";
  j["version"] = 1;
  j["trained"] = trained;
  auto& ps = j["params"] = nlohmann::ordered_json::object();
  for (const auto& [name, t] : params_) ps[name] = {{"shape", t.shape}, {"data", t.data}};
  return j.dump();
}

ParamStore ParamStore::from_json(const std::string& text) {
  ParamStore s;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format").get<std::string>() != "turbo-params") fail(ErrorCode::IoError, "not a parameter checkpoint");
    if (j.at("version").get<int>() != 1) fail(ErrorCode::SchemaVersionMismatch, "checkpoint version");
    s.trained = j.value("trained", false);
    for (const auto& [name, e] : j.at("params").items()) {
      Tensor t(e.at("shape").get<std::vector<std::size_t>>(), e.at("data").get<std::vector<double>>());
      s.grads_[name] = Tensor(t.shape);
      s.params_[name] = std::move(t);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::IoError, std::string("checkpoint: ") + e.what());
  }
  return s;
}

void ParamStore::save(const std::string& path) const { data::write_file(path, to_json()); }
ParamStore ParamStore::load(const std::string& path) { return from_json(data::read_file(path)); }

// Tape ---------------------------------------------------------------------

Var Tape::push(Tensor value, std::function<void()> back) {
  nodes_.push_back(Node{std::move(value), Tensor{}, std::move(back), {}});
  return Var{nodes_.size() - 1};
}

Tensor& Tape::g(Var v) {
  Node& n = node(v);
  if (n.grad.data.empty()) n.grad = Tensor(n.value.shape);
  return n.grad;
}

Var Tape::constant(Tensor t) { return push(std::move(t)); }

Var Tape::param(const std::string& name) {
  if (!store_) fail(ErrorCode::InvalidArgument, "tape has no parameter store");
  if (auto it = param_vars_.find(name); it != param_vars_.end()) return it->second;
  Var v = push(store_->param(name));
  node(v).param_name = name;
  node(v).back = [this, v, name] {
    Tensor& dst = store_->grad(name);
    const Tensor& src = nodes_[v.id].grad;
    for (std::size_t i = 0; i < src.size(); ++i) dst.data[i] += src.data[i];
  };
  param_vars_[name] = v;
  return v;
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require(A.cols() == B.rows(), "matmul inner dimensions differ");
  Tensor C = Tensor::matrix(A.rows(), B.cols());
  view(C).noalias() = view(A) * view(B);
  check_finite(C, "matmul");
  Var c = push(std::move(C));
  node(c).back = [this, a, b, c] {
    const Tensor& dC = nodes_[c.id].grad;
    view(g(a)).noalias() += view(dC) * view(value(b)).transpose();
    view(g(b)).noalias() += view(value(a)).transpose() * view(dC);
  };
  return c;
}

Var Tape::add_bias(Var a, Var bias) {
  const Tensor& A = value(a);
  const Tensor& b = value(bias);
  require(b.size() == A.cols(), "bias width differs from input");
  Tensor C = A;
  for (std::size_t r = 0; r < C.rows(); ++r)
    for (std::size_t k = 0; k < C.cols(); ++k) C.at(r, k) += b.data[k];
  check_finite(C, "add_bias");
  Var c = push(std::move(C));
  node(c).back = [this, a, bias, c] {
    const Tensor& dC = nodes_[c.id].grad;
    Tensor& da = g(a);
    Tensor& db = g(bias);
    const std::size_t w = dC.cols();
    for (std::size_t r = 0; r < dC.rows(); ++r)
      for (std::size_t k = 0; k < w; ++k) {
        da.data[r * w + k] += dC.data[r * w + k];
        db.data[k] += dC.data[r * w + k];
      }
  };
  return c;
}

Var Tape::add(Var a, Var b) {
  require(value(a).shape == value(b).shape, "add operands differ in shape");
  Tensor C = value(a);
  const Tensor& B = value(b);
  for (std::size_t i = 0; i < C.size(); ++i) C.data[i] += B.data[i];
  check_finite(C, "add");
  Var c = push(std::move(C));
  node(c).back = [this, a, b, c] {
    const Tensor& dC = nodes_[c.id].grad;
    Tensor& da = g(a);
    Tensor& db = g(b);
    for (std::size_t i = 0; i < dC.size(); ++i) {
      da.data[i] += dC.data[i];
      db.data[i] += dC.data[i];
    }
  };
  return c;
}

Var Tape::scale(Var a, double s) {
  Tensor C = value(a);
  for (double& v : C.data) v *= s;
  check_finite(C, "scale");
  Var c = push(std::move(C));
  node(c).back = [this, a, c, s] {
    const Tensor& dC = nodes_[c.id].grad;
    Tensor& da = g(a);
    for (std::size_t i = 0; i < dC.size(); ++i) da.data[i] += s * dC.data[i];
  };
  return c;
}

Var Tape::silu(Var a) {
  Tensor C = value(a);
  for (double& v : C.data) v = v * sigmoid(v);
  check_finite(C, "silu");
  Var c = push(std::move(C));
  node(c).back = [this, a, c] {
    const Tensor& dC = nodes_[c.id].grad;
    const Tensor& X = value(a);
    Tensor& da = g(a);
    for (std::size_t i = 0; i < dC.size(); ++i) {
      const double s = sigmoid(X.data[i]);
      da.data[i] += dC.data[i] * s * (1.0 + X.data[i] * (1.0 - s));
    }
  };
  return c;
}

Var Tape::layer_norm(Var a, Var gamma, Var beta) {
  const Tensor& X = value(a);
  const std::size_t n = X.rows();
  const std::size_t w = X.cols();
  require(value(gamma).size() == w && value(beta).size() == w, "layer_norm affine width");
  auto xhat = std::make_shared<Tensor>(X.shape);
  auto inv_sigma = std::make_shared<std::vector<double>>(n);
  Tensor Y(X.shape);
  const Tensor& G = value(gamma);
  const Tensor& B = value(beta);
  for (std::size_t r = 0; r < n; ++r) {
    double mean = 0.0;
    for (std::size_t k = 0; k < w; ++k) mean += X.data[r * w + k];
    mean /= static_cast<double>(w);
    double var = 0.0;
    for (std::size_t k = 0; k < w; ++k) {
      const double d = X.data[r * w + k] - mean;
      var += d * d;
    }
    var /= static_cast<double>(w);
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    (*inv_sigma)[r] = is;
    for (std::size_t k = 0; k < w; ++k) {
      const double xh = (X.data[r * w + k] - mean) * is;
      xhat->data[r * w + k] = xh;
      Y.data[r * w + k] = G.data[k] * xh + B.data[k];
    }
  }
  check_finite(Y, "layer_norm");
  Var c = push(std::move(Y));
  node(c).back = [this, a, gamma, beta, c, xhat, inv_sigma, n, w] {
    const Tensor& dY = nodes_[c.id].grad;
    const Tensor& G = value(gamma);
    Tensor& dx = g(a);
    Tensor& dg = g(gamma);
    Tensor& db = g(beta);
    std::vector<double> dxh(w);
    for (std::size_t r = 0; r < n; ++r) {
      double m1 = 0.0;
      double m2 = 0.0;
      for (std::size_t k = 0; k < w; ++k) {
        const double dy = dY.data[r * w + k];
        const double xh = xhat->data[r * w + k];
        dg.data[k] += dy * xh;
        db.data[k] += dy;
        dxh[k] = dy * G.data[k];
        m1 += dxh[k];
        m2 += dxh[k] * xh;
      }
      m1 /= static_cast<double>(w);
      m2 /= static_cast<double>(w);
      for (std::size_t k = 0; k < w; ++k)
        dx.data[r * w + k] += (*inv_sigma)[r] * (dxh[k] - m1 - xhat->data[r * w + k] * m2);
    }
  };
  return c;
}

Var Tape::attention(Var q, Var k, Var v) {
  const Tensor& Q = value(q);
  const Tensor& K = value(k);
  const Tensor& V = value(v);
  require(Q.cols() == K.cols(), "attention Q and K widths differ");
  require(K.rows() == V.rows(), "attention K and V lengths differ");
  require(Q.cols() >= 1 && K.rows() >= 1, "attention needs d_k >= 1 and one key");
  const double s = 1.0 / std::sqrt(static_cast<double>(Q.cols()));
  Mat S = (view(Q) * view(K).transpose()) * s;
  for (Eigen::Index r = 0; r < S.rows(); ++r) {
    const double mx = S.row(r).maxCoeff();
    S.row(r) = (S.row(r).array() - mx).exp();
    S.row(r) /= S.row(r).sum();
  }
  auto P = std::make_shared<Mat>(std::move(S));
  Tensor O = Tensor::matrix(Q.rows(), V.cols());
  view(O).noalias() = (*P) * view(V);
  check_finite(O, "attention");
  Var c = push(std::move(O));
  node(c).back = [this, q, k, v, c, P, s] {
    const auto dO = view(nodes_[c.id].grad);
    const Mat dP = dO * view(value(v)).transpose();
    view(g(v)).noalias() += P->transpose() * dO;
    Mat dS = P->array() * (dP.colwise() - (dP.array() * P->array()).rowwise().sum().matrix()).array();
    dS *= s;
    view(g(q)).noalias() += dS * view(value(k));
    view(g(k)).noalias() += dS.transpose() * view(value(q));
  };
  return c;
}

Var Tape::multihead_attention(Var q, Var k, Var v, std::size_t groups, std::size_t heads) {
  const Tensor& Q = value(q);
  const Tensor& K = value(k);
  const Tensor& V = value(v);
  require(Q.shape == K.shape && K.shape == V.shape, "self-attention Q, K, V shapes differ");
  require(groups >= 1 && Q.rows() % groups == 0, "rows not divisible by groups");
  require(heads >= 1 && Q.cols() % heads == 0, "width not divisible by heads");
  const auto seq = static_cast<Eigen::Index>(Q.rows() / groups);
  const auto dh = static_cast<Eigen::Index>(Q.cols() / heads);
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));
  auto P = std::make_shared<std::vector<Mat>>(groups * heads);
  Tensor O(Q.shape);
  const auto q_ = view(Q);
  const auto k_ = view(K);
  const auto v_ = view(V);
  auto o_ = view(O);
  for (std::size_t gi = 0; gi < groups; ++gi)
    for (std::size_t h = 0; h < heads; ++h) {
      const auto r0 = static_cast<Eigen::Index>(gi) * seq;
      const auto c0 = static_cast<Eigen::Index>(h) * dh;
      Mat S = (q_.block(r0, c0, seq, dh) * k_.block(r0, c0, seq, dh).transpose()) * s;
      for (Eigen::Index r = 0; r < seq; ++r) {
        const double mx = S.row(r).maxCoeff();
        S.row(r) = (S.row(r).array() - mx).exp();
        S.row(r) /= S.row(r).sum();
      }
      o_.block(r0, c0, seq, dh).noalias() = S * v_.block(r0, c0, seq, dh);
      (*P)[gi * heads + h] = std::move(S);
    }
  check_finite(O, "multihead_attention");
  Var c = push(std::move(O));
  node(c).back = [this, q, k, v, c, P, groups, heads, seq, dh, s] {
    const auto dO = view(nodes_[c.id].grad);
    auto dq = view(g(q));
    auto dk = view(g(k));
    auto dv = view(g(v));
    const auto q_ = view(value(q));
    const auto k_ = view(value(k));
    const auto v_ = view(value(v));
    for (std::size_t gi = 0; gi < groups; ++gi)
      for (std::size_t h = 0; h < heads; ++h) {
        const auto r0 = static_cast<Eigen::Index>(gi) * seq;
        const auto c0 = static_cast<Eigen::Index>(h) * dh;
        const Mat& Pm = (*P)[gi * heads + h];
        const auto dOb = dO.block(r0, c0, seq, dh);
        const Mat dP = dOb * v_.block(r0, c0, seq, dh).transpose();
        dv.block(r0, c0, seq, dh).noalias() += Pm.transpose() * dOb;
        Mat dS = Pm.array() * (dP.colwise() - (dP.array() * Pm.array()).rowwise().sum().matrix()).array();
        dS *= s;
        dq.block(r0, c0, seq, dh).noalias() += dS * k_.block(r0, c0, seq, dh);
        dk.block(r0, c0, seq, dh).noalias() += dS.transpose() * q_.block(r0, c0, seq, dh);
      }
  };
  return c;
}

Var Tape::concat_cols(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require(A.rows() == B.rows(), "concat row counts differ");
  const std::size_t wa = A.cols();
  const std::size_t wb = B.cols();
  Tensor C = Tensor::matrix(A.rows(), wa + wb);
  for (std::size_t r = 0; r < A.rows(); ++r) {
    std::copy_n(A.data.begin() + r * wa, wa, C.data.begin() + r * (wa + wb));
    std::copy_n(B.data.begin() + r * wb, wb, C.data.begin() + r * (wa + wb) + wa);
  }
  Var c = push(std::move(C));
  node(c).back = [this, a, b, c, wa, wb] {
    const Tensor& dC = nodes_[c.id].grad;
    Tensor& da = g(a);
    Tensor& db = g(b);
    for (std::size_t r = 0; r < dC.rows(); ++r) {
      for (std::size_t k = 0; k < wa; ++k) da.data[r * wa + k] += dC.data[r * (wa + wb) + k];
      for (std::size_t k = 0; k < wb; ++k) db.data[r * wb + k] += dC.data[r * (wa + wb) + wa + k];
    }
  };
  return c;
}

Var Tape::mean_pool(Var a, std::size_t seq) {
  const Tensor& A = value(a);
  require(seq >= 1 && A.rows() % seq == 0, "mean_pool rows not divisible by seq");
  const std::size_t groups = A.rows() / seq;
  const std::size_t w = A.cols();
  Tensor C = Tensor::matrix(groups, w);
  const double inv = 1.0 / static_cast<double>(seq);
  for (std::size_t gi = 0; gi < groups; ++gi)
    for (std::size_t i = 0; i < seq; ++i)
      for (std::size_t k = 0; k < w; ++k) C.data[gi * w + k] += A.data[(gi * seq + i) * w + k];
  for (double& x : C.data) x *= inv;
  Var c = push(std::move(C));
  node(c).back = [this, a, c, seq, groups, w, inv] {
    const Tensor& dC = nodes_[c.id].grad;
    Tensor& da = g(a);
    for (std::size_t gi = 0; gi < groups; ++gi)
      for (std::size_t i = 0; i < seq; ++i)
        for (std::size_t k = 0; k < w; ++k) da.data[(gi * seq + i) * w + k] += inv * dC.data[gi * w + k];
  };
  return c;
}

Var Tape::add_group(Var a, Var e, std::size_t seq) {
  const Tensor& A = value(a);
  const Tensor& E = value(e);
  require(seq >= 1 && A.rows() == E.rows() * seq && A.cols() == E.cols(), "add_group shapes");
  const std::size_t w = A.cols();
  Tensor C = A;
  for (std::size_t r = 0; r < C.rows(); ++r)
    for (std::size_t k = 0; k < w; ++k) C.data[r * w + k] += E.data[(r / seq) * w + k];
  check_finite(C, "add_group");
  Var c = push(std::move(C));
  node(c).back = [this, a, e, c, seq, w] {
    const Tensor& dC = nodes_[c.id].grad;
    Tensor& da = g(a);
    Tensor& de = g(e);
    for (std::size_t r = 0; r < dC.rows(); ++r)
      for (std::size_t k = 0; k < w; ++k) {
        da.data[r * w + k] += dC.data[r * w + k];
        de.data[(r / seq) * w + k] += dC.data[r * w + k];
      }
  };
  return c;
}

Var Tape::token_embed(Var x, Var vec, Var pos) {
  const Tensor& X = value(x);
  const Tensor& Vv = value(vec);
  const Tensor& Pp = value(pos);
  const std::size_t seq = X.cols();
  require(Vv.rows() == seq && Pp.shape == Vv.shape, "token embedding tables do not match sequence");
  const std::size_t w = Vv.cols();
  Tensor C = Tensor::matrix(X.rows() * seq, w);
  for (std::size_t gi = 0; gi < X.rows(); ++gi)
    for (std::size_t i = 0; i < seq; ++i) {
      const double xv = X.data[gi * seq + i];
      for (std::size_t k = 0; k < w; ++k)
        C.data[(gi * seq + i) * w + k] = xv * Vv.data[i * w + k] + Pp.data[i * w + k];
    }
  check_finite(C, "token_embed");
  Var c = push(std::move(C));
  node(c).back = [this, x, vec, pos, c, seq, w] {
    const Tensor& dC = nodes_[c.id].grad;
    const Tensor& X = value(x);
    const Tensor& Vv = value(vec);
    Tensor& dx = g(x);
    Tensor& dv = g(vec);
    Tensor& dp = g(pos);
    for (std::size_t gi = 0; gi < X.rows(); ++gi)
      for (std::size_t i = 0; i < seq; ++i) {
        const double xv = X.data[gi * seq + i];
        double acc = 0.0;
        for (std::size_t k = 0; k < w; ++k) {
          const double d = dC.data[(gi * seq + i) * w + k];
          acc += d * Vv.data[i * w + k];
          dv.data[i * w + k] += d * xv;
          dp.data[i * w + k] += d;
        }
        dx.data[gi * seq + i] += acc;
      }
  };
  return c;
}

Var Tape::reshape(Var a, std::vector<std::size_t> shape) {
  require(shape_size(shape) == value(a).size(), "reshape changes element count");
  Tensor C(std::move(shape), value(a).data);
  Var c = push(std::move(C));
  node(c).back = [this, a, c] {
    const Tensor& dC = nodes_[c.id].grad;
    Tensor& da = g(a);
    for (std::size_t i = 0; i < dC.size(); ++i) da.data[i] += dC.data[i];
  };
  return c;
}

void Tape::backward(Var root, const Tensor& seed) {
  require(seed.size() == value(root).size(), "loss gradient shape differs from output");
  g(root).data = seed.data;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.data.empty() || !n.back) continue;
    n.back();
  }
}

// Layers -------------------------------------------------------------------

Var Dense::forward(Tape& tape, Var x) const {
  return tape.add_bias(tape.matmul(x, tape.param(name_ + ".w")), tape.param(name_ + ".b"));
}

void Dense::init(ParamStore& store, std::uint64_t seed) const {
  store.add_uniform(name_ + ".w", {in_, out_}, in_, seed);
  store.add_uniform(name_ + ".b", {1, out_}, in_, seed);
}

Var LayerNorm::forward(Tape& tape, Var x) const {
  return tape.layer_norm(x, tape.param(name_ + ".gamma"), tape.param(name_ + ".beta"));
}

void LayerNorm::init(ParamStore& store, std::uint64_t) const {
  store.add_constant(name_ + ".gamma", {1, width_}, 1.0);
  store.add_constant(name_ + ".beta", {1, width_}, 0.0);
}

Var SelfAttention::forward(Tape& tape, Var x) const {
  const std::size_t rows = tape.value(x).rows();
  if (rows % seq_ != 0) fail(ErrorCode::ShapeMismatch, "attention input rows not a multiple of seq");
  auto proj = [&](const char* p) { return tape.matmul(x, tape.param(name_ + "." + p)); };
  const Var o = tape.multihead_attention(proj("wq"), proj("wk"), proj("wv"), rows / seq_, heads_);
  return tape.add_bias(tape.matmul(o, tape.param(name_ + ".wo")), tape.param(name_ + ".bo"));
}

void SelfAttention::init(ParamStore& store, std::uint64_t seed) const {
  if (width_ % heads_ != 0) fail(ErrorCode::ShapeMismatch, "head count must divide width");
  for (const char* p : {"wq", "wk", "wv", "wo"}) store.add_uniform(name_ + "." + p, {width_, width_}, width_, seed);
  store.add_uniform(name_ + ".bo", {1, width_}, width_, seed);
}

Var Residual::forward(Tape& tape, Var x) const {
  Var h = x;
  for (const auto& l : inner_) h = l->forward(tape, h);
  return tape.add(x, h);
}

void Residual::init(ParamStore& store, std::uint64_t seed) const {
  for (const auto& l : inner_) l->init(store, seed);
}

Var TokenEmbedding::forward(Tape& tape, Var x) const {
  return tape.token_embed(x, tape.param(name_ + ".value"), tape.param(name_ + ".pos"));
}

void TokenEmbedding::init(ParamStore& store, std::uint64_t seed) const {
  store.add_uniform(name_ + ".value", {seq_, width_}, 1, seed);
  store.add_uniform(name_ + ".pos", {seq_, width_}, 1, seed);
}

void Sequential::init(ParamStore& store, std::uint64_t seed) const {
  for (const auto& l : layers_) l->init(store, seed);
}

Tensor Sequential::forward(ParamStore& store, const Tensor& input) {
  if (!input.all_finite()) fail(ErrorCode::NonFiniteValue, "non-finite network input");
  tape_ = std::make_unique<Tape>(&store);
  Var h = tape_->constant(input);
  for (const auto& l : layers_) h = l->forward(*tape_, h);
  out_ = h;
  return tape_->value(h);
}

void Sequential::backward(const Tensor& loss_grad) {
  if (!tape_) fail(ErrorCode::NoForwardRecord, "backward called before forward");
  tape_->backward(out_, loss_grad);
  tape_.reset();
}

// Optimizer ----------------------------------------------------------------

void adam_step(AdamState& st, ParamStore& params) {
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double c1 = 1.0 - std::pow(st.beta1, t);
  const double c2 = 1.0 - std::pow(st.beta2, t);
  for (auto& [name, p] : params.params()) {
    Tensor& gr = params.grad(name);
    auto& m = st.m[name];
    auto& v = st.v[name];
    if (m.shape != p.shape) m = Tensor(p.shape);
    if (v.shape != p.shape) v = Tensor(p.shape);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = gr.data[i];
      m.data[i] = st.beta1 * m.data[i] + (1.0 - st.beta1) * gi;
      v.data[i] = st.beta2 * v.data[i] + (1.0 - st.beta2) * gi * gi;
      const double mh = m.data[i] / c1;
      const double vh = v.data[i] / c2;
      p.data[i] -= st.lr * mh / (std::sqrt(vh) + st.eps);
    }
  }
  params.zero_grad();
}

std::vector<double> sinusoidal_embedding(double t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) fail(ErrorCode::OddDim, "embedding dimension must be even");
  if (!(t >= 0.0)) fail(ErrorCode::InvalidArgument, "step index must be non-negative");
  std::vector<double> e(dim);
  for (std::size_t i = 0; i < dim / 2; ++i) {
    const double w = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    e[2 * i] = std::sin(t * w);
    e[2 * i + 1] = std::cos(t * w);
  }
  return e;
}

}  // namespace turbo::nn
