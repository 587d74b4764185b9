// SPDX-License-Identifier: Apache-2.0
#include "turbo/surrogate.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "turbo/random.hpp"

namespace turbo::surrogate {
namespace {

using nlohmann::json;
using nn::Tape;
using nn::Tensor;
using nn::Var;

constexpr int kFormatVersion = 1;
constexpr std::size_t kChunk = 256;

Var dense(Tape& tp, const std::string& name, Var x) {
  return tp.add_bias(tp.matmul(x, tp.param(name + ".w")), tp.param(name + ".b"));
}

Var norm(Tape& tp, const std::string& name, Var x) {
  return tp.layer_norm(x, tp.param(name + ".gamma"), tp.param(name + ".beta"));
}

std::string block(std::size_t l) { return "enc" + std::to_string(l); }

}  // namespace

std::string SurrogateConfig::to_json() const {
  return json{{"width", width},       {"depth", depth},     {"heads", heads},         {"ff", ff},
              {"latent", latent},     {"epochs", epochs},   {"batch", batch},         {"lr", lr},
              {"lr_final", lr_final}, {"patience", patience}, {"val_fraction", val_fraction},
              {"time_limit_s", time_limit_s}, {"seed", seed}}
      .dump();
}

SurrogateConfig SurrogateConfig::from_json(const std::string& text) {
  const auto j = json::parse(text);
  SurrogateConfig c;
  c.width = j.value("width", c.width);
  c.depth = j.value("depth", c.depth);
  c.heads = j.value("heads", c.heads);
  c.ff = j.value("ff", c.ff);
  c.latent = j.value("latent", c.latent);
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.lr_final = j.value("lr_final", c.lr_final);
  c.patience = j.value("patience", c.patience);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.time_limit_s = j.value("time_limit_s", c.time_limit_s);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::string MetricsReport::to_json() const {
  json j;
  j["n"] = n;
  for (std::size_t m = 0; m < 3; ++m)
    j["metrics"][std::string(kMetricNames[m])] = {
        {"r2", metrics[m].r2}, {"nrmse", metrics[m].nrmse}, {"mae", metrics[m].mae}};
  return j.dump();
}

Surrogate::Surrogate(SurrogateConfig cfg) : cfg_(cfg) {
  if (cfg_.width % cfg_.heads != 0) fail(ErrorCode::ShapeMismatch, "head count must divide width");
}

void Surrogate::init() {
  store_ = nn::ParamStore{};
  const std::uint64_t seed = derive_seed(cfg_.seed, 1);
  const std::size_t W = cfg_.width;
  nn::TokenEmbedding("tok", kDesignDim, W).init(store_, seed);
  for (std::size_t l = 0; l < cfg_.depth; ++l) {
    const std::string b = block(l);
    nn::LayerNorm(b + ".ln1", W).init(store_, seed);
    nn::SelfAttention(b + ".att", W, cfg_.heads, kDesignDim).init(store_, seed);
    nn::LayerNorm(b + ".ln2", W).init(store_, seed);
    nn::Dense(b + ".ff1", W, cfg_.ff).init(store_, seed);
    nn::Dense(b + ".ff2", cfg_.ff, W).init(store_, seed);
  }
  nn::LayerNorm("final.ln", W).init(store_, seed);
  nn::Dense("latent", W, cfg_.latent).init(store_, seed);
  nn::Dense("head", cfg_.latent, 3).init(store_, seed);
}

void Surrogate::set_stats(data::NormStats x, data::NormStats y) {
  if (x.dim() != kDesignDim || y.dim() != 3) fail(ErrorCode::ShapeMismatch, "surrogate stats widths");
  x_stats_ = std::move(x);
  y_stats_ = std::move(y);
}

Surrogate::Out Surrogate::build(Tape& tp, const Tensor& xn) const {
  Var h = tp.token_embed(tp.constant(xn), tp.param("tok.value"), tp.param("tok.pos"));
  for (std::size_t l = 0; l < cfg_.depth; ++l) {
    const std::string b = block(l);
    const nn::SelfAttention att(b + ".att", cfg_.width, cfg_.heads, kDesignDim);
    h = tp.add(h, att.forward(tp, norm(tp, b + ".ln1", h)));
    h = tp.add(h, dense(tp, b + ".ff2", tp.silu(dense(tp, b + ".ff1", norm(tp, b + ".ln2", h)))));
  }
  const Var pooled = tp.mean_pool(norm(tp, "final.ln", h), kDesignDim);
  const Var lat = tp.silu(dense(tp, "latent", pooled));
  return {lat, dense(tp, "head", lat)};
}

void Surrogate::require_ready() const {
  if (!x_stats_.fitted() || !y_stats_.fitted()) fail(ErrorCode::UnfittedStats, "surrogate statistics are not fitted");
  if (!store_.trained) fail(ErrorCode::UntrainedNet, "surrogate has not been trained");
}

Tensor Surrogate::normalized_inputs(const std::vector<DesignArray>& xs) const {
  if (!x_stats_.fitted()) fail(ErrorCode::UnfittedStats, "surrogate statistics are not fitted");
  Tensor t = Tensor::matrix(xs.size(), kDesignDim);
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = 0; j < kDesignDim; ++j) t.at(i, j) = x_stats_.apply(j, xs[i][j]);
  return t;
}

Tensor Surrogate::encode_tokens(const DesignArray& x) const {
  const Tensor xn = normalized_inputs({x});
  Tape tape(const_cast<nn::ParamStore*>(&store_));
  return tape.value(tape.token_embed(tape.constant(xn), tape.param("tok.value"), tape.param("tok.pos")));
}

std::vector<PerformanceTriple> Surrogate::predict_batch(const std::vector<DesignArray>& xs) const {
  require_ready();
  std::vector<PerformanceTriple> out;
  out.reserve(xs.size());
  for (std::size_t s = 0; s < xs.size(); s += kChunk) {
    const std::vector<DesignArray> part(xs.begin() + static_cast<std::ptrdiff_t>(s),
                                        xs.begin() + static_cast<std::ptrdiff_t>(std::min(xs.size(), s + kChunk)));
    Tape tape(const_cast<nn::ParamStore*>(&store_));
    const Tensor& y = tape.value(build(tape, normalized_inputs(part)).y);
    for (std::size_t i = 0; i < part.size(); ++i) {
      std::array<double, 3> v{};
      for (std::size_t m = 0; m < 3; ++m) v[m] = y_stats_.inverse(m, y.at(i, m));
      out.push_back(PerformanceTriple::from_array(v));
    }
  }
  return out;
}

PerformanceTriple Surrogate::predict(const DesignArray& x) const { return predict_batch({x}).front(); }

data::Table Surrogate::latent(const std::vector<DesignArray>& xs) const {
  require_ready();
  data::Table out;
  out.reserve(xs.size());
  for (std::size_t s = 0; s < xs.size(); s += kChunk) {
    const std::vector<DesignArray> part(xs.begin() + static_cast<std::ptrdiff_t>(s),
                                        xs.begin() + static_cast<std::ptrdiff_t>(std::min(xs.size(), s + kChunk)));
    Tape tape(const_cast<nn::ParamStore*>(&store_));
    const Tensor& l = tape.value(build(tape, normalized_inputs(part)).latent);
    for (std::size_t i = 0; i < part.size(); ++i)
      out.emplace_back(l.data.begin() + static_cast<std::ptrdiff_t>(i * cfg_.latent),
                       l.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * cfg_.latent));
  }
  return out;
}

Surrogate Surrogate::train(const data::Dataset& ds, const SurrogateConfig& cfg, History* history) {
  if (ds.size() < 100) fail(ErrorCode::DatasetTooSmall, "surrogate training needs at least 100 rows");
  const auto t0 = std::chrono::steady_clock::now();
  Surrogate net(cfg);
  const std::size_t n = ds.size();
  const auto tags = data::make_split(n, cfg.val_fraction, derive_seed(cfg.seed, 7));
  std::vector<std::size_t> tr, va;
  for (std::size_t i = 0; i < n; ++i) (tags[i] == data::Split::Test ? va : tr).push_back(i);

  data::Table xt, yt;
  for (std::size_t i : tr) {
    xt.emplace_back(ds.inputs[i].begin(), ds.inputs[i].end());
    const auto y = ds.labels[i].to_array();
    yt.emplace_back(y.begin(), y.end());
  }
  net.set_stats(data::fit_norm(xt, data::NormMode::ZScore, true), data::fit_norm(yt, data::NormMode::ZScore, true));
  net.init();

  auto batch_tensors = [&](const std::vector<std::size_t>& idx, std::size_t from, std::size_t count) {
    std::vector<DesignArray> xs;
    Tensor y = Tensor::matrix(count, 3);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t r = idx[from + i];
      xs.push_back(ds.inputs[r]);
      const auto v = ds.labels[r].to_array();
      for (std::size_t m = 0; m < 3; ++m) y.at(i, m) = net.y_stats_.apply(m, v[m]);
    }
    return std::make_pair(net.normalized_inputs(xs), y);
  };

  nn::AdamState opt;
  History h;
  double best = INFINITY;
  auto best_params = net.store_.params();
  std::size_t since_best = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const double p = cfg.epochs > 1 ? static_cast<double>(e) / static_cast<double>(cfg.epochs - 1) : 0.0;
    opt.lr = cfg.lr * (cfg.lr_final + (1.0 - cfg.lr_final) * 0.5 * (1.0 + std::cos(M_PI * p)));
    Rng rng(derive_seed(cfg.seed, 100 + e));
    rng.shuffle(tr.begin(), tr.end());
    double total = 0.0;
    for (std::size_t s = 0; s < tr.size(); s += cfg.batch) {
      const std::size_t B = std::min(cfg.batch, tr.size() - s);
      const auto [xn, y] = batch_tensors(tr, s, B);
      Tape tape(&net.store_);
      const Var out = net.build(tape, xn).y;
      const Tensor& pred = tape.value(out);
      Tensor g(pred.shape);
      for (std::size_t k = 0; k < pred.size(); ++k) {
        const double r = pred.data[k] - y.data[k];
        total += r * r;
        g.data[k] = 2.0 * r / static_cast<double>(B * 3);
      }
      tape.backward(out, g);
      nn::adam_step(opt, net.store_);
    }
    if (!net.store_.all_finite()) fail(ErrorCode::NonFiniteValue, "surrogate training produced non-finite parameters");
    h.train_loss.push_back(total / static_cast<double>(tr.size() * 3));

    double vloss = h.train_loss.back();
    if (!va.empty()) {
      vloss = 0.0;
      for (std::size_t s = 0; s < va.size(); s += kChunk) {
        const std::size_t B = std::min(kChunk, va.size() - s);
        const auto [xn, y] = batch_tensors(va, s, B);
        Tape tape(&net.store_);
        const Tensor& pred = tape.value(net.build(tape, xn).y);
        for (std::size_t k = 0; k < pred.size(); ++k) vloss += (pred.data[k] - y.data[k]) * (pred.data[k] - y.data[k]);
      }
      vloss /= static_cast<double>(va.size() * 3);
    }
    h.val_loss.push_back(vloss);
    if (vloss < best) {
      best = vloss;
      best_params = net.store_.params();
      h.best_epoch = e;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      h.early_stopped = true;
      break;
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cfg.time_limit_s > 0.0 && elapsed > cfg.time_limit_s) {
      h.early_stopped = true;
      break;
    }
  }
  net.store_.params() = best_params;
  net.store_.zero_grad();
  net.store_.trained = true;
  if (history) *history = std::move(h);
  return net;
}

void Surrogate::save(const std::string& path) const {
  store_.save(path);
  json j;
  j["format"] = "turbo-surrogate";
  j["version"] = kFormatVersion;
  j["config"] = json::parse(cfg_.to_json());
  j["x_stats"] = json::parse(x_stats_.to_json());
  j["y_stats"] = json::parse(y_stats_.to_json());
  data::write_file(path + ".json", j.dump(1));
}

Surrogate Surrogate::load(const std::string& path) {
  const auto j = json::parse(data::read_file(path + ".json"));
  if (j.value("format", "") != "turbo-surrogate") fail(ErrorCode::UnsupportedFormat, "not a surrogate sidecar");
  if (j.value("version", 0) != kFormatVersion) fail(ErrorCode::SchemaVersionMismatch, "surrogate sidecar version");
  Surrogate s(SurrogateConfig::from_json(j.at("config").dump()));
  s.set_stats(data::NormStats::from_json(j.at("x_stats").dump()), data::NormStats::from_json(j.at("y_stats").dump()));
  s.store_ = nn::ParamStore::load(path);
  return s;
}

MetricsReport evaluate(const Surrogate& net, const data::Dataset& testset) {
  if (testset.size() == 0) fail(ErrorCode::EmptySet, "empty test set");
  const auto pred = net.predict_batch(testset.inputs);
  MetricsReport r;
  r.n = testset.size();
  for (std::size_t m = 0; m < 3; ++m) {
    std::vector<double> t, p;
    for (std::size_t i = 0; i < testset.size(); ++i) {
      t.push_back(testset.labels[i].to_array()[m]);
      p.push_back(pred[i].to_array()[m]);
    }
    r.metrics[m] = data::regression_metrics(t, p);
  }
  return r;
}

}  // namespace turbo::surrogate
