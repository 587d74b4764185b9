// SPDX-License-Identifier: Apache-2.0
#include "turbo/diffusion.hpp"

#include <cmath>
#include <numeric>

#include "json.hpp"
#include "turbo/random.hpp"

namespace turbo::diffusion {
namespace {

using nlohmann::json;
using nn::Tape;
using nn::Tensor;
using nn::Var;

constexpr int kFormatVersion = 1;
constexpr std::size_t kSampleChunk = 32;

double cosine_lr(const TrainConfig& cfg, std::size_t epoch) {
  if (cfg.epochs <= 1) return cfg.lr;
  const double p = static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
  return cfg.lr * (cfg.lr_final + (1.0 - cfg.lr_final) * 0.5 * (1.0 + std::cos(M_PI * p)));
}

json train_json(const TrainConfig& c) {
  return {{"epochs", c.epochs}, {"batch", c.batch}, {"lr", c.lr}, {"lr_final", c.lr_final}, {"seed", c.seed}, {"ema", c.ema}};
}

TrainConfig train_from(const json& j, TrainConfig c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.lr_final = j.value("lr_final", c.lr_final);
  c.seed = j.value("seed", c.seed);
  c.ema = j.value("ema", c.ema);
  return c;
}

void check_params(const nn::ParamStore& p) {
  if (!p.all_finite()) fail(ErrorCode::NonFiniteValue, "training produced non-finite parameters");
}

Var dense(Tape& tp, const std::string& name, Var x) {
  return tp.add_bias(tp.matmul(x, tp.param(name + ".w")), tp.param(name + ".b"));
}

Var norm(Tape& tp, const std::string& name, Var x) {
  return tp.layer_norm(x, tp.param(name + ".gamma"), tp.param(name + ".beta"));
}

}  // namespace

// Schedule -----------------------------------------------------------------

NoiseSchedule make_schedule(std::size_t T, double beta_start, double beta_end) {
  if (T < 1) fail(ErrorCode::InvalidRange, "schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    fail(ErrorCode::InvalidRange, "need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.beta.resize(T);
  s.alpha.resize(T);
  s.alpha_bar.resize(T);
  s.sigma.resize(T);
  double prod = 1.0;
  for (std::size_t i = 0; i < T; ++i) {
    const double f = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
    s.beta[i] = beta_start + f * (beta_end - beta_start);
    s.alpha[i] = 1.0 - s.beta[i];
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
    s.sigma[i] = std::sqrt(s.beta[i]);
  }
  return s;
}

NoiseSchedule default_schedule(std::size_t T) {
  const double k = 1000.0 / static_cast<double>(T);
  return make_schedule(T, std::min(1e-4 * k, 0.5), std::min(0.02 * k, 0.5));
}

Vec forward_diffuse(const Vec& x0, std::size_t t, const Vec& eps, const NoiseSchedule& s) {
  if (t < 1 || t > s.T) fail(ErrorCode::StepOutOfRange, "diffusion step " + std::to_string(t) + " outside 1..T");
  if (eps.size() != x0.size()) fail(ErrorCode::ShapeMismatch, "noise and sample lengths differ");
  const double a = std::sqrt(s.ab(t));
  const double b = std::sqrt(1.0 - s.ab(t));
  Vec out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

Tensor EpsModel::predict(const Tensor& xt, const std::vector<std::size_t>& t, const Tensor& cond) const {
  // The tape only reads parameters here, so the const_cast never writes.
  Tape tape(const_cast<nn::ParamStore*>(&params()));
  return tape.value(forward(tape, xt, t, cond));
}

// Denoiser -----------------------------------------------------------------

std::string DenoiserConfig::to_json() const {
  return json{{"dim", dim},     {"cond_dim", cond_dim}, {"width", width},
              {"width2", width2}, {"heads", heads},       {"time_dim", time_dim}}
      .dump();
}

DenoiserConfig DenoiserConfig::from_json(const std::string& text) {
  const auto j = json::parse(text);
  DenoiserConfig c;
  c.dim = j.value("dim", c.dim);
  c.cond_dim = j.value("cond_dim", c.cond_dim);
  c.width = j.value("width", c.width);
  c.width2 = j.value("width2", c.width2);
  c.heads = j.value("heads", c.heads);
  c.time_dim = j.value("time_dim", c.time_dim);
  return c;
}

Denoiser::Denoiser(DenoiserConfig cfg) : cfg_(cfg) {
  if (cfg_.dim < 1 || cfg_.width < 1 || cfg_.width2 < 1) fail(ErrorCode::InvalidArgument, "denoiser widths must be positive");
  if (cfg_.time_dim % 2 != 0) fail(ErrorCode::OddDim, "time embedding width must be even");
}

void Denoiser::init(std::uint64_t seed) {
  store_ = nn::ParamStore{};
  const std::size_t W = cfg_.width, W2 = cfg_.width2;
  nn::Dense("time", cfg_.time_dim, W).init(store_, seed);
  if (cfg_.cond_dim > 0) nn::Dense("cond", cfg_.cond_dim, W).init(store_, seed);
  nn::Dense("emb", W, W).init(store_, seed);
  nn::Dense("emb2", W, W2).init(store_, seed);
  nn::TokenEmbedding("tok", cfg_.dim, W).init(store_, seed);
  nn::Dense("down1", W, W).init(store_, seed);
  nn::LayerNorm("down1.ln", W).init(store_, seed);
  nn::Dense("down2", W, W2).init(store_, seed);
  nn::LayerNorm("down2.ln", W2).init(store_, seed);
  nn::LayerNorm("mid.ln", W2).init(store_, seed);
  nn::SelfAttention("mid.att", W2, cfg_.heads, cfg_.dim).init(store_, seed);
  nn::Dense("up2", 2 * W2, W2).init(store_, seed);
  nn::LayerNorm("up2.ln", W2).init(store_, seed);
  nn::Dense("up1", W2 + W, W).init(store_, seed);
  nn::LayerNorm("up1.ln", W).init(store_, seed);
  nn::Dense("out", W, 1).init(store_, seed);
}

Var Denoiser::forward(Tape& tp, const Tensor& xt, const std::vector<std::size_t>& t, const Tensor& cond) const {
  const std::size_t B = xt.rows(), d = cfg_.dim;
  if (xt.cols() != d || t.size() != B) fail(ErrorCode::ShapeMismatch, "denoiser input shape");
  if (cfg_.cond_dim > 0 && (cond.rows() != B || cond.cols() != cfg_.cond_dim))
    fail(ErrorCode::ShapeMismatch, "condition shape");

  Tensor temb = Tensor::matrix(B, cfg_.time_dim);
  for (std::size_t i = 0; i < B; ++i) {
    const auto e = nn::sinusoidal_embedding(static_cast<double>(t[i]), cfg_.time_dim);
    std::copy(e.begin(), e.end(), temb.data.begin() + static_cast<std::ptrdiff_t>(i * cfg_.time_dim));
  }
  Var e = tp.silu(dense(tp, "time", tp.constant(std::move(temb))));
  if (cfg_.cond_dim > 0) e = tp.add(e, tp.silu(dense(tp, "cond", tp.constant(cond))));
  e = dense(tp, "emb", e);
  const Var e2 = dense(tp, "emb2", e);

  const Var tok = tp.token_embed(tp.constant(xt), tp.param("tok.value"), tp.param("tok.pos"));
  const Var h1 = norm(tp, "down1.ln", tp.silu(dense(tp, "down1", tp.add_group(tok, e, d))));
  const Var h2 = norm(tp, "down2.ln", tp.silu(dense(tp, "down2", tp.add_group(h1, e, d))));
  const Var mid_in = tp.add_group(h2, e2, d);
  const nn::SelfAttention att("mid.att", cfg_.width2, cfg_.heads, d);
  const Var mid = tp.add(mid_in, att.forward(tp, norm(tp, "mid.ln", mid_in)));
  const Var u2 = norm(tp, "up2.ln", tp.silu(dense(tp, "up2", tp.concat_cols(mid, h2))));
  const Var u1 = norm(tp, "up1.ln", tp.silu(dense(tp, "up1", tp.concat_cols(tp.add_group(u2, e2, d), h1))));
  const Var out = dense(tp, "out", tp.add_group(u1, e, d));
  return tp.reshape(out, {B, d});
}

// Training -----------------------------------------------------------------

double train_epoch(const std::vector<TrainSample>& data, EpsModel& net, const NoiseSchedule& s, nn::AdamState& opt,
                   std::uint64_t seed, std::size_t batch) {
  if (data.empty()) fail(ErrorCode::EmptySet, "no training samples");
  if (batch < 1) fail(ErrorCode::InvalidArgument, "batch must be positive");
  const std::size_t d = net.dim(), c = net.cond_dim();
  for (const auto& smp : data)
    if (smp.x0.size() != d || smp.cond.size() != c) fail(ErrorCode::ShapeMismatch, "training sample shape");

  Rng rng(seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());

  double total = 0.0;
  for (std::size_t start = 0; start < order.size(); start += batch) {
    const std::size_t B = std::min(batch, order.size() - start);
    Tensor xt = Tensor::matrix(B, d), eps = Tensor::matrix(B, d), cond = Tensor::matrix(B, c);
    std::vector<std::size_t> ts(B);
    for (std::size_t i = 0; i < B; ++i) {
      const TrainSample& smp = data[order[start + i]];
      ts[i] = 1 + static_cast<std::size_t>(rng.below(s.T));
      Vec e(d);
      for (double& v : e) v = rng.normal();
      const Vec x = forward_diffuse(smp.x0, ts[i], e, s);
      std::copy(x.begin(), x.end(), xt.data.begin() + static_cast<std::ptrdiff_t>(i * d));
      std::copy(e.begin(), e.end(), eps.data.begin() + static_cast<std::ptrdiff_t>(i * d));
      std::copy(smp.cond.begin(), smp.cond.end(), cond.data.begin() + static_cast<std::ptrdiff_t>(i * c));
    }
    Tape tape(&net.params());
    const Var out = net.forward(tape, xt, ts, cond);
    const Tensor& pred = tape.value(out);
    Tensor grad(pred.shape);
    for (std::size_t k = 0; k < pred.size(); ++k) {
      const double r = pred.data[k] - eps.data[k];
      total += r * r;
      grad.data[k] = 2.0 * r / static_cast<double>(B);
    }
    tape.backward(out, grad);
    nn::adam_step(opt, net.params());
  }
  return total / static_cast<double>(data.size());
}

std::vector<double> train(const std::vector<TrainSample>& data, EpsModel& net, const NoiseSchedule& s,
                          const TrainConfig& cfg) {
  nn::AdamState opt;
  std::vector<double> history;
  history.reserve(cfg.epochs);
  auto avg = net.params().params();
  const std::size_t steps = (data.size() + cfg.batch - 1) / std::max<std::size_t>(cfg.batch, 1);
  // Averaged once per epoch, with the per-step decay compounded over its steps.
  const double keep = std::pow(cfg.ema, static_cast<double>(steps));
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    opt.lr = cosine_lr(cfg, e);
    history.push_back(train_epoch(data, net, s, opt, derive_seed(cfg.seed, e), cfg.batch));
    check_params(net.params());
    if (cfg.ema > 0.0)
      for (auto& [name, p] : net.params().params()) {
        Tensor& a = avg.at(name);
        for (std::size_t i = 0; i < p.size(); ++i) a.data[i] = keep * a.data[i] + (1.0 - keep) * p.data[i];
      }
  }
  if (cfg.ema > 0.0) net.params().params() = avg;
  net.params().trained = true;
  return history;
}

// Sampling -----------------------------------------------------------------

std::vector<Vec> sample_normalized(const Tensor& cond, const EpsModel& net, const NoiseSchedule& s,
                                   std::uint64_t seed) {
  if (!net.params().trained) fail(ErrorCode::UntrainedNet, "denoiser has not been trained");
  const std::size_t n = cond.rows(), d = net.dim(), c = cond.cols();
  if (n < 1) fail(ErrorCode::InvalidArgument, "need at least one sample");
  std::vector<Vec> out(n);
  // Samples are independent, so run them in cache-sized chunks.
  for (std::size_t start = 0; start < n; start += kSampleChunk) {
    const std::size_t B = std::min(kSampleChunk, n - start);
    std::vector<Rng> rngs;
    rngs.reserve(B);
    for (std::size_t i = 0; i < B; ++i) rngs.emplace_back(derive_seed(seed, start + i));
    Tensor cc = Tensor::matrix(B, c);
    std::copy(cond.data.begin() + static_cast<std::ptrdiff_t>(start * c),
              cond.data.begin() + static_cast<std::ptrdiff_t>((start + B) * c), cc.data.begin());
    Tensor x = Tensor::matrix(B, d);
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < d; ++j) x.at(i, j) = rngs[i].normal();

    for (std::size_t t = s.T; t >= 1; --t) {
      const Tensor eps = net.predict(x, std::vector<std::size_t>(B, t), cc);
      const double alpha = s.alpha[t - 1];
      const double coef = (1.0 - alpha) / std::sqrt(1.0 - s.ab(t));
      const double sqrt_alpha = std::sqrt(alpha);
      for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          double v = (x.at(i, j) - coef * eps.at(i, j)) / sqrt_alpha;
          if (t > 1) v += s.sigma[t - 1] * rngs[i].normal();
          x.at(i, j) = v;
        }
      if (!x.all_finite()) fail(ErrorCode::NonFiniteValue, "sampler produced non-finite values");
    }
    for (std::size_t i = 0; i < B; ++i)
      out[start + i].assign(x.data.begin() + static_cast<std::ptrdiff_t>(i * d),
                            x.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  }
  return out;
}

// Guidance -----------------------------------------------------------------

GuidanceNet::GuidanceNet(std::size_t latent_dim) : latent_dim_(latent_dim) {}

void GuidanceNet::init(std::uint64_t seed) {
  store_ = nn::ParamStore{};
  nn::Dense("g1", 3, 32).init(store_, seed);
  nn::Dense("g2", 32, 32).init(store_, seed);
  nn::Dense("g3", 32, latent_dim_).init(store_, seed);
}

Var GuidanceNet::build(Tape& tp, const Tensor& x) const {
  Var h = tp.silu(dense(tp, "g1", tp.constant(x)));
  h = tp.silu(dense(tp, "g2", h));
  return dense(tp, "g3", h);
}

std::vector<double> GuidanceNet::train(const data::Table& targets, const data::Table& latents, const TrainConfig& cfg) {
  if (targets.empty() || targets.size() != latents.size()) fail(ErrorCode::ShapeMismatch, "guidance training set");
  const std::size_t n = targets.size();
  nn::AdamState opt;
  std::vector<double> history;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    opt.lr = cosine_lr(cfg, e);
    Rng rng(derive_seed(cfg.seed, e));
    rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch) {
      const std::size_t B = std::min(cfg.batch, n - start);
      Tensor x = Tensor::matrix(B, 3), y = Tensor::matrix(B, latent_dim_);
      for (std::size_t i = 0; i < B; ++i) {
        const auto& tr = targets[order[start + i]];
        const auto& lr = latents[order[start + i]];
        if (tr.size() != 3 || lr.size() != latent_dim_) fail(ErrorCode::ShapeMismatch, "guidance row width");
        for (std::size_t k = 0; k < 3; ++k) x.at(i, k) = tr[k];
        for (std::size_t k = 0; k < latent_dim_; ++k) y.at(i, k) = lr[k];
      }
      Tape tape(&store_);
      const Var out = build(tape, x);
      const Tensor& p = tape.value(out);
      Tensor g(p.shape);
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double r = p.data[k] - y.data[k];
        total += r * r;
        g.data[k] = 2.0 * r / static_cast<double>(B * latent_dim_);
      }
      tape.backward(out, g);
      nn::adam_step(opt, store_);
    }
    check_params(store_);
    history.push_back(total / static_cast<double>(n * latent_dim_));
  }
  store_.trained = true;
  return history;
}

Vec GuidanceNet::forward(const Vec& target_norm) const {
  if (target_norm.size() != 3) fail(ErrorCode::ShapeMismatch, "guidance input must have 3 components");
  Tape tape(const_cast<nn::ParamStore*>(&store_));
  return tape.value(build(tape, Tensor::row(target_norm))).data;
}

Vec ConditionVector::flat() const {
  Vec v(target.begin(), target.end());
  v.insert(v.end(), guidance.begin(), guidance.end());
  return v;
}

ConditionVector build_condition(const PerformanceTriple& target, const data::NormStats& stats, const GuidanceNet* guide,
                                std::size_t guide_dim) {
  if (!stats.fitted() || stats.dim() != 3) fail(ErrorCode::UnfittedStats, "target statistics are not fitted");
  ConditionVector c;
  const auto raw = target.to_array();
  for (std::size_t m = 0; m < 3; ++m) {
    c.target[m] = stats.apply(m, raw[m]);
    if (!(c.target[m] >= -0.5 && c.target[m] <= 1.5))
      fail(ErrorCode::OutOfBounds, std::string(kMetricNames[m]) + " target far outside the training range");
  }
  if (guide) {
    c.guidance = guide->forward(Vec(c.target.begin(), c.target.end()));
  } else {
    c.guidance.assign(guide_dim, 0.0);
  }
  return c;
}

Samples sample_designs(const ConditionVector& cond, const EpsModel& net, const NoiseSchedule& s, std::size_t n,
                       std::uint64_t seed, const data::NormStats& x_stats, const data::Bounds& bounds) {
  if (n < 1) fail(ErrorCode::InvalidArgument, "need at least one sample");
  const Vec c = cond.flat();
  Tensor cm = Tensor::matrix(n, c.size());
  for (std::size_t i = 0; i < n; ++i) std::copy(c.begin(), c.end(), cm.data.begin() + static_cast<std::ptrdiff_t>(i * c.size()));
  const auto raw = sample_normalized(cm, net, s, seed);
  Samples out;
  std::size_t clamped = 0;
  for (const auto& z : raw) {
    const data::Row x = x_stats.inverse(z);
    DesignArray d{};
    std::copy(x.begin(), x.end(), d.begin());
    const std::size_t k = bounds.clamp(d);
    clamped += k;
    out.designs.push_back(d);
    out.clamped.push_back(k);
  }
  out.clamp_rate = static_cast<double>(clamped) / static_cast<double>(n * kDesignDim);
  return out;
}

// Designer -----------------------------------------------------------------

std::string DesignerConfig::to_json() const {
  json j;
  j["net"] = json::parse(net.to_json());
  j["T"] = T;
  j["guidance"] = guidance;
  j["guide_dim"] = guide_dim;
  j["train"] = train_json(train);
  j["guide_train"] = train_json(guide_train);
  j["seed"] = seed;
  return j.dump();
}

DesignerConfig DesignerConfig::from_json(const std::string& text) {
  const auto j = json::parse(text);
  DesignerConfig c;
  if (j.contains("net")) c.net = DenoiserConfig::from_json(j["net"].dump());
  c.T = j.value("T", c.T);
  c.guidance = j.value("guidance", c.guidance);
  c.guide_dim = j.value("guide_dim", c.guide_dim);
  if (j.contains("train")) c.train = train_from(j["train"], c.train);
  if (j.contains("guide_train")) c.guide_train = train_from(j["guide_train"], c.guide_train);
  c.seed = j.value("seed", c.seed);
  c.net.cond_dim = 3 + c.guide_dim;
  return c;
}

Designer Designer::fit(const data::Dataset& ds, const DesignerConfig& cfg, const data::Bounds& bounds,
                       const LatentFn& latent) {
  const data::Dataset tr = ds.subset(data::Split::Train);
  if (tr.size() < 2) fail(ErrorCode::DatasetTooSmall, "designer needs training rows");
  Designer m;
  m.cfg_ = cfg;
  m.cfg_.net.dim = kDesignDim;
  m.cfg_.net.cond_dim = 3 + cfg.guide_dim;
  m.bounds_ = bounds;
  m.sched_ = default_schedule(cfg.T);
  m.x_stats_ = data::fit_norm(data::to_table(tr.inputs), data::NormMode::ZScore);
  m.y_stats_ = data::fit_norm(data::to_table(tr.labels), data::NormMode::Range);

  if (cfg.guidance) {
    if (!latent) fail(ErrorCode::InvalidArgument, "guidance enabled without a latent source");
    const data::Table lat = latent(tr.inputs);
    m.guide_.emplace(cfg.guide_dim);
    m.guide_->init(derive_seed(cfg.seed, 2));
    m.guide_->train(m.y_stats_.apply(data::to_table(tr.labels)), lat, cfg.guide_train);
  }

  std::vector<TrainSample> samples;
  samples.reserve(tr.size());
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const data::Row x(tr.inputs[i].begin(), tr.inputs[i].end());
    samples.push_back({m.x_stats_.apply(x), m.condition(tr.labels[i]).flat()});
  }
  m.net_ = Denoiser(m.cfg_.net);
  m.net_.init(derive_seed(cfg.seed, 1));
  m.history_ = diffusion::train(samples, m.net_, m.sched_, cfg.train);
  return m;
}

ConditionVector Designer::condition(const PerformanceTriple& target) const {
  return build_condition(target, y_stats_, guide_ ? &*guide_ : nullptr, cfg_.guide_dim);
}

Samples Designer::generate(const PerformanceTriple& target, std::size_t n, std::uint64_t seed) const {
  return sample_designs(condition(target), net_, sched_, n, seed, x_stats_, bounds_);
}

Samples Designer::generate_each(const std::vector<PerformanceTriple>& targets, std::uint64_t seed) const {
  if (targets.empty()) fail(ErrorCode::InvalidArgument, "no targets");
  const std::size_t c = net_.cond_dim();
  Tensor cm = Tensor::matrix(targets.size(), c);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const Vec v = condition(targets[i]).flat();
    std::copy(v.begin(), v.end(), cm.data.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  Samples out;
  std::size_t clamped = 0;
  for (const auto& z : sample_normalized(cm, net_, sched_, seed)) {
    const data::Row x = x_stats_.inverse(z);
    DesignArray d{};
    std::copy(x.begin(), x.end(), d.begin());
    const std::size_t k = bounds_.clamp(d);
    clamped += k;
    out.designs.push_back(d);
    out.clamped.push_back(k);
  }
  out.clamp_rate = static_cast<double>(clamped) / static_cast<double>(targets.size() * kDesignDim);
  return out;
}

void Designer::save(const std::string& path) const {
  net_.params().save(path);
  json j;
  j["format"] = "turbo-designer";
  j["version"] = kFormatVersion;
  j["config"] = json::parse(cfg_.to_json());
  j["schedule"] = {{"T", sched_.T}, {"beta_start", sched_.beta_start}, {"beta_end", sched_.beta_end}};
  j["x_stats"] = json::parse(x_stats_.to_json());
  j["y_stats"] = json::parse(y_stats_.to_json());
  j["bounds"] = {{"lo", bounds_.lo}, {"hi", bounds_.hi}};
  j["guidance"] = guide_.has_value();
  if (guide_) j["guide_params"] = json::parse(guide_->params().to_json());
  j["seed_lineage"] = {{"seed", cfg_.seed},
                       {"denoiser_init", derive_seed(cfg_.seed, 1)},
                       {"guide_init", derive_seed(cfg_.seed, 2)},
                       {"train", cfg_.train.seed}};
  j["loss_history"] = history_;
  data::write_file(path + ".json", j.dump(1));
}

Designer Designer::load(const std::string& path) {
  const auto j = json::parse(data::read_file(path + ".json"));
  if (j.value("format", "") != "turbo-designer") fail(ErrorCode::UnsupportedFormat, "not a designer sidecar");
  if (j.value("version", 0) != kFormatVersion) fail(ErrorCode::SchemaVersionMismatch, "designer sidecar version");
  Designer m;
  m.cfg_ = DesignerConfig::from_json(j.at("config").dump());
  const auto& s = j.at("schedule");
  m.sched_ = make_schedule(s.at("T").get<std::size_t>(), s.at("beta_start").get<double>(), s.at("beta_end").get<double>());
  m.x_stats_ = data::NormStats::from_json(j.at("x_stats").dump());
  m.y_stats_ = data::NormStats::from_json(j.at("y_stats").dump());
  m.bounds_.lo = j.at("bounds").at("lo").get<DesignArray>();
  m.bounds_.hi = j.at("bounds").at("hi").get<DesignArray>();
  if (j.value("guidance", false)) {
    m.guide_.emplace(m.cfg_.guide_dim);
    m.guide_->params() = nn::ParamStore::from_json(j.at("guide_params").dump());
  }
  m.history_ = j.value("loss_history", std::vector<double>{});
  m.net_ = Denoiser(m.cfg_.net);
  m.net_.params() = nn::ParamStore::load(path);
  return m;
}

}  // namespace turbo::diffusion
