// SPDX-License-Identifier: Apache-2.0
//
// Conditional DDPM over normalized design vectors: noise schedule, the
// token U-Net denoiser, the target-to-latent guidance net, training and
// ancestral sampling.
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "turbo/common.hpp"
#include "turbo/data.hpp"
#include "turbo/nn.hpp"

namespace turbo::diffusion {

using Vec = std::vector<double>;

/// Arrays are indexed by step t in 1..T at position t-1.
struct NoiseSchedule {
  std::size_t T = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  Vec beta, alpha, alpha_bar, sigma;

  double ab(std::size_t t) const { return alpha_bar.at(t - 1); }
};

NoiseSchedule make_schedule(std::size_t T, double beta_start, double beta_end);
/// Linear schedule whose endpoints are the T=1000 pair (1e-4, 0.02) scaled by 1000/T.
NoiseSchedule default_schedule(std::size_t T = 200);

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Vec forward_diffuse(const Vec& x0, std::size_t t, const Vec& eps, const NoiseSchedule& s);

/// Anything that predicts the added noise. Stubs implement this directly.
class EpsModel {
 public:
  virtual ~EpsModel() = default;
  virtual std::size_t dim() const = 0;
  virtual std::size_t cond_dim() const = 0;
  /// Records a forward pass; returns eps-hat [B x dim].
  virtual nn::Var forward(nn::Tape& tape, const nn::Tensor& xt, const std::vector<std::size_t>& t,
                          const nn::Tensor& cond) const = 0;
  virtual nn::ParamStore& params() = 0;
  virtual const nn::ParamStore& params() const = 0;

  nn::Tensor predict(const nn::Tensor& xt, const std::vector<std::size_t>& t, const nn::Tensor& cond) const;
};

struct DenoiserConfig {
  std::size_t dim = kDesignDim;
  std::size_t cond_dim = 3 + 16;
  std::size_t width = 64;
  std::size_t width2 = 128;
  std::size_t heads = 4;
  std::size_t time_dim = 32;

  std::string to_json() const;
  static DenoiserConfig from_json(const std::string& text);
};

/// Scalars become tokens; two down blocks (width -> width2), an attention
/// bottleneck, two up blocks with skip concatenation, per-token projection.
class Denoiser : public EpsModel {
 public:
  explicit Denoiser(DenoiserConfig cfg = {});
  void init(std::uint64_t seed);

  std::size_t dim() const override { return cfg_.dim; }
  std::size_t cond_dim() const override { return cfg_.cond_dim; }
  nn::Var forward(nn::Tape& tape, const nn::Tensor& xt, const std::vector<std::size_t>& t,
                  const nn::Tensor& cond) const override;
  nn::ParamStore& params() override { return store_; }
  const nn::ParamStore& params() const override { return store_; }
  const DenoiserConfig& config() const { return cfg_; }

 private:
  DenoiserConfig cfg_;
  nn::ParamStore store_;
};

struct TrainSample {
  Vec x0;    // normalized design
  Vec cond;  // flattened condition vector
};

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch = 64;
  double lr = 2e-3;
  /// Final learning rate as a fraction of lr (cosine decay); 1 keeps it flat.
  double lr_final = 0.05;
  std::uint64_t seed = 1;
  /// Decay of the weight average swapped in after training; 0 disables it.
  double ema = 0.0;
};

/// One shuffled pass: per sample t ~ U{1..T}, eps ~ N(0, I), loss
/// ||eps - eps_hat||^2; Adam step per minibatch. Returns the mean loss per sample.
double train_epoch(const std::vector<TrainSample>& data, EpsModel& net, const NoiseSchedule& s, nn::AdamState& opt,
                   std::uint64_t seed, std::size_t batch = 64);

/// Full run with cosine learning-rate decay; marks the params trained.
std::vector<double> train(const std::vector<TrainSample>& data, EpsModel& net, const NoiseSchedule& s,
                          const TrainConfig& cfg);

/// Ancestral sampling in normalized space; row i of `cond` conditions sample i.
/// Sample i draws all its noise from derive_seed(seed, i).
std::vector<Vec> sample_normalized(const nn::Tensor& cond, const EpsModel& net, const NoiseSchedule& s,
                                   std::uint64_t seed);

/// 3 -> 32 -> 32 -> latent dense net from normalized targets to the
/// surrogate's pooled representation.
class GuidanceNet {
 public:
  explicit GuidanceNet(std::size_t latent_dim = 16);
  void init(std::uint64_t seed);
  std::vector<double> train(const data::Table& targets, const data::Table& latents, const TrainConfig& cfg);
  Vec forward(const Vec& target_norm) const;
  std::size_t latent_dim() const { return latent_dim_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }

 private:
  nn::Var build(nn::Tape& tape, const nn::Tensor& x) const;
  std::size_t latent_dim_;
  nn::ParamStore store_;
};

struct ConditionVector {
  std::array<double, 3> target{};
  Vec guidance;

  Vec flat() const;
};

/// Normalizes the target against `stats` (3 columns) and appends the
/// guidance embedding, or zeros when `guide` is null.
ConditionVector build_condition(const PerformanceTriple& target, const data::NormStats& stats, const GuidanceNet* guide,
                                std::size_t guide_dim = 16);

struct Samples {
  std::vector<DesignArray> designs;
  std::vector<std::size_t> clamped;  // coordinates clamped per sample
  double clamp_rate = 0.0;
};

/// Samples n designs for one condition, denormalizes and clamps to bounds.
Samples sample_designs(const ConditionVector& cond, const EpsModel& net, const NoiseSchedule& s, std::size_t n,
                       std::uint64_t seed, const data::NormStats& x_stats, const data::Bounds& bounds);

struct DesignerConfig {
  DenoiserConfig net;
  std::size_t T = 200;
  bool guidance = true;
  std::size_t guide_dim = 16;
  TrainConfig train{150, 64, 2e-3, 0.05, 1, 0.995};
  TrainConfig guide_train{300, 64, 3e-3, 0.05, 2, 0.0};
  std::uint64_t seed = 11;

  std::string to_json() const;
  static DesignerConfig from_json(const std::string& text);
};

/// Latents used as guidance targets for a batch of raw designs.
using LatentFn = std::function<data::Table(const std::vector<DesignArray>&)>;

/// The trained generative model with everything needed to sample.
class Designer {
 public:
  Designer() = default;
  /// Fits stats, the optional guidance net (needs `latent`), and the denoiser
  /// on the dataset's training split.
  static Designer fit(const data::Dataset& ds, const DesignerConfig& cfg, const data::Bounds& bounds,
                      const LatentFn& latent = {});

  ConditionVector condition(const PerformanceTriple& target) const;
  Samples generate(const PerformanceTriple& target, std::size_t n, std::uint64_t seed) const;
  /// One sample per target, batched; sample i uses derive_seed(seed, i).
  Samples generate_each(const std::vector<PerformanceTriple>& targets, std::uint64_t seed) const;

  void save(const std::string& path) const;
  static Designer load(const std::string& path);

  const DesignerConfig& config() const { return cfg_; }
  const NoiseSchedule& schedule() const { return sched_; }
  const std::vector<double>& loss_history() const { return history_; }
  const data::NormStats& x_stats() const { return x_stats_; }
  const data::NormStats& y_stats() const { return y_stats_; }

 private:
  DesignerConfig cfg_;
  NoiseSchedule sched_;
  Denoiser net_;
  std::optional<GuidanceNet> guide_;
  data::NormStats x_stats_, y_stats_;
  data::Bounds bounds_ = data::Bounds::defaults();
  std::vector<double> history_;
};

}  // namespace turbo::diffusion
