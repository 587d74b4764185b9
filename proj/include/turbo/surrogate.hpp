// SPDX-License-Identifier: Apache-2.0
//
// Transformer-encoder regression from the 21 design variables to
// (mass flow, pressure ratio, efficiency).
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "turbo/common.hpp"
#include "turbo/data.hpp"
#include "turbo/nn.hpp"

namespace turbo::surrogate {

struct SurrogateConfig {
  std::size_t width = 64;
  std::size_t depth = 3;
  std::size_t heads = 4;
  std::size_t ff = 128;
  std::size_t latent = 16;
  std::size_t epochs = 60;
  std::size_t batch = 32;
  double lr = 1e-3;
  double lr_final = 0.05;
  std::size_t patience = 20;
  double val_fraction = 0.1;
  /// Wall-clock cap on training in seconds; 0 disables it.
  double time_limit_s = 0.0;
  std::uint64_t seed = 3;

  std::string to_json() const;
  static SurrogateConfig from_json(const std::string& text);
};

struct History {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

struct MetricsReport {
  std::array<data::RegressionMetrics, 3> metrics{};
  std::size_t n = 0;

  std::string to_json() const;
};

class Surrogate {
 public:
  explicit Surrogate(SurrogateConfig cfg = {});

  /// MSE on z-scored outputs, Adam, cosine decay, early stop on a 90/10
  /// split of `ds` (all rows are used regardless of their split tag).
  static Surrogate train(const data::Dataset& ds, const SurrogateConfig& cfg, History* history = nullptr);

  /// [21 x width] tokens x_i * value_i + pos_i of the normalized input.
  nn::Tensor encode_tokens(const DesignArray& x) const;
  PerformanceTriple predict(const DesignArray& x) const;
  std::vector<PerformanceTriple> predict_batch(const std::vector<DesignArray>& xs) const;
  /// Pooled-and-projected representation feeding the output head.
  data::Table latent(const std::vector<DesignArray>& xs) const;

  void save(const std::string& path) const;
  static Surrogate load(const std::string& path);

  const SurrogateConfig& config() const { return cfg_; }
  const data::NormStats& x_stats() const { return x_stats_; }
  const data::NormStats& y_stats() const { return y_stats_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }

  /// Builds fresh parameters from the config seed (for tests and training).
  void init();
  void set_stats(data::NormStats x, data::NormStats y);

 private:
  struct Out {
    nn::Var latent;
    nn::Var y;
  };
  Out build(nn::Tape& tape, const nn::Tensor& xn) const;
  nn::Tensor normalized_inputs(const std::vector<DesignArray>& xs) const;
  void require_ready() const;

  SurrogateConfig cfg_;
  nn::ParamStore store_;
  data::NormStats x_stats_, y_stats_;
};

MetricsReport evaluate(const Surrogate& net, const data::Dataset& testset);

}  // namespace turbo::surrogate
