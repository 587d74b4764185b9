// SPDX-License-Identifier: Apache-2.0
//
// Acceptance harness: one PASS/FAIL line per criterion. Optional arguments
// select criteria by name.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <memory>
#include <numbers>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "support/gradcheck.hpp"
#include "turbo/agent.hpp"
#include "turbo/data.hpp"
#include "turbo/diffusion.hpp"
#include "turbo/geometry.hpp"
#include "turbo/llm.hpp"
#include "turbo/nn.hpp"
#include "turbo/optimizer.hpp"
#include "turbo/oracle.hpp"
#include "turbo/random.hpp"
#include "turbo/surrogate.hpp"

using namespace turbo;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + ("failed: " + what);
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

fs::path work_dir() {
  const fs::path p = fs::path(TURBO_ACCEPTANCE_WORK_DIR);
  fs::create_directories(p);
  return p;
}

DesignArray anchor_design() {
  return json::parse(data::read_file(TURBO_FIXTURE_DIR "/fixtures/anchor_design.json")).at("design").get<DesignArray>();
}

std::string run_command(const std::string& cmd, int& status) {
  std::string out;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) {
    status = -1;
    return out;
  }
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) out.append(buf, n);
  status = pclose(p);
  return out;
}

// Shared models ------------------------------------------------------------

const oracle::Oracle& shared_oracle() {
  static const oracle::Oracle o;
  return o;
}

const data::Dataset& shared_dataset() {
  static const data::Dataset d = data::generate_dataset(2000, shared_oracle(), shared_oracle().bounds(), 7);
  return d;
}

double g_surrogate_train_s = 0.0;

const surrogate::Surrogate& shared_surrogate() {
  static const surrogate::Surrogate s = [] {
    const auto t0 = std::chrono::steady_clock::now();
    surrogate::SurrogateConfig cfg;
    cfg.seed = 3;
    auto net = surrogate::Surrogate::train(shared_dataset().subset(data::Split::Train), cfg);
    g_surrogate_train_s = seconds_since(t0);
    return net;
  }();
  return s;
}

// Criteria -----------------------------------------------------------------

nn::Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  nn::Tensor t = nn::Tensor::matrix(r, c);
  for (double& v : t.data) v = scale * rng.normal();
  return t;
}

Verdict gradient_correctness() {
  using namespace nn;
  Verdict v;
  Rng rng(31);
  std::size_t total = 0;
  double worst = 0.0;
  auto check = [&](const std::string& label, ParamStore& store, const std::function<Var(Tape&)>& build,
                   std::size_t per_param) {
    const auto r = testing::grad_check(store, build, per_param, rng.next_u64());
    total += r.probes;
    worst = std::max(worst, r.worst);
    v.require(r.worst < 1e-4, label + " rel err " + fmt("%.2e", r.worst));
  };
  {
    ParamStore s;
    s.add_constant("x", {4, 5}, 0.0).data = random_matrix(4, 5, rng).data;
    Dense d("d", 5, 3);
    d.init(s, 1);
    check("dense", s, [&](Tape& t) { return d.forward(t, t.param("x")); }, 20);
  }
  {
    ParamStore s;
    s.add_constant("x", {3, 6}, 0.0).data = random_matrix(3, 6, rng).data;
    LayerNorm ln("ln", 6);
    ln.init(s, 1);
    s.param("ln.gamma").data = random_matrix(1, 6, rng).data;
    check("layer_norm", s, [&](Tape& t) { return ln.forward(t, t.param("x")); }, 20);
  }
  {
    ParamStore s;
    s.add_constant("x", {6, 10}, 0.0).data = random_matrix(6, 10, rng, 2.0).data;
    check("silu", s, [&](Tape& t) { return t.silu(t.param("x")); }, 50);
  }
  {
    ParamStore s;
    s.add_constant("q", {3, 2}, 0.0).data = random_matrix(3, 2, rng).data;
    s.add_constant("k", {4, 2}, 0.0).data = random_matrix(4, 2, rng).data;
    s.add_constant("v", {4, 3}, 0.0).data = random_matrix(4, 3, rng).data;
    check("attention", s, [&](Tape& t) { return t.attention(t.param("q"), t.param("k"), t.param("v")); }, 20);
  }
  {
    ParamStore s;
    s.add_constant("x", {2 * 5, 8}, 0.0).data = random_matrix(10, 8, rng).data;
    SelfAttention at("att", 8, 2, 5);
    at.init(s, 2);
    check("self_attention", s, [&](Tape& t) { return at.forward(t, t.param("x")); }, 8);
  }
  {
    ParamStore s;
    s.add_constant("x", {3, 7}, 0.0).data = random_matrix(3, 7, rng).data;
    TokenEmbedding emb("tok", 7, 4);
    emb.init(s, 3);
    MeanPool pool(7);
    check("token_embedding+mean_pool", s, [&](Tape& t) { return pool.forward(t, emb.forward(t, t.param("x"))); }, 20);
  }
  {
    ParamStore s;
    s.add_constant("x", {8, 6}, 0.0).data = random_matrix(8, 6, rng).data;
    std::vector<std::shared_ptr<Layer>> layers = {std::make_shared<Dense>("l1", 6, 12), std::make_shared<SiLU>(),
                                                  std::make_shared<LayerNorm>("ln", 12),
                                                  std::make_shared<Dense>("l2", 12, 12), std::make_shared<SiLU>(),
                                                  std::make_shared<Dense>("l3", 12, 2)};
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i]->init(s, 7 + i);
    check("3-layer composite", s, [&](Tape& t) {
      Var h = t.param("x");
      for (const auto& l : layers) h = l->forward(t, h);
      return h;
    }, 10);
  }
  v.require(total >= 50, std::to_string(total) + " probes");
  v.note(std::to_string(total) + " probes, worst rel err " + fmt("%.2e", worst));
  return v;
}

nn::Tensor brute_attention(const nn::Tensor& Q, const nn::Tensor& K, const nn::Tensor& V) {
  const std::size_t n = Q.rows(), m = K.rows(), d = Q.cols(), dv = V.cols();
  nn::Tensor out = nn::Tensor::matrix(n, dv);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(m);
    double mx = -1e300;
    for (std::size_t j = 0; j < m; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += Q.at(i, k) * K.at(j, k);
      s[j] = dot / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, s[j]);
    }
    double z = 0.0;
    for (double& x : s) z += (x = std::exp(x - mx));
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < dv; ++k) out.at(i, k) += s[j] / z * V.at(j, k);
  }
  return out;
}

Verdict attention_oracle() {
  Verdict v;
  Rng rng(41);
  double worst = 0.0;
  for (int c = 0; c < 100; ++c) {
    const std::size_t n = 1 + rng.below(5), m = 1 + rng.below(5), d = 1 + rng.below(5), dv = 1 + rng.below(5);
    const auto Q = random_matrix(n, d, rng), K = random_matrix(m, d, rng), V = random_matrix(m, dv, rng);
    nn::Tape t;
    const nn::Tensor got = t.value(t.attention(t.constant(Q), t.constant(K), t.constant(V)));
    const nn::Tensor want = brute_attention(Q, K, V);
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got.data[i] - want.data[i]));
  }
  v.require(worst <= 1e-12, "max abs diff " + fmt("%.2e", worst));
  v.note("100 cases, max abs diff " + fmt("%.2e", worst));
  return v;
}

Verdict diffusion_forward_moments() {
  using namespace diffusion;
  Verdict v;
  const auto s = make_schedule(200, 1e-4, 0.02);
  const Vec x0 = {1.5, -0.7, 0.2, 2.0, -1.1};
  const std::size_t n = 100000;
  Rng rng(53);
  double worst_mean = 0.0, worst_var = 0.0;
  for (const auto& sched : {s, default_schedule()}) {
    for (std::size_t t : {1u, 100u, 200u}) {
      Vec sum(x0.size(), 0.0), sq(x0.size(), 0.0), eps(x0.size());
      for (std::size_t k = 0; k < n; ++k) {
        for (double& e : eps) e = rng.normal();
        const Vec xt = forward_diffuse(x0, t, eps, sched);
        for (std::size_t i = 0; i < x0.size(); ++i) {
          sum[i] += xt[i];
          sq[i] += xt[i] * xt[i];
        }
      }
      for (std::size_t i = 0; i < x0.size(); ++i) {
        const double mean = sum[i] / n, var = sq[i] / n - mean * mean;
        const double want_mean = std::sqrt(sched.ab(t)) * x0[i], want_var = 1.0 - sched.ab(t);
        worst_mean = std::max(worst_mean, std::abs(mean - want_mean) / std::sqrt(want_mean * want_mean + want_var));
        worst_var = std::max(worst_var, std::abs(var - want_var) / want_var);
      }
    }
  }
  v.require(worst_mean <= 0.01, "mean rel err " + fmt("%.4f", worst_mean));
  v.require(worst_var <= 0.02, "variance rel err " + fmt("%.4f", worst_var));
  v.note("mean rel err " + fmt("%.4f", worst_mean) + ", variance rel err " + fmt("%.4f", worst_var));
  return v;
}

Verdict toy_distribution_recovery() {
  using namespace diffusion;
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const double mu[2][2] = {{-1.5, 0.5}, {1.0, -1.0}};
  const double weight0 = 0.3;
  Rng rng(61);
  std::vector<TrainSample> data;
  for (int i = 0; i < 4000; ++i) {
    const int c = rng.uniform() < weight0 ? 0 : 1;
    data.push_back({{mu[c][0] + 0.3 * rng.normal(), mu[c][1] + 0.3 * rng.normal()}, {}});
  }
  DenoiserConfig dc;
  dc.dim = 2;
  dc.cond_dim = 0;
  dc.width = 32;
  dc.width2 = 64;
  dc.heads = 2;
  dc.time_dim = 16;
  Denoiser net(dc);
  net.init(3);
  TrainConfig tc;
  tc.epochs = 60;
  tc.batch = 128;
  tc.lr = 3e-3;
  tc.ema = 0.995;
  train(data, net, default_schedule(), tc);
  const auto xs = sample_normalized(nn::Tensor::matrix(2000, 0), net, default_schedule(), 9);
  double sum[2][2] = {}, cnt[2] = {};
  for (const auto& x : xs) {
    const double d0 = std::hypot(x[0] - mu[0][0], x[1] - mu[0][1]), d1 = std::hypot(x[0] - mu[1][0], x[1] - mu[1][1]);
    const int c = d0 < d1 ? 0 : 1;
    sum[c][0] += x[0];
    sum[c][1] += x[1];
    ++cnt[c];
  }
  double mean_err = 0.0;
  for (int c = 0; c < 2; ++c)
    for (int k = 0; k < 2; ++k) mean_err = std::max(mean_err, std::abs(sum[c][k] / std::max(cnt[c], 1.0) - mu[c][k]));
  const double w_err = std::abs(cnt[0] / xs.size() - weight0);
  const double secs = seconds_since(t0);
  v.require(mean_err <= 0.1, "cluster mean error " + fmt("%.3f", mean_err));
  v.require(w_err <= 0.1, "weight error " + fmt("%.3f", w_err));
  v.require(secs < 180.0, "time " + fmt("%.1f s", secs));
  v.note("mean err " + fmt("%.3f", mean_err) + ", weight err " + fmt("%.3f", w_err) + ", " + fmt("%.1f s", secs));
  return v;
}

Verdict surrogate_accuracy() {
  Verdict v;
  const auto& ds = shared_dataset();
  const auto& net = shared_surrogate();
  const auto rep = surrogate::evaluate(net, ds.subset(data::Split::Test));
  static const char* names[3] = {"mass_flow", "pressure_ratio", "efficiency"};
  std::string summary = std::to_string(ds.size()) + " rows";
  for (std::size_t m = 0; m < 3; ++m) {
    v.require(rep.metrics[m].r2 >= 0.95, std::string(names[m]) + " R2 " + fmt("%.4f", rep.metrics[m].r2));
    v.require(rep.metrics[m].nrmse <= 0.05, std::string(names[m]) + " nRMSE " + fmt("%.4f", rep.metrics[m].nrmse));
    summary += std::string(", ") + names[m] + " R2 " + fmt("%.4f", rep.metrics[m].r2) + " nRMSE " +
               fmt("%.2f%%", 100 * rep.metrics[m].nrmse);
  }
  v.require(g_surrogate_train_s < 300.0, "training time " + fmt("%.1f s", g_surrogate_train_s));
  v.note(summary + ", training " + fmt("%.1f s", g_surrogate_train_s) + " (reference: R2 > 0.99, nRMSE < 2%)");
  return v;
}

Verdict closed_loop_inverse_design() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const auto& ds = shared_dataset();
  const auto& sur = shared_surrogate();
  diffusion::DesignerConfig cfg;
  cfg.train.epochs = 150;
  const auto m = diffusion::Designer::fit(ds, cfg, shared_oracle().bounds(),
                                          [&](const std::vector<DesignArray>& xs) { return sur.latent(xs); });
  const auto test = ds.subset(data::Split::Test);
  const std::size_t n = std::min<std::size_t>(100, test.size());
  std::vector<PerformanceTriple> targets(test.labels.begin(), test.labels.begin() + n);
  const auto s = m.generate_each(targets, 5);
  std::vector<double> tv[3], pv[3];
  std::size_t ok = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = shared_oracle().simulate(s.designs[i]);
    if (!r.converged) continue;
    ++ok;
    const auto a = targets[i].to_array(), b = r.performance->to_array();
    for (int k = 0; k < 3; ++k) {
      tv[k].push_back(a[k]);
      pv[k].push_back(b[k]);
    }
  }
  const double secs = seconds_since(t0) + g_surrogate_train_s;
  const double rate = static_cast<double>(ok) / n;
  v.require(rate >= 0.90, "success rate " + fmt("%.2f", rate));
  std::string summary = std::to_string(n) + " targets, success " + fmt("%.0f%%", 100 * rate);
  static const char* names[3] = {"mass_flow", "pressure_ratio", "efficiency"};
  for (int k = 0; k < 3; ++k) {
    const auto mm = data::regression_metrics(tv[k], pv[k]);
    v.require(mm.r2 >= 0.85, std::string(names[k]) + " R2 " + fmt("%.4f", mm.r2));
    v.require(mm.nrmse <= 0.10, std::string(names[k]) + " nRMSE " + fmt("%.4f", mm.nrmse));
    summary += std::string(", ") + names[k] + " R2 " + fmt("%.3f", mm.r2) + " nRMSE " + fmt("%.1f%%", 100 * mm.nrmse);
  }
  v.require(secs < 600.0, "time " + fmt("%.1f s", secs));
  v.note(summary + ", " + fmt("%.0f s", secs) + " (reference: success ~95%, R2 >= 0.9158, nRMSE < 9%)");
  return v;
}

Verdict reward_exactness() {
  using namespace opt;
  Verdict v;
  RewardSpec one{{{"efficiency", Direction::Maximize, 1.0, 0.8, 0.9}}, {}, -1000.0};
  const auto failed = compute_reward(std::optional<PerformanceTriple>{}, one);
  v.require(failed.reward == -1000.0 && failed.failed, "failure case");
  v.require(compute_reward(PerformanceTriple{15.0, 1.6, 0.9}, one).reward == 100.0, "single objective at the top");
  v.require(std::abs(compute_reward(PerformanceTriple{15.0, 1.6, 0.85}, one).reward - 50.0) < 1e-9, "single objective midpoint");
  RewardSpec weighted{{{"eta", Direction::Maximize, 2.0, 0.0, 1.0}, {"pi", Direction::Maximize, 1.0, 0.0, 1.0}},
                      {{"mass_flow", ConstraintKind::AtMost, 0.0, 1.0, 0.1, 1.25}},
                      -1000.0};
  const auto r = compute_reward(PerformanceTriple{1.25, 0.5, 0.8}, weighted);
  v.require(r.reward == 68.0, "weighted case gives " + fmt("%.17g", r.reward));
  RewardSpec minimize{{{"mass_flow", Direction::Minimize, 1.0, 10.0, 20.0}}, {}, -1000.0};
  v.require(std::abs(compute_reward(PerformanceTriple{12.5, 1.6, 0.9}, minimize).reward - 75.0) < 1e-9, "minimized objective");
  v.require(compute_reward(PerformanceTriple{25.0, 1.6, 0.9}, minimize).reward == 0.0, "clipped score");
  v.note("failure -1000, weighted " + fmt("%.17g", r.reward));
  return v;
}

Verdict optimizer_benchmarks() {
  using namespace opt;
  Verdict v;
  const data::Bounds b = data::Bounds::defaults();
  DesignArray target{};
  Rng trng(99);
  for (auto& z : target) z = trng.uniform(0.2, 0.8);
  auto sq = [](const DesignArray& a, const DesignArray& c) {
    double s = 0.0;
    for (std::size_t j = 0; j < kDesignDim; ++j) s += (a[j] - c[j]) * (a[j] - c[j]);
    return s;
  };
  const RewardSpec spec{{{"sphere", Direction::Minimize, 1.0, 0.0, 21.0}}, {}, -1000.0};
  const Evaluator eval = [&](const DesignArray& x) -> std::optional<Metrics> {
    return Metrics{{"sphere", sq(b.to_unit(x), target)}};
  };
  std::vector<double> dl, dg, dp;
  std::size_t drops = 0;
  auto monotone = [&](const OptimizeResult& r) {
    for (std::size_t g = 1; g < r.logs.size(); ++g) drops += r.logs[g].best_reward < r.logs[g - 1].best_reward;
  };
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    OptimizerConfig cfg;
    cfg.seed = seed;
    cfg.max_generations = 30;
    llm::MockLLM mock;
    const auto l = run_llm_optimizer(spec, eval, cfg, mock);
    cfg.max_generations = 50;
    const auto g = run_baseline(Baseline::GA, spec, eval, cfg);
    const auto p = run_baseline(Baseline::PSO, spec, eval, cfg);
    for (const auto* r : {&l, &g, &p}) monotone(*r);
    dl.push_back(sq(l.best_z, target));
    dg.push_back(sq(g.best_z, target));
    dp.push_back(sq(p.best_z, target));
  }
  v.require(median(dl) <= 1e-2, "llm median " + fmt("%.3g", median(dl)));
  v.require(median(dg) <= 5e-2, "ga median " + fmt("%.3g", median(dg)));
  v.require(median(dp) <= 5e-2, "pso median " + fmt("%.3g", median(dp)));
  v.require(drops == 0, std::to_string(drops) + " best-so-far drops");

  Rng rng(7);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> best{0.0};
    for (int g = 0; g < 30; ++g) best.push_back(best.back() + (rng.uniform() < 0.6 ? 0.0 : rng.uniform(0.0, 0.2)));
    const double eps = 0.05;
    const std::size_t J = 1 + rng.below(5);
    std::optional<std::size_t> expect;
    for (std::size_t g = J; g < best.size() && !expect; ++g) {
      bool all = true;
      for (std::size_t k = g - J + 1; k <= g; ++k) all = all && best[k] - best[k - 1] < eps;
      if (all) expect = g;
    }
    mismatches += convergence_generation(best, eps, J) != expect;
  }
  v.require(mismatches == 0, std::to_string(mismatches) + " stopping-rule mismatches");
  v.note("median sq dist llm " + fmt("%.2e", median(dl)) + ", ga " + fmt("%.2e", median(dg)) + ", pso " +
         fmt("%.2e", median(dp)) + "; stopping rule exact on 1000 logs");
  return v;
}

Verdict compressor_analog_optimization() {
  using namespace opt;
  Verdict v;
  const auto& o = shared_oracle();
  const auto& sur = shared_surrogate();
  const DesignArray x0 = anchor_design();
  const auto base = o.simulate(x0);
  const auto& ranges = o.config().ranges;
  RewardSpec spec;
  spec.objectives = {{"efficiency", Direction::Maximize, 1.0, ranges.lo[2], ranges.hi[2]},
                     {"pressure_ratio", Direction::Maximize, 1.0, ranges.lo[1], ranges.hi[1]}};
  const double m0 = base.performance->mass_flow;
  spec.constraints = {{"mass_flow", ConstraintKind::Band, m0 * 0.995, m0 * 1.005, 1.0, m0 * 0.005}};
  const Evaluator eval = [&](const DesignArray& x) -> std::optional<Metrics> { return to_metrics(sur.predict(x)); };

  OptimizerConfig cfg;
  cfg.seed = 17;
  cfg.max_generations = 30;
  cfg.bounds = o.bounds();
  for (const auto& row : data::latin_hypercube_unit(cfg.population, kDesignDim, derive_seed(17, 1))) {
    DesignArray z{};
    std::copy(row.begin(), row.end(), z.begin());
    cfg.initial.push_back(z);
  }
  cfg.initial[0] = o.bounds().to_unit(x0);
  llm::MockLLM mock;
  const auto r = run_llm_optimizer(spec, eval, cfg, mock);
  const double lhs_best = r.logs.front().best_reward;
  const double gain = (r.best_reward - lhs_best) / std::abs(lhs_best);
  const auto opt_sim = o.simulate(r.best_x);
  v.require(opt_sim.converged, "optimized design did not converge in the oracle");
  if (!opt_sim.converged) return v;
  const auto& p0 = *base.performance;
  const auto& p1 = *opt_sim.performance;
  const double d_eta = (p1.efficiency - p0.efficiency) / p0.efficiency;
  const double d_pi = (p1.pressure_ratio - p0.pressure_ratio) / p0.pressure_ratio;
  const double d_m = (p1.mass_flow - p0.mass_flow) / p0.mass_flow;
  v.require(gain >= 0.10, "reward gain over the initial best " + fmt("%.1f%%", 100 * gain));
  v.require(d_eta >= 0.005, "efficiency gain " + fmt("%+.2f%%", 100 * d_eta));
  v.require(std::abs(d_m) <= 0.01, "mass flow change " + fmt("%+.2f%%", 100 * d_m));
  v.note("reward " + fmt("%.2f", lhs_best) + " -> " + fmt("%.2f", r.best_reward) + " (" + fmt("%+.1f%%", 100 * gain) +
         ") in " + std::to_string(r.logs.size() - 1) + " generations; oracle eta " + fmt("%+.2f%%", 100 * d_eta) +
         ", pi " + fmt("%+.2f%%", 100 * d_pi) + ", mass flow " + fmt("%+.2f%%", 100 * d_m) +
         " (reference: eta +1.61%, pi +3.02%)");
  return v;
}

Verdict oracle_calibration() {
  Verdict v;
  const auto& o = shared_oracle();
  std::size_t failed = 0;
  for (const auto& x : data::latin_hypercube(10000, o.bounds(), 90210)) failed += !o.simulate(x).converged;
  const double rate = failed / 10000.0;
  v.require(rate >= 0.04 && rate <= 0.06, "failure rate " + fmt("%.4f", rate));

  int s1 = 0, s2 = 0;
  const std::string design = TURBO_FIXTURE_DIR "/fixtures/anchor_design.json";
  const std::string cmd = std::string("\"") + TURBO_CLI_PATH + "\" simulate --speedline 9 --design \"" + design + "\"";
  const std::string a = run_command(cmd, s1), b = run_command(cmd, s2);
  v.require(s1 == 0 && s2 == 0 && !a.empty(), "simulate command failed");
  v.require(a == b, "two processes disagree");
  json in_proc = json::parse(o.simulate(anchor_design()).to_json());
  in_proc["speedline"] = json::parse(o.speedline(anchor_design(), 9).to_json());
  v.require(!a.empty() && json::parse(a) == in_proc, "process output differs from the in-process result");

  const auto lib = oracle::load_materials();
  const auto steel = oracle::find_material("steel", lib), ti = oracle::find_material("Ti-6Al-4V", lib);
  double worst = 0.0;
  for (const auto& x : data::latin_hypercube(50, o.bounds(), 5)) {
    const double s = oracle::stress_analysis(x, steel, 1300.0);
    auto heavy = steel;
    heavy.density *= 3.0;
    worst = std::max(worst, std::abs(oracle::stress_analysis(x, heavy, 1300.0) / s - 3.0) / 3.0);
    worst = std::max(worst, std::abs(oracle::stress_analysis(x, steel, 2600.0) / s - 4.0) / 4.0);
    worst = std::max(worst, std::abs(oracle::stress_analysis(x, steel, 650.0) / s - 0.25) / 0.25);
    const double ratio = s / oracle::stress_analysis(x, ti, 1300.0);
    worst = std::max(worst, std::abs(ratio - steel.density / ti.density) / (steel.density / ti.density));
  }
  v.require(worst <= 1e-9, "stress scaling rel err " + fmt("%.2e", worst));
  v.note("failure rate " + fmt("%.2f%%", 100 * rate) + ", two-process output identical (" + std::to_string(a.size()) +
         " bytes), stress scaling rel err " + fmt("%.1e", worst));
  return v;
}

Verdict planner_golden_fixtures() {
  Verdict v;
  const std::vector<std::pair<std::string, std::string>> cases = {
      {"plan_linear.json", "Generate 5 designs for 15 kg/s, pressure ratio 1.6, efficiency 0.9 and predict their performance"},
      {"plan_validate.json",
       "Generate 4 designs for 15 kg/s, pressure ratio 1.6, efficiency 0.9, simulate them and write a report"},
      {"plan_optimize.json",
       "Design a rotor for 15.2 kg/s, pressure ratio 1.62, efficiency 0.88; generate 10 schemes, optimize efficiency, "
       "verify with high-fidelity simulation, compute the speedline map, and write a report"}};
  for (const auto& [file, text] : cases) {
    llm::MockLLM mock;
    const auto plan = agent::plan_workflow(agent::parse_request(text, mock)).to_json();
    const auto golden = data::read_file(std::string(TURBO_FIXTURE_DIR) + "/golden/" + file);
    v.require(plan == golden, file + " differs");
  }
  const auto g = agent::WorkflowGraph::from_json(data::read_file(std::string(TURBO_FIXTURE_DIR) + "/golden/plan_optimize.json"));
  const bool loop = std::any_of(g.edges.begin(), g.edges.end(), [](const agent::Edge& e) { return e.feedback && e.from == "optimize"; });
  v.require(loop, "optimization plan has no feedback edge");
  v.note("3 plans byte-identical to the golden files");
  return v;
}

Verdict end_to_end_run() {
  Verdict v;
  const fs::path root = work_dir() / "e2e";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string request = TURBO_FIXTURE_DIR "/fixtures/e2e_request.txt";
  const std::string base = std::string("TURBO_CLIENT=mock \"") + TURBO_CLI_PATH + "\" run --seed 1 --request \"" + request +
                           "\" --models \"" + (root / "models").string() + "\" --out ";
  double secs[2];
  for (int k = 0; k < 2; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    int status = 0;
    const auto out = run_command(base + "\"" + (root / ("run" + std::to_string(k))).string() + "\" 2>&1", status);
    secs[k] = seconds_since(t0);
    v.require(status == 0, "run " + std::to_string(k) + " exited with " + std::to_string(status) + ": " + out);
  }
  if (!v.pass) return v;
  const agent::RunDir a(root / "run0"), b(root / "run1");
  for (const std::string f : {"request.json", "plan.json", "events.log", "state.json", "ledger.json", "report.md",
                              "predictions.json", "optimizer/llm.jsonl", "optimizer/ga.jsonl", "optimizer/pso.jsonl",
                              "optimizer/summary.json", "optimizer/llm.transcripts.jsonl"})
    v.require(a.exists(f), "missing " + f);
  for (std::size_t k = 0; k <= 10; ++k) {
    const auto id = agent::design_id(k);
    for (const std::string f : {"designs/" + id + "/params.json", "designs/" + id + "/geometry.mesh.json",
                                "oracle/" + id + ".json"})
      v.require(a.exists(f), "missing " + f);
  }
  const auto state = json::parse(a.read("state.json"));
  v.require(state["run_status"] == "done", "run status " + state["run_status"].dump());

  std::vector<std::string> sequence;
  std::size_t event_tokens = 0, llm_calls = 0, maps = 0;
  std::istringstream lines(a.read("events.log"));
  for (std::string line; std::getline(lines, line);) {
    const auto e = json::parse(line);
    if (e["kind"] == "node_started") sequence.push_back(e["node"]);
    if (e["kind"] == "llm_call") {
      event_tokens += e["payload"]["prompt_tokens"].get<std::size_t>() + e["payload"]["completion_tokens"].get<std::size_t>();
      ++llm_calls;
    }
  }
  for (const auto& f : a.list()) maps += f.rfind("maps/", 0) == 0;
  v.require(maps >= 10, std::to_string(maps) + " speedline maps");
  std::string seq;
  for (const auto& n : sequence) seq += (seq.empty() ? "" : " ") + n;
  v.require(std::regex_match(seq, std::regex("generate predict optimize( predict optimize)+ validate map report")),
            "node sequence " + seq);
  const auto ledger = json::parse(a.read("ledger.json"));
  const std::size_t ledger_total = ledger["totals"]["overall"]["total"].get<std::size_t>();
  v.require(ledger_total == event_tokens, "ledger " + std::to_string(ledger_total) + " vs events " + std::to_string(event_tokens));

  const auto fa = a.list(), fb = b.list();
  std::size_t differing = fa == fb ? 0 : 1;
  for (const auto& f : fa)
    if (b.exists(f) && a.read(f) != b.read(f)) ++differing;
  v.require(differing == 0, std::to_string(differing) + " files differ between the two runs");
  v.require(secs[0] < 300.0, "first run " + fmt("%.1f s", secs[0]));
  v.note(std::to_string(fa.size()) + " artifacts, " + std::to_string(llm_calls) + " LLM calls, " +
         std::to_string(ledger_total) + " tokens, runs " + fmt("%.1f s", secs[0]) + " (with model training) and " +
         fmt("%.1f s", secs[1]));
  return v;
}

Verdict geometry_suite() {
  using namespace geometry;
  Verdict v;
  const auto xs = data::latin_hypercube(1000, data::Bounds::defaults(), 2025);
  std::size_t valid = 0;
  double tangent = 0.0, rigid = 0.0;
  std::size_t open = 0;
  constexpr double h = 1e-4;
  for (std::size_t n = 0; n < xs.size(); ++n) {
    const auto bp = BladeParamVector::unflatten(xs[n]);
    const auto blade = assemble_blade(bp, 5);
    valid += validate_geometry(blade).valid;
    for (const auto& s : blade.sections) open += !(s.profile.points.front() == s.profile.points.back());
    if (n >= 100) continue;
    for (const auto& p : {bp.hub, bp.mid, bp.tip}) {
      const Point2 a0 = camber_point(p, 0.0), a1 = camber_point(p, h), a2 = camber_point(p, 2 * h);
      const double start = std::atan2(-3 * a0.y + 4 * a1.y - a2.y, -3 * a0.x + 4 * a1.x - a2.x);
      const Point2 b0 = camber_point(p, 1.0), b1 = camber_point(p, 1 - h), b2 = camber_point(p, 1 - 2 * h);
      const double end = std::atan2(3 * b0.y - 4 * b1.y + b2.y, 3 * b0.x - 4 * b1.x + b2.x);
      tangent = std::max(tangent, std::abs(start - p.beta1k * std::numbers::pi / 180.0));
      tangent = std::max(tangent, std::abs(end - p.beta2k * std::numbers::pi / 180.0));

      SectionParams flat = p;
      flat.bend = flat.sweep = 0.0;
      const auto prof = build_section_profile(flat);
      const auto moved = apply_bend_sweep(prof, p);
      for (std::size_t i = 0; i < prof.points.size(); i += 7)
        for (std::size_t j = i + 1; j < prof.points.size(); j += 11) {
          const double d0 = std::hypot(prof.points[i].x - prof.points[j].x, prof.points[i].y - prof.points[j].y);
          const double d1 = std::hypot(moved.points[i].x - moved.points[j].x, moved.points[i].y - moved.points[j].y);
          rigid = std::max(rigid, std::abs(d0 - d1));
        }
    }
  }
  v.require(tangent < 1e-6, "tangent-angle error " + fmt("%.2e", tangent));
  v.require(rigid < 1e-12, "rigid-motion error " + fmt("%.2e", rigid));
  v.require(open == 0, std::to_string(open) + " open profiles");
  v.require(valid == xs.size(), std::to_string(valid) + "/1000 valid");
  v.note("1000/1000 valid, tangent err " + fmt("%.1e", tangent) + " rad, rigid-motion err " + fmt("%.1e", rigid));
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient-correctness", gradient_correctness},
      {"attention-oracle", attention_oracle},
      {"diffusion-forward-moments", diffusion_forward_moments},
      {"toy-distribution-recovery", toy_distribution_recovery},
      {"surrogate-accuracy", surrogate_accuracy},
      {"closed-loop-inverse-design", closed_loop_inverse_design},
      {"reward-exactness", reward_exactness},
      {"optimizer-benchmarks", optimizer_benchmarks},
      {"compressor-analog-optimization", compressor_analog_optimization},
      {"oracle-calibration", oracle_calibration},
      {"planner-golden-fixtures", planner_golden_fixtures},
      {"end-to-end-run", end_to_end_run},
      {"geometry-suite", geometry_suite},
  };
  std::vector<std::string> only(argv + 1, argv + argc);
  int failed = 0, ran = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v.pass = false;
      v.note(std::string("exception: ") + e.what());
    }
    ++ran;
    failed += !v.pass;
    std::printf("%s %s (%.1f s): %s\n", v.pass ? "PASS" : "FAIL", name.c_str(), seconds_since(t0), v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed ? 1 : 0;
}
