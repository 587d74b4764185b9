// SPDX-License-Identifier: Apache-2.0
// Central-difference gradient probes shared by the unit and acceptance suites.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "turbo/nn.hpp"
#include "turbo/random.hpp"

namespace turbo::testing {

struct GradCheck {
  std::size_t probes = 0;
  double worst = 0.0;
  std::string worst_at;
};

/// Probes `per_param` random entries of every parameter in `store` (inputs
/// can be registered as parameters too). Loss = sum(w * out) for a fixed
/// random w; relative error |a - fd| / (|fd| + 1e-8).
inline GradCheck grad_check(nn::ParamStore& store, const std::function<nn::Var(nn::Tape&)>& build,
                            std::size_t per_param, std::uint64_t seed, double h = 1e-5) {
  Rng rng(seed);
  auto run = [&](const nn::Tensor& weights) {
    nn::Tape tape(&store);
    const nn::Tensor& y = tape.value(build(tape));
    double loss = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) loss += weights.data[i] * y.data[i];
    return loss;
  };
  nn::Tensor w;
  store.zero_grad();
  {
    nn::Tape tape(&store);
    const nn::Var out = build(tape);
    w = nn::Tensor(tape.value(out).shape);
    for (double& v : w.data) v = rng.uniform(-1.0, 1.0);
    tape.backward(out, w);
  }
  GradCheck res;
  for (auto& [name, p] : store.params()) {
    const nn::Tensor analytic = store.grad(name);
    for (std::size_t k = 0; k < std::min(per_param, p.size()); ++k) {
      const std::size_t i = per_param >= p.size() ? k : rng.below(p.size());
      const double keep = p.data[i];
      p.data[i] = keep + h;
      const double up = run(w);
      p.data[i] = keep - h;
      const double dn = run(w);
      p.data[i] = keep;
      const double fd = (up - dn) / (2.0 * h);
      const double err = std::abs(analytic.data[i] - fd) / (std::abs(fd) + 1e-8);
      ++res.probes;
      if (err > res.worst) {
        res.worst = err;
        res.worst_at = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  store.zero_grad();
  return res;
}

}  // namespace turbo::testing
