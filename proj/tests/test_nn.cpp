// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <cmath>

#include "support/gradcheck.hpp"
#include "turbo/nn.hpp"
#include "turbo/random.hpp"

using namespace turbo;
using namespace turbo::nn;
using Catch::Matchers::WithinAbs;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.data) v = scale * rng.normal();
  return t;
}

// Direct evaluation of softmax(Q K^T / sqrt(d)) V with plain loops.
Tensor brute_attention(const Tensor& Q, const Tensor& K, const Tensor& V) {
  const std::size_t n = Q.rows(), m = K.rows(), d = Q.cols(), dv = V.cols();
  Tensor out = Tensor::matrix(n, dv);
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
    for (double& v : s) z += (v = std::exp(v - mx));
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < dv; ++k) out.at(i, k) += s[j] / z * V.at(j, k);
  }
  return out;
}

Tensor run_attention(const Tensor& Q, const Tensor& K, const Tensor& V) {
  Tape t;
  return t.value(t.attention(t.constant(Q), t.constant(K), t.constant(V)));
}

}  // namespace

TEST_CASE("attention matches brute force", "[nn]") {
  Rng rng(1);
  for (int c = 0; c < 100; ++c) {
    const std::size_t n = 1 + rng.below(4), m = 1 + rng.below(4), d = 1 + rng.below(4), dv = 1 + rng.below(4);
    const Tensor Q = random_matrix(n, d, rng), K = random_matrix(m, d, rng), V = random_matrix(m, dv, rng);
    const Tensor got = run_attention(Q, K, V);
    const Tensor want = brute_attention(Q, K, V);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK_THAT(got.data[i], WithinAbs(want.data[i], 1e-12));
  }
  const Tensor Q({2, 2}, {1, 2, 0, -1});
  const Tensor K({2, 2}, {1, 0, 2, 1});
  const Tensor V({2, 2}, {3, -1, 0, 2});
  // Row 0 logits (1, 4)/sqrt(2), row 1 logits (0, -1)/sqrt(2).
  const double a = 1.0 / (1.0 + std::exp(3.0 / std::sqrt(2.0)));
  const double b = 1.0 / (1.0 + std::exp(-1.0 / std::sqrt(2.0)));
  const Tensor got = run_attention(Q, K, V);
  CHECK_THAT(got.at(0, 0), WithinAbs(3 * a, 1e-12));
  CHECK_THAT(got.at(0, 1), WithinAbs(-a + 2 * (1 - a), 1e-12));
  CHECK_THAT(got.at(1, 0), WithinAbs(3 * b, 1e-12));
  CHECK_THAT(got.at(1, 1), WithinAbs(-b + 2 * (1 - b), 1e-12));
}

TEST_CASE("attention edge cases and convexity", "[nn]") {
  Rng rng(2);
  const Tensor Q = random_matrix(5, 3, rng);
  const Tensor V1 = random_matrix(1, 4, rng);
  const Tensor single = run_attention(Q, random_matrix(1, 3, rng), V1);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t k = 0; k < 4; ++k) CHECK_THAT(single.at(i, k), WithinAbs(V1.at(0, k), 1e-15));

  Tensor K = Tensor::matrix(6, 3);
  for (std::size_t j = 0; j < 6; ++j)
    for (std::size_t k = 0; k < 3; ++k) K.at(j, k) = 0.3 * static_cast<double>(k) - 0.1;
  const Tensor V = random_matrix(6, 2, rng);
  const Tensor uni = run_attention(Q, K, V);
  for (std::size_t k = 0; k < 2; ++k) {
    double mean = 0.0;
    for (std::size_t j = 0; j < 6; ++j) mean += V.at(j, k) / 6.0;
    for (std::size_t i = 0; i < 5; ++i) CHECK_THAT(uni.at(i, k), WithinAbs(mean, 1e-12));
  }

  const Tensor Kr = random_matrix(6, 3, rng, 3.0);
  const Tensor out = run_attention(Q, Kr, V);
  for (std::size_t k = 0; k < 2; ++k) {
    double lo = 1e300, hi = -1e300;
    for (std::size_t j = 0; j < 6; ++j) {
      lo = std::min(lo, V.at(j, k));
      hi = std::max(hi, V.at(j, k));
    }
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(out.at(i, k) >= lo - 1e-12);
      CHECK(out.at(i, k) <= hi + 1e-12);
    }
  }

  // Shifting every key by a vector orthogonal-free constant offsets each
  // row's logits by a constant: output unchanged.
  Tensor Qs = Tensor::matrix(3, 2);
  Qs.data = {1, 0, 1, 0, 1, 0};
  Tensor Ks = random_matrix(4, 2, rng);
  Tensor Ks2 = Ks;
  for (std::size_t j = 0; j < 4; ++j) Ks2.at(j, 0) += 7.5;
  const Tensor Vs = random_matrix(4, 3, rng);
  const Tensor o1 = run_attention(Qs, Ks, Vs), o2 = run_attention(Qs, Ks2, Vs);
  for (std::size_t i = 0; i < o1.size(); ++i) CHECK_THAT(o1.data[i], WithinAbs(o2.data[i], 1e-12));

  Tape t;
  CHECK_THROWS_AS(t.attention(t.constant(random_matrix(2, 3, rng)), t.constant(random_matrix(2, 2, rng)),
                              t.constant(random_matrix(2, 2, rng))),
                  Error);
}

TEST_CASE("forward basics", "[nn]") {
  ParamStore store;
  Sequential net({std::make_shared<Dense>("d", 3, 3)});
  net.init(store, 1);
  auto& w = store.param("d.w");
  std::fill(w.data.begin(), w.data.end(), 0.0);
  for (int i = 0; i < 3; ++i) w.data[i * 3 + i] = 1.0;
  std::fill(store.param("d.b").data.begin(), store.param("d.b").data.end(), 0.0);
  const Tensor x({2, 3}, {1, -2, 3.5, 0.25, 9, -7});
  CHECK(net.forward(store, x) == x);

  ParamStore ls;
  Sequential ln({std::make_shared<LayerNorm>("ln", 4)});
  ln.init(ls, 1);
  const Tensor c({1, 4}, {2.5, 2.5, 2.5, 2.5});
  for (double v : ln.forward(ls, c).data) CHECK(v == 0.0);
  ls.param("ln.beta").data = {0.1, 0.2, 0.3, 0.4};
  ls.param("ln.gamma").data = {5, 5, 5, 5};
  CHECK(ln.forward(ls, c).data == std::vector<double>{0.1, 0.2, 0.3, 0.4});

  ParamStore s2;
  Sequential deep({std::make_shared<Dense>("a", 3, 8), std::make_shared<SiLU>(), std::make_shared<Dense>("b", 8, 2)});
  deep.init(s2, 9);
  CHECK(deep.forward(s2, x) == deep.forward(s2, x));

  Tensor bad = x;
  bad.data[0] = std::nan("");
  CHECK_THROWS_AS(deep.forward(s2, bad), Error);
  CHECK_THROWS_AS(deep.forward(s2, Tensor({2, 4}, 1.0)), Error);
}

TEST_CASE("backward requires a forward record", "[nn]") {
  ParamStore store;
  Sequential net({std::make_shared<Dense>("d", 2, 2)});
  net.init(store, 1);
  try {
    net.backward(Tensor({1, 2}, 1.0));
    FAIL("expected NoForwardRecord");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoForwardRecord);
  }
  net.forward(store, Tensor({1, 2}, {0.3, -0.2}));
  net.backward(Tensor({1, 2}, 0.0));
  for (const auto& [name, _] : store.params())
    for (double v : store.grad(name).data) CHECK(v == 0.0);
}

TEST_CASE("gradients match central differences per layer", "[nn]") {
  Rng rng(3);
  auto check = [&](const char* label, ParamStore& store, const std::function<Var(Tape&)>& build) {
    const auto r = testing::grad_check(store, build, 12, rng.next_u64());
    INFO(label << " worst " << r.worst << " at " << r.worst_at);
    CHECK(r.probes >= 12);
    CHECK(r.worst < 1e-4);
  };

  {
    ParamStore s;
    s.add_constant("x", {4, 5}, 0.0).data = random_matrix(4, 5, rng).data;
    Dense d("d", 5, 3);
    d.init(s, 1);
    check("dense", s, [&](Tape& t) { return d.forward(t, t.param("x")); });
  }
  {
    ParamStore s;
    s.add_constant("x", {3, 6}, 0.0).data = random_matrix(3, 6, rng).data;
    LayerNorm ln("ln", 6);
    ln.init(s, 1);
    s.param("ln.gamma").data = random_matrix(1, 6, rng).data;
    check("layer_norm", s, [&](Tape& t) { return ln.forward(t, t.param("x")); });
  }
  {
    ParamStore s;
    s.add_constant("x", {3, 4}, 0.0).data = random_matrix(3, 4, rng, 2.0).data;
    check("silu", s, [&](Tape& t) { return t.silu(t.param("x")); });
  }
  {
    ParamStore s;
    s.add_constant("x", {2 * 5, 8}, 0.0).data = random_matrix(10, 8, rng).data;
    SelfAttention at("att", 8, 2, 5);
    at.init(s, 2);
    check("self_attention", s, [&](Tape& t) { return at.forward(t, t.param("x")); });
  }
  {
    ParamStore s;
    s.add_constant("q", {3, 2}, 0.0).data = random_matrix(3, 2, rng).data;
    s.add_constant("k", {4, 2}, 0.0).data = random_matrix(4, 2, rng).data;
    s.add_constant("v", {4, 3}, 0.0).data = random_matrix(4, 3, rng).data;
    check("attention", s, [&](Tape& t) { return t.attention(t.param("q"), t.param("k"), t.param("v")); });
  }
  {
    ParamStore s;
    s.add_constant("x", {3, 7}, 0.0).data = random_matrix(3, 7, rng).data;
    TokenEmbedding emb("tok", 7, 4);
    emb.init(s, 3);
    MeanPool pool(7);
    check("token_embedding+pool", s, [&](Tape& t) { return pool.forward(t, emb.forward(t, t.param("x"))); });
  }
  {
    ParamStore s;
    s.add_constant("x", {6, 4}, 0.0).data = random_matrix(6, 4, rng).data;
    s.add_constant("e", {2, 4}, 0.0).data = random_matrix(2, 4, rng).data;
    s.add_constant("y", {6, 3}, 0.0).data = random_matrix(6, 3, rng).data;
    Residual res({std::make_shared<LayerNorm>("r.ln", 7), std::make_shared<Dense>("r.d", 7, 7)});
    res.init(s, 4);
    check("residual+concat+add_group", s, [&](Tape& t) {
      const Var h = t.concat_cols(t.add_group(t.param("x"), t.param("e"), 3), t.param("y"));
      return t.reshape(t.scale(res.forward(t, h), 0.5), {42});
    });
  }
}

TEST_CASE("composite net and shared weights match central differences", "[nn]") {
  Rng rng(5);
  ParamStore s;
  s.add_constant("x", {8, 6}, 0.0).data = random_matrix(8, 6, rng).data;
  Sequential net({std::make_shared<Dense>("l1", 6, 12), std::make_shared<SiLU>(), std::make_shared<LayerNorm>("ln", 12),
                  std::make_shared<Dense>("l2", 12, 12), std::make_shared<SiLU>(),
                  std::make_shared<Dense>("l3", 12, 2)});
  net.init(s, 7);
  std::vector<std::shared_ptr<Layer>> layers = {std::make_shared<Dense>("l1", 6, 12), std::make_shared<SiLU>(),
                                                std::make_shared<LayerNorm>("ln", 12), std::make_shared<Dense>("l2", 12, 12),
                                                std::make_shared<SiLU>(), std::make_shared<Dense>("l3", 12, 2)};
  const auto r = testing::grad_check(s, [&](Tape& t) {
    Var h = t.param("x");
    for (const auto& l : layers) h = l->forward(t, h);
    return h;
  }, 10, 99);
  INFO("worst " << r.worst << " at " << r.worst_at);
  CHECK(r.probes >= 50);
  CHECK(r.worst < 1e-4);

  // The same dense layer applied twice.
  ParamStore sh;
  sh.add_constant("x", {3, 4}, 0.0).data = random_matrix(3, 4, rng).data;
  Dense d("shared", 4, 4);
  d.init(sh, 8);
  const auto r2 = testing::grad_check(sh, [&](Tape& t) { return d.forward(t, t.silu(d.forward(t, t.param("x")))); }, 16, 5);
  CHECK(r2.worst < 1e-4);
}

TEST_CASE("adam", "[nn]") {
  ParamStore s;
  s.add_constant("p", {1}, 2.0);
  AdamState st;
  st.lr = 0.1;
  adam_step(st, s);
  CHECK(s.param("p").data[0] == 2.0);
  CHECK(st.step == 1);

  ParamStore one;
  one.add_constant("p", {1}, 0.0);
  AdamState fresh;
  fresh.lr = 0.1;
  one.grad("p").data[0] = 1.0;
  adam_step(fresh, one);
  CHECK_THAT(one.param("p").data[0], WithinAbs(-0.1, 1e-9));
  CHECK(one.grad("p").data[0] == 0.0);

  ParamStore many;
  many.add_constant("p", {2}, 0.0);
  AdamState ms;
  for (int i = 0; i < 50; ++i) {
    many.grad("p").data = {0.5, -3.0};
    adam_step(ms, many);
  }
  CHECK(many.param("p").data[0] < 0.0);
  CHECK(many.param("p").data[1] > 0.0);
}

TEST_CASE("sinusoidal embedding", "[nn]") {
  const auto e0 = sinusoidal_embedding(0, 16);
  for (std::size_t i = 0; i < 16; i += 2) {
    CHECK(e0[i] == 0.0);
    CHECK(e0[i + 1] == 1.0);
  }
  for (double t : {1.0, 17.0, 999.0}) {
    double n = 0.0;
    for (double v : sinusoidal_embedding(t, 32)) n += v * v;
    CHECK_THAT(n, WithinAbs(16.0, 1e-12));
  }
  CHECK_THROWS_AS(sinusoidal_embedding(3, 7), Error);
  std::vector<std::vector<double>> all;
  for (int t = 0; t < 1000; ++t) all.push_back(sinusoidal_embedding(t, 8));
  std::size_t dup = 0;
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j) dup += all[i] == all[j];
  CHECK(dup == 0);
}

TEST_CASE("checkpoint round trip", "[nn]") {
  ParamStore s;
  Sequential net({std::make_shared<Dense>("a", 3, 5), std::make_shared<LayerNorm>("n", 5)});
  net.init(s, 42);
  s.trained = true;
  const std::string j = s.to_json();
  const ParamStore back = ParamStore::from_json(j);
  CHECK(back.params() == s.params());
  CHECK(back.trained);
  CHECK(back.to_json() == j);
  ParamStore again;
  net.init(again, 42);
  CHECK(again.params() == s.params());
}
