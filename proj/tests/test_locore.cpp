#include <cmath>

#include "doctest.h"
#include "oracles.hpp"

#include "salient/hooks.hpp"
#include "salient/locore.hpp"
#include "salient/rng.hpp"

using namespace salient;

namespace {

TokenLayout layout_2_3() {
  TokenLayout l;
  l.sys_len = 2;
  l.img_len = 3;
  l.prompt_len = 1;
  return l;
}

ModelConfig small() {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 16;
  c.vocab_size = 12;
  c.max_seq_len = 16;
  c.rng_seed = 31;
  return c;
}

std::vector<TokenId> sequence(int n) {
  Rng rng(32);
  std::vector<TokenId> t(n);
  for (auto& x : t) x = static_cast<TokenId>(rng.below(12));
  return t;
}

}  // namespace

TEST_CASE("gain_vector examples") {
  TokenLayout l;
  l.sys_len = 2;
  l.img_len = 8;
  const auto g = gain_vector(20, l, 0.20, 5);
  REQUIRE(g.size() == 10);  // J = [10, 20)
  CHECK(g[17 - 10] == doctest::Approx(1.20));
  CHECK(g[13 - 10] == 1.0);
  CHECK(g[15 - 10] == doctest::Approx(1.20));  // distance exactly w
  CHECK(g[14 - 10] == 1.0);
  for (double v : gain_vector(20, l, 0.0, 5)) CHECK(v == 1.0);
  CHECK(gain_vector(10, l, 0.2, 5).empty());
  CHECK(gain_vector(3, l, 0.2, 5).empty());
}

TEST_CASE("apply_gain examples") {
  std::vector<double> row{0.1, 0.3, 0.6};
  const std::vector<double> g{1.15};
  apply_gain(row, 2, g, false);
  CHECK(row[0] == 0.1);
  CHECK(row[1] == 0.3);
  CHECK(row[2] == doctest::Approx(0.69));

  std::vector<double> norm{0.1, 0.3, 0.6};
  apply_gain(norm, 2, g, true);
  CHECK(norm[0] == doctest::Approx(0.1 / 1.09));
  CHECK(norm[2] == doctest::Approx(0.69 / 1.09));

  std::vector<double> same{0.1, 0.3, 0.6};
  const std::vector<double> ones{1.0};
  apply_gain(same, 2, ones, false);
  CHECK(same == std::vector<double>{0.1, 0.3, 0.6});

  // Every bit of mass already inside the window: renormalization cancels.
  std::vector<double> all{0.0, 0.25, 0.75};
  const std::vector<double> both{1.5, 1.5};
  apply_gain(all, 1, both, true);
  CHECK(all[1] == doctest::Approx(0.25));
  CHECK(all[2] == doctest::Approx(0.75));

  std::vector<double> shortrow{0.5, 0.5};
  CHECK_THROWS_AS(apply_gain(shortrow, 1, both, false), ShapeError);
}

TEST_CASE("window share grows with beta under renormalization") {
  double previous = -1.0;
  for (double beta : {0.0, 0.1, 0.5, 1.0, 2.0}) {
    std::vector<double> row{0.2, 0.2, 0.3, 0.3};
    const std::vector<double> g{1.0 + beta, 1.0 + beta};
    apply_gain(row, 2, g, true);
    const double share = row[2] + row[3];
    CHECK(share > previous);
    previous = share;
  }
}

TEST_CASE("config validation") {
  LocoreConfig c;
  c.beta = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.beta = 0.1;
  c.window = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("hook scope") {
  LocoreConfig c;
  c.layout = layout_2_3();
  const LocoreHook final_row(c);
  CHECK(final_row.touches({0, 0, 9, 10}));
  CHECK_FALSE(final_row.touches({0, 0, 8, 10}));
  CHECK_FALSE(final_row.touches({0, 0, 5, 6}));  // J empty at the first output row
  c.scope = GainScope::every_row;
  const LocoreHook every(c);
  CHECK(every.touches({1, 1, 7, 10}));
  CHECK_FALSE(every.touches({1, 1, 5, 10}));
  c.beta = 0.0;
  CHECK_FALSE(LocoreHook(c).touches({0, 0, 9, 10}));
}

TEST_CASE("hooked forward: identity, locality, install discipline") {
  const Model model(Checkpoint::initialize(small()));
  const auto tokens = sequence(12);
  const auto plain = model.forward(tokens);

  HookedForward hf(model);
  LocoreConfig c;
  c.layout = layout_2_3();
  c.beta = 0.0;
  hf.install_hook(c);
  CHECK_THROWS_AS(hf.install_hook(c), StateError);
  const auto zero = hf.forward(tokens);
  CHECK(zero.logits() == plain.logits());
  CHECK(zero.tape().attention == plain.tape().attention);
  hf.remove_hook();
  CHECK_FALSE(hf.installed());
  CHECK(hf.forward(tokens).logits() == plain.logits());

  c.beta = 0.15;
  hf.install_hook(c);
  const auto gained = hf.forward(tokens);
  for (int i = 0; i < 11; ++i)
    for (int v = 0; v < 12; ++v) CHECK(gained.logits_at(i)[v] == plain.logits_at(i)[v]);
  bool changed = false;
  for (int v = 0; v < 12; ++v) changed = changed || gained.logits_at(11)[v] != plain.logits_at(11)[v];
  CHECK(changed);

  // First layer sees identical inputs, so only the window entries of the last row move.
  const int q = 11;
  for (int h = 0; h < 2; ++h) {
    const auto& a = plain.tape().attn(0, h);
    const auto& b = gained.tape().attn(0, h);
    double before = 0.0, after = 0.0;
    for (int j = 0; j <= q; ++j) {
      const bool window = j >= 5 && q - j <= c.window && j < q;
      if (window) {
        before += a(q, j);
        after += b(q, j);
        CHECK(b(q, j) == doctest::Approx(1.15 * a(q, j)).epsilon(1e-15));
      } else {
        CHECK(b(q, j) == a(q, j));
      }
    }
    CHECK(after == doctest::Approx(1.15 * before).epsilon(1e-14));
  }
}

// Cached rows were gained when they were the final row, so a final-row
// decoder reproduces an every-row full forward.
TEST_CASE("incremental decoder with a final-row hook matches an every-row full forward") {
  const Model model(Checkpoint::initialize(small()));
  const auto tokens = sequence(12);
  LocoreConfig c;
  c.layout = layout_2_3();
  c.beta = 0.3;
  IncrementalDecoder dec(model, std::make_shared<LocoreHook>(c));
  c.scope = GainScope::every_row;
  const auto every = std::make_shared<LocoreHook>(c);
  for (int n = 1; n <= 12; ++n) {
    const auto step = dec.push(tokens[n - 1]);
    const std::vector<TokenId> prefix(tokens.begin(), tokens.begin() + n);
    const auto full = model.forward(prefix, every);
    for (int v = 0; v < 12; ++v) CHECK(step[v] == full.logits_at(n - 1)[v]);
  }
}

TEST_CASE("gradients through the hook match finite differences") {
  const Model model(Checkpoint::initialize(small()));
  const auto tokens = sequence(11);
  for (bool renorm : {false, true})
    for (GainScope scope : {GainScope::final_row, GainScope::every_row}) {
      LocoreConfig c;
      c.layout = layout_2_3();
      c.beta = 0.4;
      c.window = 3;
      c.renormalize = renorm;
      c.scope = scope;
      const auto hook = std::make_shared<LocoreHook>(c);
      auto pass = model.forward(tokens, hook);
      model.backward_attention(pass, 10, 4);
      double worst = 0.0;
      for (int l = 0; l < 2; ++l)
        for (int h = 0; h < 2; ++h)
          for (int i = 0; i < 11; ++i)
            for (int j = 0; j <= i; ++j) {
              const double g = pass.tape().grad(l, h)(i, j);
              if (std::abs(g) <= 1e-8) continue;
              const double fd = testing::finite_difference(model, tokens, l, h, i, j, 10, 4, 1e-5, hook);
              worst = std::max(worst, std::abs(g - fd) / std::max(std::abs(g), std::abs(fd)));
            }
      CAPTURE(renorm);
      CHECK(worst <= 1e-4);
    }
}

TEST_CASE("decay hook and chaining") {
  const DecayHook d(3, 0.5);
  CHECK(d.touches({0, 0, 4, 6}));
  CHECK_FALSE(d.touches({0, 0, 3, 6}));
  std::vector<double> row{0.1, 0.2, 0.3, 0.4, 0.0};
  d.apply({0, 0, 4, 6}, row);
  CHECK(row[3] == 0.2);
  CHECK(row[2] == 0.3);

  const DecayHook zero(1, 0.0);
  std::vector<double> r2{0.5, 0.5, 0.0};
  zero.apply({0, 0, 2, 3}, r2);
  CHECK(r2[1] == 0.0);

  LocoreConfig c;
  c.layout = layout_2_3();
  c.scope = GainScope::every_row;
  auto both = chain(std::make_shared<LocoreHook>(c), std::make_shared<DecayHook>(6, 0.5));
  CHECK(both->touches({0, 0, 7, 12}));
  CHECK(chain(nullptr, nullptr) == nullptr);

  const Model model(Checkpoint::initialize(small()));
  const auto tokens = sequence(12);
  const auto identity = model.forward(tokens, std::make_shared<DecayHook>(6, 1.0));
  CHECK(identity.logits() == model.forward(tokens).logits());

  auto pass = model.forward(tokens, both);
  model.backward_attention(pass, 11, 2);
  const double g = pass.tape().grad(0, 1)(8, 6);
  if (std::abs(g) > 1e-8) {
    const double fd = testing::finite_difference(model, tokens, 0, 1, 8, 6, 11, 2, 1e-5, both);
    CHECK(std::abs(g - fd) <= 1e-4 * std::abs(g));
  }
}
