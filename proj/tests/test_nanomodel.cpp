#include <cmath>
#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "oracles.hpp"

#include "salient/io.hpp"
#include "salient/nanomodel.hpp"
#include "salient/rng.hpp"

using namespace salient;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny(std::uint64_t seed = 3) {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 32;
  c.vocab_size = 16;
  c.max_seq_len = 24;
  c.rng_seed = seed;
  return c;
}

std::vector<TokenId> tokens_for(std::uint64_t seed, int n, int vocab) {
  Rng rng(seed);
  std::vector<TokenId> t(n);
  for (auto& x : t) x = static_cast<TokenId>(rng.below(vocab));
  return t;
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("salient_test_" + name); }

double max_rel_error(const Model& model, const std::vector<TokenId>& tokens, int position, TokenId target) {
  auto pass = model.forward(tokens);
  model.backward_attention(pass, position, target);
  double worst = 0.0;
  const auto& cfg = model.config();
  const int n = static_cast<int>(tokens.size());
  for (int l = 0; l < cfg.n_layers; ++l)
    for (int h = 0; h < cfg.n_heads; ++h)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
          const double g = pass.tape().grad(l, h)(i, j);
          if (std::abs(g) <= 1e-8) continue;
          const double fd = testing::finite_difference(model, tokens, l, h, i, j, position, target, 1e-4);
          worst = std::max(worst, std::abs(g - fd) / std::max(std::abs(g), std::abs(fd)));
        }
  return worst;
}

}  // namespace

TEST_CASE("config validation") {
  auto c = tiny();
  c.d_model = 31;
  CHECK_THROWS_AS(c.validate(), ShapeError);
  c = tiny();
  c.n_heads = 0;
  CHECK_THROWS_AS(c.validate(), ShapeError);
  TokenLayout big;
  big.img_len = 30;
  CHECK_THROWS_AS(tiny().check_layout(big), ShapeError);
  CHECK_NOTHROW(tiny().check_layout(TokenLayout{}));
}

TEST_CASE("parameter layout is contiguous and ordered") {
  const auto specs = parameter_layout(tiny());
  std::size_t offset = 0;
  for (const auto& s : specs) {
    CHECK(s.offset == offset);
    offset += s.size();
  }
  CHECK(offset == parameter_count(tiny()));
  CHECK(specs.front().name == "tok_emb");
  CHECK(specs.back().name == "head");
}

TEST_CASE("loss_ce examples") {
  const std::vector<double> uniform{0, 0, 0};
  CHECK(loss_ce(uniform, 1) == doctest::Approx(1.0986122886681098).epsilon(1e-14));
  const std::vector<double> saturated{10, -10};
  CHECK(loss_ce(saturated, 0) == doctest::Approx(2.0611536203143807e-9).epsilon(1e-10));
  // Independent arbitrary-precision evaluation: 0.407605964444380304482919904545
  const std::vector<double> ramp{1, 2, 3};
  CHECK(std::abs(loss_ce(ramp, 2) - 0.4076059644443803) < 1e-15);
  CHECK_THROWS_AS(loss_ce(ramp, 3), VocabularyError);
  const std::vector<double> bad{0, NAN};
  CHECK_THROWS_AS(loss_ce(bad, 0), NumericError);
}

TEST_CASE("forward shape, causality and row sums") {
  const Model model(Checkpoint::initialize(tiny()));
  const auto tokens = tokens_for(1, 10, 16);
  const auto pass = model.forward(tokens);
  CHECK(pass.seq_len() == 10);
  CHECK(pass.logits().cols == 16);
  const auto& tape = pass.tape();
  CHECK(tape.attention.size() == 4);
  for (const auto& A : tape.attention) {
    CHECK(A.rows == 10);
    CHECK(A.cols == 10);
    for (int i = 0; i < 10; ++i) {
      double sum = 0.0;
      for (int j = 0; j < 10; ++j) {
        if (j > i) CHECK(A(i, j) == 0.0);
        CHECK(A(i, j) >= 0.0);
        sum += A(i, j);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  CHECK_FALSE(tape.has_gradients());
}

TEST_CASE("forward is deterministic") {
  const Model model(Checkpoint::initialize(tiny()));
  const auto tokens = tokens_for(2, 12, 16);
  const auto a = model.forward(tokens);
  const auto b = model.forward(tokens);
  CHECK(a.logits() == b.logits());
  CHECK(a.tape().attention == b.tape().attention);
}

TEST_CASE("zero output head gives uniform logits") {
  auto ckpt = Checkpoint::initialize(tiny());
  for (double& w : ckpt.tensor("head")) w = 0.0;
  const Model model(ckpt);
  const std::vector<TokenId> one{5};
  const auto pass = model.forward(one);
  for (double v : pass.logits_at(0)) CHECK(v == pass.logits_at(0)[0]);
}

TEST_CASE("forward input errors") {
  const Model model(Checkpoint::initialize(tiny()));
  CHECK_THROWS_AS(model.forward(std::vector<TokenId>(25, 1)), LengthError);
  CHECK_THROWS_AS(model.forward(std::vector<TokenId>{1, 16}), VocabularyError);
  ForwardPass empty;
  CHECK_THROWS_AS(model.backward_attention(empty, 0, 1), StateError);
  auto pass = model.forward(std::vector<TokenId>{1, 2, 3});
  CHECK_THROWS_AS(model.backward_attention(pass, 3, 1), LengthError);
}

TEST_CASE("incremental decoder matches the full forward bit for bit") {
  for (Precision p : {Precision::f64, Precision::f32}) {
    auto cfg = tiny();
    cfg.precision = p;
    const Model model(Checkpoint::initialize(cfg));
    const auto tokens = tokens_for(4, 20, 16);
    const auto full = model.forward(tokens);
    IncrementalDecoder dec(model);
    for (int i = 0; i < 20; ++i) {
      const auto logits = dec.push(tokens[i]);
      for (int v = 0; v < 16; ++v) CHECK(logits[v] == full.logits_at(i)[v]);
    }
    CHECK(dec.length() == 20);
  }
}

TEST_CASE("gradient of attention matches finite differences") {
  SUBCASE("acceptance geometry: 2 layers, 2 heads, d=32, n=12") {
    const Model model(Checkpoint::initialize(tiny(5)));
    CHECK(max_rel_error(model, tokens_for(6, 12, 16), 11, 3) <= 1e-4);
  }
  SUBCASE("loss at an interior position") {
    const Model model(Checkpoint::initialize(tiny(7)));
    CHECK(max_rel_error(model, tokens_for(8, 9, 16), 4, 9) <= 1e-4);
  }
  SUBCASE("4 layers, 4 heads, n=24") {
    ModelConfig c = tiny(9);
    c.n_layers = 4;
    c.n_heads = 4;
    const Model model(Checkpoint::initialize(c));
    CHECK(max_rel_error(model, tokens_for(10, 24, 16), 23, 1) <= 1e-4);
  }
}

TEST_CASE("gradient tape properties") {
  const Model model(Checkpoint::initialize(tiny()));
  const auto tokens = tokens_for(12, 8, 16);
  auto a = model.forward(tokens);
  model.backward_attention(a, 7, 2);
  auto b = model.forward(tokens);
  model.backward_attention(b, 7, 3);
  CHECK_FALSE(a.tape().gradient == b.tape().gradient);
  for (const auto& G : a.tape().gradient)
    for (int i = 0; i < G.rows; ++i)
      for (int j = i + 1; j < G.cols; ++j) CHECK(G(i, j) == 0.0);
  // Rows after the loss position carry no gradient.
  auto c = model.forward(tokens);
  model.backward_attention(c, 4, 2);
  for (const auto& G : c.tape().gradient)
    for (int i = 5; i < 8; ++i)
      for (int j = 0; j <= i; ++j) CHECK(G(i, j) == 0.0);
}

TEST_CASE("saturated target gives vanishing gradients") {
  auto ckpt = Checkpoint::initialize(tiny());
  auto head = ckpt.tensor("head");
  const int d = ckpt.config.d_model;
  // Token 4's head row aligned with the final LayerNorm bias dominates every logit.
  for (double& w : head) w = 0.0;
  for (double& g : ckpt.tensor("lnf.g")) g = 0.0;
  auto bias = ckpt.tensor("lnf.b");
  for (int k = 0; k < d; ++k) {
    bias[k] = 1.0;
    head[4 * d + k] = 100.0;
  }
  const Model model(ckpt);
  auto pass = model.forward(tokens_for(13, 6, 16));
  model.backward_attention(pass, 5, 4);
  for (const auto& G : pass.tape().gradient)
    for (double v : G.data) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("checkpoint round trip and errors") {
  const auto ckpt = Checkpoint::initialize(tiny());
  const auto path = temp_path("roundtrip.nmdl");
  save_checkpoint(ckpt, path);
  const auto loaded = load_checkpoint(path);
  CHECK(loaded == ckpt);
  const auto tokens = tokens_for(14, 10, 16);
  CHECK(Model(loaded).forward(tokens).logits() == Model(ckpt).forward(tokens).logits());

  const std::string good = read_file(path);
  const auto bad = temp_path("bad.nmdl");

  std::string text = good;
  text[0] = 'X';
  write_file_atomic(bad, text);
  CHECK_THROWS_AS(load_checkpoint(bad), FormatError);

  text = good;
  text[4] = '9';
  write_file_atomic(bad, text);
  CHECK_THROWS_AS(load_checkpoint(bad), VersionError);

  write_file_atomic(bad, good.substr(0, good.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(bad), TruncatedError);

  // d_model in the header (bytes 13..16) no longer matches the tensor records.
  text = good;
  const std::uint32_t d48 = 48;
  std::memcpy(text.data() + 13, &d48, 4);
  write_file_atomic(bad, text);
  CHECK_THROWS_AS(load_checkpoint(bad), ShapeError);

  CHECK_THROWS_AS(load_checkpoint(temp_path("does_not_exist.nmdl")), IoError);
  fs::remove(path);
  fs::remove(bad);
}

TEST_CASE("config json export") {
  const auto text = config_to_json(tiny());
  CHECK(text.find("\"d_model\": 32") != std::string::npos);
  CHECK(text.find("\"precision\": \"f64\"") != std::string::npos);
}

TEST_CASE("training") {
  std::vector<TrainingExample> data;
  for (int i = 0; i < 24; ++i) {
    TrainingExample ex;
    const TokenId a = static_cast<TokenId>(1 + i % 5);
    ex.tokens = {a, static_cast<TokenId>(a + 5), a, static_cast<TokenId>(a + 5)};
    ex.first_target = 1;
    data.push_back(ex);
  }
  const auto init = Checkpoint::initialize(tiny());
  TrainOptions opts;
  opts.epochs = 0;
  CHECK(train_toy(init, data, opts) == init);

  opts.epochs = 3;
  opts.batch_size = 8;
  opts.warmup_steps = 2;
  TrainReport report;
  const auto a = train_toy(init, data, opts, &report);
  const auto b = train_toy(init, data, opts);
  CHECK(a == b);
  CHECK(report.epoch_loss.size() == 3);
  CHECK(mean_loss(Model(a), data) < report.initial_loss);
  CHECK_THROWS_AS(train_toy(init, {}, opts), TrainingError);
}
