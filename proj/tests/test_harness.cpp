#include "doctest.h"

#include "salient/harness.hpp"
#include "salient/reports.hpp"

using namespace salient;
using namespace salient::harness;

namespace {

const Model& toy_model() {
  static const Model model = [] {
    ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_model = 16;
    c.vocab_size = task::kVocabUsed;
    c.max_seq_len = 40;
    c.rng_seed = 12;
    return Model(Checkpoint::initialize(c));
  }();
  return model;
}

task::TaskConfig task_config() {
  task::TaskConfig tc;
  tc.difficulty = 3;
  return tc;
}

DecodeOptions decode_options() {
  DecodeOptions o;
  o.max_new_tokens = 14;
  o.eos = task::kEos;
  o.sgrs.score.target_layers = {1};
  o.seed = 5;
  return o;
}

TokenLabel label(std::uint64_t sample, int position, Label l, double s) {
  TokenLabel t;
  t.sample = sample;
  t.position = position;
  t.token = task::object_token(0);
  t.label = l;
  t.saliency_prev = s;
  return t;
}

}  // namespace

TEST_CASE("labels follow grounding and skip neutral tokens") {
  const auto tc = task_config();
  const auto s = task::make_sample(1, 0, tc);
  std::vector<TokenId> out = s.reference_output();
  out.insert(out.end() - 1, {task::object_token(0), task::kIs});
  SaliencyScoreConfig cfg;
  cfg.target_layers = {1};
  const auto labels = label_tokens(toy_model(), s, tc.layout, out, cfg);
  REQUIRE(labels.size() == out.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto& l = labels[k];
    CHECK(l.position == tc.layout.prefix_len() + static_cast<int>(k));
    if (!task::is_content(out[k])) {
      CHECK(l.label == Label::neutral);
      CHECK_FALSE(l.saliency_prev.has_value());
    } else {
      CHECK(l.label == (s.grounded(out[k]) ? Label::correct : Label::hallucinated));
      CHECK(l.saliency_prev.has_value());
      CHECK(l.saliency_prompt.has_value());
    }
  }
  const auto bare = label_tokens(toy_model(), s, tc.layout, out, std::nullopt);
  for (const auto& l : bare) CHECK_FALSE(l.saliency_prev.has_value());
}

TEST_CASE("label saliency is the predecessor entry of the predicting row") {
  const auto tc = task_config();
  const auto s = task::make_sample(1, 3, tc);
  const auto out = s.reference_output();
  SaliencyScoreConfig cfg;
  cfg.target_layers = {0, 1};
  const auto labels = label_tokens(toy_model(), s, tc.layout, out, cfg);
  auto seq = s.prefix(tc.layout);
  seq.insert(seq.end(), out.begin(), out.end());
  for (const auto& l : labels) {
    if (!l.saliency_prev) continue;
    const int row = l.position - 1;
    std::vector<TokenId> head(seq.begin(), seq.begin() + row + 1);
    auto pass = toy_model().forward(head);
    toy_model().backward_attention(pass, row, l.token);
    const auto stack = build_stack(pass.tape());
    const double expect = (stack.layers[0](row, row - 1) + stack.layers[1](row, row - 1)) / 2;
    CHECK(*l.saliency_prev == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("stats on a separable set") {
  std::vector<TokenLabel> labels;
  for (int i = 0; i < 40; ++i) labels.push_back(label(i, 12, Label::correct, 0.5 + 0.01 * (i % 5)));
  for (int i = 0; i < 40; ++i) labels.push_back(label(i, 13, Label::hallucinated, 0.1 + 0.01 * (i % 5)));
  labels.push_back(label(0, 14, Label::neutral, 9.0));
  const auto r = stats_saliency(labels);
  CHECK(r.correct.count == 40);
  CHECK(r.correct.mean == doctest::Approx(0.52));
  CHECK(r.hallucinated.mean == doctest::Approx(0.12));
  CHECK(r.welch.p_greater < 1e-10);
  CHECK(r.high_saliency_hallucination_pct == 0.0);
  auto shuffled = labels;
  std::reverse(shuffled.begin(), shuffled.end());
  const auto again = stats_saliency(shuffled);
  CHECK(again.correct.mean == r.correct.mean);
  CHECK(again.welch.t == r.welch.t);
  labels.resize(50);
  CHECK_THROWS_AS(stats_saliency(labels), InsufficientDataError);
}

TEST_CASE("two-point bins") {
  std::vector<TokenLabel> labels{label(0, 12, Label::hallucinated, 0.0), label(0, 13, Label::correct, 1.0)};
  StatsReport r;
  bin_analysis(labels, r, 10);
  REQUIRE(r.bins.size() == 10);
  CHECK(r.bins[0].count == 1);
  CHECK(r.bins[0].rate == 1.0);
  CHECK(r.bins[9].count == 1);
  CHECK(r.bins[9].rate == 0.0);
  CHECK(r.bins[9].hi == 1.0);
  for (int b = 1; b < 9; ++b) CHECK(r.bins[b].empty);
  CHECK(r.spearman == doctest::Approx(-1.0));
  const auto csv = reports::bins_csv(r, 3);
  CHECK(csv.rfind("# seed=3\nbin,lo,hi,count,hallucinated,rate\n0,0,0.1,1,1,1\n", 0) == 0);
  CHECK(csv.find("# spearman=-1\n") != std::string::npos);
  StatsReport none;
  CHECK_THROWS_AS(bin_analysis({}, none, 10), InsufficientDataError);
}

TEST_CASE("evaluate counts hallucinations and recall") {
  const auto tc = task_config();
  const auto s = task::make_sample(2, 0, tc);
  DecodedSample d;
  d.output = s.reference_output();
  auto m = evaluate({s}, {d});
  CHECK(m.hallucinated == 0);
  CHECK(m.recall() == 1.0);
  CHECK(m.content == static_cast<int>(2 * s.scene.size()));
  TokenId absent = task::object_token(0);
  while (s.grounded(absent)) ++absent;
  d.output = {absent, task::kIs, task::kEos};
  m = evaluate({s}, {d});
  CHECK(m.hallucination_rate() == 1.0);
  CHECK(m.recall() == 0.0);
}

TEST_CASE("decode_corpus is independent of worker count") {
  const auto tc = task_config();
  const auto corpus = task::gen_corpus(4, 6, tc);
  auto o = decode_options();
  o.mode = DecodeMode::sgrs_locore;
  const auto a = decode_corpus(toy_model(), corpus, tc.layout, o, 3, 1);
  const auto b = decode_corpus(toy_model(), corpus, tc.layout, o, 3, 3);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(a[i].output == b[i].output);
    CHECK(a[i].id == corpus[i].id);
  }
  CHECK(reports::outputs_txt(a, 3) == reports::outputs_txt(b, 3));
}

TEST_CASE("intervention identity at r = 1 and response at r = 0") {
  const auto tc = task_config();
  const auto corpus = task::gen_corpus(6, 8, tc);
  const auto o = decode_options();
  const auto decoded = decode_corpus(toy_model(), corpus, tc.layout, o, 11, 1);
  const auto labels = label_corpus(toy_model(), corpus, tc.layout, decoded, o.sgrs.score, 1);
  InterventionOptions io;
  io.factors = {1.0, 0.0};
  io.quantile = 0.0;
  const auto r = intervention(toy_model(), corpus, tc.layout, decoded, labels, o, 11, io, 1);
  CHECK(r.identity_exact);
  REQUIRE(r.rows.size() == 2);
  CHECK(r.rows[0].events == r.eligible);
  CHECK(r.eligible > 0);
  CHECK(r.eligible <= static_cast<int>(corpus.size()));
  const auto csv = reports::intervention_csv(r, 11);
  CHECK(csv.find("identity_exact=true") != std::string::npos);
  io.quantile = 1.0;
  CHECK_THROWS_AS(intervention(toy_model(), corpus, tc.layout, decoded, labels, o, 11, io, 1),
                  InsufficientDataError);
}

TEST_CASE("sweep degenerate cells equal the baseline") {
  const auto tc = task_config();
  const auto corpus = task::gen_corpus(9, 6, tc);
  const auto cells = sweep(toy_model(), corpus, tc.layout, decode_options(), {0.0}, {0.0, 0.5},
                           {DecodeMode::baseline, DecodeMode::sgrs_locore}, 2, 1);
  REQUIRE(cells.size() == 4);
  const auto& base = cells[0].metrics;
  CHECK(cells[1].metrics.tokens == base.tokens);  // beta ignored by baseline
  CHECK(cells[2].mode == DecodeMode::sgrs_locore);
  CHECK(cells[2].metrics.tokens == base.tokens);
  CHECK(cells[2].metrics.hallucinated == base.hallucinated);
  CHECK(cells[2].metrics.gold_hit == base.gold_hit);
  const auto csv = reports::sweep_csv(cells, 2);
  CHECK(csv.find("ms") == std::string::npos);
  CHECK_THROWS_AS(sweep(toy_model(), corpus, tc.layout, decode_options(), {}, {0.0}, {DecodeMode::baseline}, 2, 1),
                  ConfigError);
}
