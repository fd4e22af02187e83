#include <map>

#include "doctest.h"

#include "salient/sgrs.hpp"
#include "salient/task.hpp"

using namespace salient;

namespace {

std::vector<Candidate> cands(int k) {
  std::vector<Candidate> c;
  for (int i = 0; i < k; ++i) c.push_back({static_cast<TokenId>(i), 1.0 / k, std::nullopt, -1});
  return c;
}

// Picks candidates in a fixed order of candidate indices.
CandidatePicker scripted(std::vector<std::size_t> order) {
  return [order](const std::vector<std::size_t>& remaining, const std::vector<Candidate>&) {
    for (std::size_t want : order)
      for (std::size_t off = 0; off < remaining.size(); ++off)
        if (remaining[off] == want) return off;
    return std::size_t{0};
  };
}

CandidateScorer table(std::vector<double> scores) {
  return [scores](TokenId t) -> std::optional<double> { return scores[t]; };
}

ModelConfig small() {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 16;
  c.vocab_size = task::kVocabUsed;
  c.max_seq_len = 32;
  c.rng_seed = 41;
  return c;
}

DecodeOptions options_for(const Model& model) {
  DecodeOptions o;
  o.sgrs.score.target_layers = SaliencyScoreConfig::default_layers(model.config().n_layers);
  o.max_new_tokens = 12;
  o.eos = task::kEos;
  o.seed = 99;
  return o;
}

std::vector<TokenId> prefix() {
  TokenLayout l;
  task::TaskConfig tc;
  return task::make_sample(5, 0, tc).prefix(l);
}

}  // namespace

TEST_CASE("adaptive threshold examples") {
  SaliencyHistory h;
  h.append(8, 0.5);
  h.append(9, 0.3);
  CHECK(*adaptive_threshold(h, 0.6, 2, 10) == doctest::Approx(0.24));
  CHECK(*adaptive_threshold(h, 0.0, 2, 10) == 0.0);
  CHECK_FALSE(adaptive_threshold(SaliencyHistory{}, 0.6, 2, 10).has_value());
  CHECK_THROWS_AS(h.append(9, 0.1), StateError);
}

TEST_CASE("entries outside the window do not affect tau") {
  SaliencyHistory a, b;
  a.append(2, 0.9);
  b.append(2, 0.01);
  for (SaliencyHistory* h : {&a, &b}) {
    h->append(10, 0.4);
    h->append(12, 0.2);
  }
  // P = 15, W = 4: only j with 14 - j <= 4, i.e. j >= 10, count.
  CHECK(*adaptive_threshold(a, 1.0, 4, 15) == *adaptive_threshold(b, 1.0, 4, 15));
  CHECK(*adaptive_threshold(a, 1.0, 4, 15) == doctest::Approx(0.3));
  SaliencyHistory old;
  old.append(1, 0.5);
  CHECK_FALSE(adaptive_threshold(old, 0.6, 4, 15).has_value());
}

TEST_CASE("scripted oracle: reject 0 and 2, accept 1 on round 3") {
  auto c = cands(3);
  const auto out = run_rejection(c, 0.4, 3, table({0.1, 0.5, 0.2}), scripted({0, 2, 1}));
  CHECK(c[out.index].token == 1);
  CHECK(out.via == AcceptedVia::threshold);
  CHECK(out.rejections == 2);
  CHECK(c[1].round == 3);
  CHECK(c[0].round == 1);
  CHECK(c[2].round == 2);
  CHECK(*out.saliency == 0.5);
}

TEST_CASE("fallback picks the best saliency over the original set") {
  auto c = cands(3);
  const auto out = run_rejection(c, 0.9, 2, table({0.1, 0.5, 0.2}), scripted({0, 2, 1}));
  CHECK(out.via == AcceptedVia::fallback);
  CHECK(c[out.index].token == 1);  // never sampled, still scored for the fallback
  CHECK(out.rejections == 2);
  CHECK(c[1].round == -1);

  auto single = cands(1);
  const auto one = run_rejection(single, 0.9, 1, table({0.3}), scripted({0}));
  CHECK(one.via == AcceptedVia::fallback);
  CHECK(one.index == 0);

  auto tie = cands(3);
  const auto t = run_rejection(tie, 0.9, 3, table({0.4, 0.4, 0.1}), scripted({2, 1, 0}));
  CHECK(tie[t.index].token == 0);
}

TEST_CASE("no history accepts the first draw") {
  auto c = cands(3);
  const auto out = run_rejection(c, std::nullopt, 3, table({0.0, 0.0, 0.0}), scripted({2, 0, 1}));
  CHECK(out.via == AcceptedVia::no_history);
  CHECK(c[out.index].token == 2);
  auto d = cands(2);
  const auto none = run_rejection(
      d, 0.3, 2, [](TokenId) -> std::optional<double> { return std::nullopt; }, scripted({1, 0}));
  CHECK(none.via == AcceptedVia::no_history);
  CHECK_FALSE(none.saliency.has_value());
}

TEST_CASE("raising alpha never lowers the rejection count") {
  const std::vector<double> scores{0.15, 0.35, 0.05, 0.6, 0.25};
  int previous = -1;
  for (double alpha = 0.0; alpha <= 2.0; alpha += 0.05) {
    auto c = cands(5);
    const auto out = run_rejection(c, alpha * 0.4, 5, table(scores), scripted({2, 0, 4, 1, 3}));
    CHECK(out.rejections >= previous);
    previous = out.rejections;
  }
  CHECK(previous == 5);
}

TEST_CASE("top-K candidates and sampling") {
  const std::vector<double> logits{1.0, 3.0, 2.0, 3.0};
  const auto c = top_k_candidates(logits, 3, 1.0);
  REQUIRE(c.size() == 3);
  CHECK(c[0].token == 1);  // tie with 3 goes to the lower id
  CHECK(c[1].token == 3);
  CHECK(c[2].token == 2);
  CHECK(c[0].prob + c[1].prob + c[2].prob == doctest::Approx(1.0));
  const auto greedy = top_k_candidates(logits, 3, 0.0);
  REQUIRE(greedy.size() == 1);
  CHECK(greedy[0].token == 1);

  const std::vector<double> p{0.2, 0.3, 0.5};
  CHECK(sample_index(p, 0.0) == 0);
  CHECK(sample_index(p, 0.19) == 0);
  CHECK(sample_index(p, 0.21) == 1);
  CHECK(sample_index(p, 0.99) == 2);

  Rng rng(3);
  std::map<TokenId, int> counts;
  for (int i = 0; i < 4000; ++i) ++counts[sample_top_k(logits, 2, 1.0, rng)];
  CHECK(counts.size() == 2);
  CHECK(counts[1] == doctest::Approx(2000).epsilon(0.1));
}

TEST_CASE("config validation and mode names") {
  SgrsConfig c;
  c.score.target_layers = {1};
  CHECK_NOTHROW(c.validate(2));
  c.top_k = 0;
  CHECK_THROWS_AS(c.validate(2), ConfigError);
  c.top_k = 5;
  c.alpha = -1;
  CHECK_THROWS_AS(c.validate(2), ConfigError);
  c.alpha = 0.6;
  c.score.target_layers = {2};
  CHECK_THROWS_AS(c.validate(2), ConfigError);
  for (DecodeMode m : {DecodeMode::baseline, DecodeMode::sgrs, DecodeMode::locore, DecodeMode::sgrs_locore})
    CHECK(parse_mode(to_string(m)) == m);
  CHECK(std::string(to_string(DecodeMode::sgrs_locore)) == "sgrs+locore");
  CHECK_THROWS_AS(parse_mode("beam"), ConfigError);
}

TEST_CASE("score_candidate is pure and the shared scorer agrees with it") {
  const Model model(Checkpoint::initialize(small()));
  auto ctx = prefix();
  ctx.push_back(task::object_token(2));
  ctx.push_back(task::kIs);
  SaliencyScoreConfig cfg;
  cfg.target_layers = {1};
  const auto a = score_candidate(model, ctx, task::attribute_token(2), cfg);
  const auto b = score_candidate(model, ctx, task::attribute_token(2), cfg);
  REQUIRE(a.has_value());
  CHECK(*a == *b);
  CHECK(*a >= 0.0);
  ContextScorer shared(model, ctx, cfg);
  for (TokenId t : {task::attribute_token(2), task::attribute_token(5), task::kSep})
    CHECK(shared(t) == score_candidate(model, ctx, t, cfg));
  CHECK(score_candidate(model, ctx, task::attribute_token(2), cfg) !=
        score_candidate(model, ctx, task::attribute_token(5), cfg));
  // Context ending before the output span: nothing to score against.
  const auto pre = prefix();
  const std::vector<TokenId> short_ctx(pre.begin(), pre.begin() + TokenLayout{}.output_start());
  CHECK_FALSE(score_candidate(model, short_ctx, task::object_token(1), cfg).has_value());
}

TEST_CASE("decode degeneracies") {
  const Model model(Checkpoint::initialize(small()));
  const auto pre = prefix();
  auto o = options_for(model);
  const auto baseline = decode(model, pre, o);
  CHECK(baseline.trace.empty());
  CHECK_FALSE(baseline.tokens.empty());

  o.mode = DecodeMode::locore;
  o.locore.beta = 0.0;
  CHECK(decode(model, pre, o).tokens == baseline.tokens);

  o.mode = DecodeMode::sgrs;
  o.sgrs.alpha = 0.0;
  const auto sgrs = decode(model, pre, o);
  CHECK(sgrs.tokens == baseline.tokens);
  for (const auto& s : sgrs.trace) CHECK(s.via != AcceptedVia::fallback);

  o.mode = DecodeMode::sgrs_locore;
  CHECK(decode(model, pre, o).tokens == baseline.tokens);
}

TEST_CASE("greedy decoding is deterministic and trace is sound") {
  const Model model(Checkpoint::initialize(small()));
  auto o = options_for(model);
  o.sgrs.temperature = 0.0;
  CHECK(decode(model, prefix(), o).tokens == decode(model, prefix(), o).tokens);

  o.mode = DecodeMode::sgrs_locore;
  o.sgrs.temperature = 1.0;
  o.sgrs.alpha = 1.5;
  const auto r = decode(model, prefix(), o);
  REQUIRE(r.trace.size() == r.tokens.size());
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    const auto& s = r.trace[i];
    CHECK(s.accepted == r.tokens[i]);
    bool found = false;
    for (const auto& c : s.candidates)
      if (c.token == s.accepted) {
        found = true;
        if (s.via == AcceptedVia::threshold) CHECK(*c.saliency >= *s.tau);
      }
    CHECK(found);
  }
  const auto jsonl = trace_to_jsonl(r.trace, o.seed, o.mode);
  CHECK(jsonl.rfind("{\"seed\":99,\"mode\":\"sgrs+locore\"", 0) == 0);
  CHECK(static_cast<std::size_t>(std::count(jsonl.begin(), jsonl.end(), '\n')) == r.trace.size() + 1);
}

TEST_CASE("history on fallback flag") {
  const Model model(Checkpoint::initialize(small()));
  auto o = options_for(model);
  o.mode = DecodeMode::sgrs;
  o.sgrs.alpha = 50.0;  // every threshold round fails
  o.sgrs.history_on_fallback = false;
  const auto strict = decode(model, prefix(), o);
  for (const auto& s : strict.trace) CHECK(s.via != AcceptedVia::threshold);
  o.sgrs.history_on_fallback = true;
  const auto loose = decode(model, prefix(), o);
  int fallbacks = 0;
  for (const auto& s : loose.trace) fallbacks += s.via == AcceptedVia::fallback;
  CHECK(fallbacks > 0);
}
