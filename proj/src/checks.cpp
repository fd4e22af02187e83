#include "salient/checks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "salient/locore.hpp"
#include "salient/rng.hpp"
#include "salient/saliency.hpp"

namespace salient::checks {

namespace {

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// Adds delta to one post-softmax entry so the loss can be differenced in A.
class Nudge final : public AttentionHook {
 public:
  Nudge(int layer, int head, int row, int col, double delta)
      : layer_(layer), head_(head), row_(row), col_(col), delta_(delta) {}
  bool touches(const RowSite& s) const override { return s.layer == layer_ && s.head == head_ && s.query == row_; }
  void apply(const RowSite&, std::span<double> row) const override { row[col_] += delta_; }
  void backprop(const RowSite&, std::span<const double>, std::span<double>) const override {}

 private:
  int layer_, head_, row_, col_;
  double delta_;
};

ModelConfig small_config(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_model = 32;
  cfg.vocab_size = 16;
  cfg.max_seq_len = 16;
  cfg.rng_seed = seed;
  return cfg;
}

std::vector<TokenId> random_tokens(Rng& rng, int n, int vocab) {
  std::vector<TokenId> t(n);
  for (auto& x : t) x = static_cast<TokenId>(rng.below(vocab));
  return t;
}

}  // namespace

Result gradient_fidelity(std::uint64_t seed, double eps, double tolerance) {
  const auto cfg = small_config(seed);
  const Model model(Checkpoint::initialize(cfg));
  Rng rng(mix_seed(seed, 1));
  const int n = 12;
  const auto tokens = random_tokens(rng, n, cfg.vocab_size);
  const int position = n - 1;
  const auto target = static_cast<TokenId>(rng.below(cfg.vocab_size));
  auto pass = model.forward(tokens);
  model.backward_attention(pass, position, target);
  const auto& tape = pass.tape();
  double worst = 0.0;
  int compared = 0;
  for (int l = 0; l < cfg.n_layers; ++l)
    for (int h = 0; h < cfg.n_heads; ++h)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
          const double g = tape.grad(l, h)(i, j);
          if (std::abs(g) <= 1e-8) continue;
          const auto plus = model.forward(tokens, std::make_shared<Nudge>(l, h, i, j, eps));
          const auto minus = model.forward(tokens, std::make_shared<Nudge>(l, h, i, j, -eps));
          const double fd =
              (loss_ce(plus.logits_at(position), target) - loss_ce(minus.logits_at(position), target)) / (2 * eps);
          worst = std::max(worst, std::abs(g - fd) / std::max(std::abs(g), std::abs(fd)));
          ++compared;
        }
  return {"gradient fidelity", compared > 0 && worst <= tolerance,
          fmt("max rel err %.3g over %.0f entries (tol %.0e)", worst, compared, tolerance)};
}

Result saliency_invariants(std::uint64_t seed, int trials) {
  const auto cfg = small_config(seed);
  const Model model(Checkpoint::initialize(cfg));
  Rng rng(mix_seed(seed, 2));
  const int n = 12;
  const auto tokens = random_tokens(rng, n, cfg.vocab_size);
  auto pass = model.forward(tokens);
  model.backward_attention(pass, n - 1, tokens[0]);
  const auto stack = build_stack(pass.tape());
  double worst_norm = 0.0;
  bool structure = true;
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    const auto& S = stack.layers[l];
    double ss = 0.0;
    for (int i = 0; i < S.rows; ++i)
      for (int j = 0; j < S.cols; ++j) {
        const double v = S(i, j);
        if (v < 0.0 || (j > i && v != 0.0)) structure = false;
        ss += v * v;
      }
    if (!stack.degenerate[l]) worst_norm = std::max(worst_norm, std::abs(std::sqrt(ss) - 1.0));
  }
  int sign_failures = 0;
  for (int t = 0; t < trials; ++t) {
    const int r = 1 + static_cast<int>(rng.below(8));
    Matrix A(r, r), G(r, r), F(r, r);
    for (std::size_t k = 0; k < A.data.size(); ++k) {
      A.data[k] = rng.uniform();
      G.data[k] = rng.normal();
      F.data[k] = rng.uniform() < 0.5 ? -G.data[k] : G.data[k];
    }
    if (!(per_head_saliency(A, G) == per_head_saliency(A, F))) ++sign_failures;
  }
  const bool ok = structure && worst_norm <= 1e-6 && sign_failures == 0;
  return {"saliency invariants", ok,
          fmt("tril/non-negative %.0f, max |norm-1| %.2g, sign-invariance failures %.0f", structure ? 1 : 0,
              worst_norm, sign_failures)};
}

Result aggregation_divergence() {
  const Matrix A(1, 1, 1.0);
  const Matrix Gp(1, 1, 1.0), Gm(1, 1, -1.0);
  const double main_text = head_sum({per_head_saliency(A, Gp), per_head_saliency(A, Gm)})(0, 0);
  const double appendix = appendix_saliency({A, A}, {Gp, Gm})(0, 0);
  return {"aggregation divergence", appendix == 0.0 && main_text > 0.0,
          fmt("main_text %.3g, appendix_taylor %.3g", main_text, appendix)};
}

Result sgrs_degeneracy(const Model& model, const std::vector<task::SyntheticSample>& corpus,
                       const TokenLayout& layout, DecodeOptions base, int jobs) {
  base.mode = DecodeMode::baseline;
  const auto plain = harness::decode_corpus(model, corpus, layout, base, base.seed, jobs);
  base.mode = DecodeMode::sgrs;
  base.sgrs.alpha = 0.0;
  const auto sgrs = harness::decode_corpus(model, corpus, layout, base, base.seed, jobs);
  int mismatched = 0;
  long tokens = 0;
  for (std::size_t i = 0; i < plain.size(); ++i) {
    if (plain[i].output != sgrs[i].output) ++mismatched;
    tokens += static_cast<long>(plain[i].output.size());
  }
  return {"sgrs alpha=0 degeneracy", mismatched == 0 && !corpus.empty(),
          fmt("%.0f/%.0f samples differ (%.0f tokens)", mismatched, static_cast<double>(corpus.size()),
              static_cast<double>(tokens))};
}

Result locore_locality(const Model& model, const std::vector<task::SyntheticSample>& corpus,
                       const TokenLayout& layout, double beta, int window) {
  LocoreConfig lc;
  lc.layout = layout;
  lc.window = window;
  bool identity = true, local = true;
  double worst_ratio = 0.0;
  int rows_checked = 0;
  for (const auto& sample : corpus) {
    // Prefix plus the reference description so the final row has output history.
    auto tokens = sample.prefix(layout);
    for (TokenId t : sample.reference_output()) tokens.push_back(t);
    tokens.resize(std::min<std::size_t>(tokens.size(), model.config().max_seq_len));
    const auto plain = model.forward(tokens);

    lc.beta = 0.0;
    const auto zero = model.forward(tokens, std::make_shared<LocoreHook>(lc));
    if (!(zero.logits() == plain.logits()) || !(zero.tape().attention == plain.tape().attention)) identity = false;

    lc.beta = beta;
    const auto gained = model.forward(tokens, std::make_shared<LocoreHook>(lc));
    const int n = static_cast<int>(tokens.size());
    const int q = n - 1;
    const auto J = layout.output_positions(q);
    for (int l = 0; l < model.config().n_layers; ++l)
      for (int h = 0; h < model.config().n_heads; ++h) {
        const auto& a = plain.tape().attn(l, h);
        const auto& b = gained.tape().attn(l, h);
        for (int i = 0; i < q; ++i)
          for (int j = 0; j <= i; ++j)
            if (a(i, j) != b(i, j)) local = false;
        if (l != 0) continue;
        double mass_a = 0.0, mass_b = 0.0;
        for (int j = 0; j <= q; ++j) {
          const bool in_window = j >= J.begin && j < J.end && q - j <= window;
          if (in_window) {
            mass_a += a(q, j);
            mass_b += b(q, j);
          } else if (a(q, j) != b(q, j)) {
            local = false;
          }
        }
        if (mass_a > 0.0) {
          worst_ratio = std::max(worst_ratio, std::abs(mass_b / mass_a - (1.0 + beta)));
          ++rows_checked;
        }
      }
  }
  const bool ok = identity && local && rows_checked > 0 && worst_ratio <= 1e-12;
  return {"locore degeneracy and locality", ok,
          fmt("beta=0 identical %.0f, locality %.0f, max |mass ratio-(1+beta)| %.2g", identity ? 1 : 0, local ? 1 : 0,
              worst_ratio)};
}

Result rejection_monotone(std::uint64_t seed, int trials) {
  Rng rng(mix_seed(seed, 3));
  int violations = 0;
  for (int t = 0; t < trials; ++t) {
    const int k = 1 + static_cast<int>(rng.below(6));
    std::vector<Candidate> base;
    std::vector<double> scores;
    for (int c = 0; c < k; ++c) {
      base.push_back({static_cast<TokenId>(c), 1.0 / k, std::nullopt, -1});
      scores.push_back(rng.uniform());
    }
    const double mean = rng.uniform();
    std::vector<std::size_t> order(k);
    for (int c = 0; c < k; ++c) order[c] = c;
    for (int c = k; c > 1; --c) std::swap(order[c - 1], order[rng.below(c)]);
    const auto scorer = [&](TokenId c) -> std::optional<double> { return scores[c]; };
    // Scripted picker: always the first remaining index in a fixed order.
    const auto pick = [&](const std::vector<std::size_t>& remaining, const std::vector<Candidate>&) {
      for (std::size_t want : order)
        for (std::size_t off = 0; off < remaining.size(); ++off)
          if (remaining[off] == want) return off;
      return std::size_t{0};
    };
    int previous = -1;
    for (double alpha = 0.0; alpha <= 2.0; alpha += 0.1) {
      auto cands = base;
      const auto out = run_rejection(cands, alpha * mean, k, scorer, pick);
      if (out.rejections < previous) ++violations;
      previous = out.rejections;
    }
  }
  return {"monotone rejection", violations == 0, fmt("%.0f violations over %.0f scripted steps", violations, trials)};
}

Result acceptance_soundness(const std::vector<harness::DecodedSample>& decoded) {
  int bad = 0, checked = 0;
  for (const auto& d : decoded)
    for (const auto& step : d.trace) {
      if (step.via != AcceptedVia::threshold) continue;
      ++checked;
      const auto it = std::find_if(step.candidates.begin(), step.candidates.end(),
                                   [&](const Candidate& c) { return c.token == step.accepted; });
      if (it == step.candidates.end() || !it->saliency || !step.tau || *it->saliency < *step.tau) ++bad;
    }
  return {"acceptance soundness", bad == 0, fmt("%.0f of %.0f threshold acceptances below tau", bad, checked)};
}

}  // namespace salient::checks
