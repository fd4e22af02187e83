#pragma once
// Experiments over the synthetic task: corpus decoding, mechanical labels,
// saliency statistics, the decay intervention and parameter sweeps.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "salient/nanomodel.hpp"
#include "salient/saliency.hpp"
#include "salient/sgrs.hpp"
#include "salient/stats.hpp"
#include "salient/task.hpp"

namespace salient::harness {

using task::SyntheticSample;

struct DecodedSample {
  std::uint64_t id = 0;
  std::vector<TokenId> output;
  std::vector<DecodeStepTrace> trace;
  double elapsed_ms = 0.0;
};

// Per-sample decode seed derived from the run seed and the sample id.
std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t id);

// Decodes every sample (parallel over samples); results are in corpus order.
std::vector<DecodedSample> decode_corpus(const Model& model, const std::vector<SyntheticSample>& corpus,
                                         const TokenLayout& layout, const DecodeOptions& options,
                                         std::uint64_t seed, int jobs);

enum class Label { correct, hallucinated, neutral };
const char* to_string(Label label);

struct TokenLabel {
  std::uint64_t sample = 0;
  int position = 0;
  TokenId token = 0;
  Label label = Label::neutral;
  std::optional<double> saliency_prev;    // from the immediately preceding output token
  std::optional<double> saliency_prompt;  // mean over prompt positions, for inspection
};

// Labels every emitted token: content tokens are correct iff grounded, other
// tokens neutral. Saliency is read from the row that predicted the token with
// the predecessor scope at cfg.target_layers. Pass cfg = nullopt to skip the
// backward passes.
std::vector<TokenLabel> label_tokens(const Model& model, const SyntheticSample& sample, const TokenLayout& layout,
                                     const std::vector<TokenId>& output,
                                     const std::optional<SaliencyScoreConfig>& cfg);

std::vector<TokenLabel> label_corpus(const Model& model, const std::vector<SyntheticSample>& corpus,
                                     const TokenLayout& layout, const std::vector<DecodedSample>& decoded,
                                     const std::optional<SaliencyScoreConfig>& cfg, int jobs);

struct Bin {
  double lo = 0.0;
  double hi = 0.0;
  int count = 0;
  int hallucinated = 0;
  double rate = 0.0;
  bool empty = true;
};

struct StatsReport {
  stats::Summary correct;
  stats::Summary hallucinated;
  stats::Summary prompt_correct;
  stats::Summary prompt_hallucinated;
  stats::WelchResult welch;
  std::vector<Bin> bins;
  double spearman = 0.0;  // bin index vs rate over non-empty bins
  double high_saliency_threshold = 0.0;
  double high_saliency_hallucination_pct = 0.0;
};

// Means, spreads and Welch test for correct vs hallucinated saliency.
// Throws InsufficientDataError when a class has fewer than min_count tokens.
StatsReport stats_saliency(const std::vector<TokenLabel>& labels, int min_count = 30);

// Equal-width bins over [min, max] of labeled saliencies; the maximum lands in
// the last bin. Fills report.bins and report.spearman.
void bin_analysis(const std::vector<TokenLabel>& labels, StatsReport& report, int n_bins = 10);

struct Metrics {
  int samples = 0;
  int tokens = 0;
  int content = 0;
  int hallucinated = 0;
  int gold_total = 0;
  int gold_hit = 0;
  double elapsed_ms = 0.0;

  double hallucination_rate() const { return content > 0 ? static_cast<double>(hallucinated) / content : 0.0; }
  double recall() const { return gold_total > 0 ? static_cast<double>(gold_hit) / gold_total : 0.0; }
  double ms_per_token() const { return tokens > 0 ? elapsed_ms / tokens : 0.0; }
};

Metrics evaluate(const std::vector<SyntheticSample>& corpus, const std::vector<DecodedSample>& decoded);

// Greedy token accuracy against the reference output (teacher-forced prefix,
// free-running decode compared position by position, padded mismatches count).
double greedy_token_accuracy(const Model& model, const std::vector<SyntheticSample>& corpus,
                             const TokenLayout& layout, int jobs);

struct InterventionRow {
  double factor = 1.0;
  int events = 0;
  int content = 0;
  int hallucinated = 0;
  double rate() const { return content > 0 ? static_cast<double>(hallucinated) / content : 0.0; }
};

struct InterventionReport {
  double threshold = 0.0;  // saliency selection threshold
  int eligible = 0;
  std::vector<InterventionRow> rows;
  bool identity_exact = true;  // every r = 1 re-decode matched the original
};

struct InterventionOptions {
  std::vector<double> factors{1.0, 0.8, 0.6, 0.4, 0.2};
  double quantile = 0.75;    // of correct-token saliency
  int max_per_sample = 1;    // highest-saliency eligible tokens per sample
};

// For each eligible (sample, token) the sample is re-decoded from its prefix
// with its original seed while a DecayHook scales attention to the token's
// position by r. Hallucination is counted over content tokens after the
// token that immediately follows the intervened one.
InterventionReport intervention(const Model& model, const std::vector<SyntheticSample>& corpus,
                                const TokenLayout& layout, const std::vector<DecodedSample>& decoded,
                                const std::vector<TokenLabel>& labels, const DecodeOptions& options,
                                std::uint64_t seed, const InterventionOptions& iopts, int jobs);

struct SweepCell {
  DecodeMode mode;
  double alpha;
  double beta;
  Metrics metrics;
  int fallbacks = 0;
  int rejections = 0;
};

// One cell per (mode, alpha, beta); alpha is ignored by modes without SGRS and
// beta by modes without LocoRE, and such duplicates are decoded once.
std::vector<SweepCell> sweep(const Model& model, const std::vector<SyntheticSample>& corpus,
                             const TokenLayout& layout, const DecodeOptions& base,
                             const std::vector<double>& alphas, const std::vector<double>& betas,
                             const std::vector<DecodeMode>& modes, std::uint64_t seed, int jobs);

}  // namespace salient::harness
