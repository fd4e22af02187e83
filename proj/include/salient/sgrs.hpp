#pragma once
// Saliency-guided rejection sampling and the decode loop that combines it with
// LocoRE.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "salient/locore.hpp"
#include "salient/nanomodel.hpp"
#include "salient/rng.hpp"
#include "salient/saliency.hpp"

namespace salient {

struct SgrsConfig {
  int top_k = 5;
  int max_rounds = 5;
  double alpha = 0.6;
  int window = 10;
  SaliencyScoreConfig score;
  double temperature = 1.0;  // <= 0 selects greedy
  bool history_on_fallback = true;
  bool score_with_locore = false;

  void validate(int n_layers) const;
};

struct HistoryEntry {
  int position;
  double saliency;
};

class SaliencyHistory {
 public:
  // Positions must be strictly increasing.
  void append(int position, double saliency);
  const std::vector<HistoryEntry>& entries() const { return entries_; }
  std::vector<HistoryEntry>& mutable_entries() { return entries_; }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<HistoryEntry> entries_;
};

// alpha * mean saliency over entries j < P with (P - 1) - j <= window.
// nullopt when no entry falls in the window: every candidate is accepted.
std::optional<double> adaptive_threshold(const SaliencyHistory& history, double alpha, int window, int P);

enum class AcceptedVia { threshold, fallback, no_history };
const char* to_string(AcceptedVia via);

struct Candidate {
  TokenId token;
  double prob;                     // renormalized over the top-K set
  std::optional<double> saliency;  // unset when never scored
  int round = -1;                  // 1-based sampling round; -1 when not sampled
};

struct DecodeStepTrace {
  int position = 0;  // sequence position of the token being decided
  std::vector<Candidate> candidates;
  std::optional<double> tau;
  TokenId accepted = 0;
  AcceptedVia via = AcceptedVia::threshold;
  int rejections = 0;
};

// Top-K tokens by logit (ties to the lower id) with temperature-scaled
// probabilities renormalized over the set. temperature <= 0 keeps only the argmax.
std::vector<Candidate> top_k_candidates(std::span<const double> logits, int k, double temperature);

// Index into `probs` drawn with one uniform; probs need not sum to 1.
std::size_t sample_index(std::span<const double> probs, double u);

// Plain top-K temperature sampling: one uniform per call.
TokenId sample_top_k(std::span<const double> logits, int k, double temperature, Rng& rng);

// Rejection loop over a fixed candidate set. `scorer` returns nullopt when the
// candidate has no output history to be scored against; `pick` chooses an
// entry of `remaining` (indices into candidates) and returns its offset.
using CandidateScorer = std::function<std::optional<double>(TokenId)>;
using CandidatePicker = std::function<std::size_t(const std::vector<std::size_t>& remaining,
                                                  const std::vector<Candidate>& candidates)>;

struct RejectionOutcome {
  std::size_t index;  // into candidates
  AcceptedVia via;
  int rejections;
  std::optional<double> saliency;
};

RejectionOutcome run_rejection(std::vector<Candidate>& candidates, std::optional<double> tau, int max_rounds,
                               const CandidateScorer& scorer, const CandidatePicker& pick);

// Picker drawing one uniform per round from the remaining probability mass.
CandidatePicker rng_picker(Rng& rng);

// One candidate's saliency: forward on context, backward for target c at the
// last row, score over the configured layers and output positions.
std::optional<double> score_candidate(const Model& model, std::span<const TokenId> context, TokenId candidate,
                                      const SaliencyScoreConfig& cfg,
                                      std::shared_ptr<const AttentionHook> hook = nullptr);

// Scores candidates against one shared forward pass. Equal to calling
// score_candidate per candidate.
class ContextScorer {
 public:
  ContextScorer(const Model& model, std::span<const TokenId> context, const SaliencyScoreConfig& cfg,
                std::shared_ptr<const AttentionHook> hook = nullptr);
  // The forward pass runs on the first call that needs it.
  std::optional<double> operator()(TokenId candidate);

 private:
  const Model* model_;
  std::span<const TokenId> context_;
  const SaliencyScoreConfig* cfg_;
  std::shared_ptr<const AttentionHook> hook_;
  ForwardPass pass_;
};

struct SgrsStep {
  TokenId token;
  DecodeStepTrace trace;
};

// Decides the token following `context` given its next-token logits. Updates
// history according to the acceptance path.
SgrsStep sgrs_step(const Model& model, std::span<const TokenId> context, std::span<const double> logits,
                   SaliencyHistory& history, const SgrsConfig& cfg, Rng& rng,
                   std::shared_ptr<const AttentionHook> score_hook = nullptr);

enum class DecodeMode { baseline, sgrs, locore, sgrs_locore };
const char* to_string(DecodeMode mode);
DecodeMode parse_mode(const std::string& name);

struct DecodeOptions {
  DecodeMode mode = DecodeMode::baseline;
  SgrsConfig sgrs;
  LocoreConfig locore;
  int max_new_tokens = 24;
  std::optional<TokenId> eos;
  std::uint64_t seed = 0;
  // Applied to every forward (generation and scoring), e.g. an intervention.
  std::shared_ptr<const AttentionHook> extra_hook;
};

struct DecodeResult {
  std::vector<TokenId> tokens;  // generated tokens only
  std::vector<DecodeStepTrace> trace;
  double elapsed_ms = 0.0;
};

DecodeResult decode(const Model& model, std::span<const TokenId> prefix, const DecodeOptions& options);

// Header line with the seed and mode, then one JSON object per step.
std::string trace_to_jsonl(const std::vector<DecodeStepTrace>& trace, std::uint64_t seed, DecodeMode mode);

}  // namespace salient
