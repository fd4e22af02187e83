#include "salient/sgrs.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "json.hpp"

#include "salient/errors.hpp"
#include "salient/hooks.hpp"

namespace salient {

void SgrsConfig::validate(int n_layers) const {
  if (top_k < 1) throw ConfigError("sgrs.top_k must be >= 1");
  if (max_rounds < 1) throw ConfigError("sgrs.max_rounds must be >= 1");
  if (window < 1) throw ConfigError("sgrs.window must be >= 1");
  if (!(alpha >= 0.0)) throw ConfigError("sgrs.alpha must be >= 0");
  score.validate(n_layers);
}

void SaliencyHistory::append(int position, double saliency) {
  if (!entries_.empty() && position <= entries_.back().position)
    throw StateError("history positions must be strictly increasing");
  entries_.push_back({position, saliency});
}

std::optional<double> adaptive_threshold(const SaliencyHistory& history, double alpha, int window, int P) {
  double sum = 0.0;
  int count = 0;
  for (const auto& e : history.entries()) {
    if (e.position >= P || (P - 1) - e.position > window) continue;
    sum += e.saliency;
    ++count;
  }
  if (count == 0) return std::nullopt;
  return alpha * (sum / count);
}

const char* to_string(AcceptedVia via) {
  switch (via) {
    case AcceptedVia::threshold:
      return "threshold";
    case AcceptedVia::fallback:
      return "fallback";
    case AcceptedVia::no_history:
      return "no_history";
  }
  return "?";
}

std::vector<Candidate> top_k_candidates(std::span<const double> logits, int k, double temperature) {
  if (logits.empty()) throw ShapeError("empty logits");
  std::vector<TokenId> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t keep = temperature <= 0.0 ? 1 : std::min<std::size_t>(std::max(k, 1), logits.size());
  std::partial_sort(order.begin(), order.begin() + keep, order.end(), [&](TokenId a, TokenId b) {
    return logits[a] > logits[b] || (logits[a] == logits[b] && a < b);
  });
  std::vector<Candidate> out;
  out.reserve(keep);
  if (keep == 1) {
    out.push_back({order[0], 1.0, std::nullopt, -1});
    return out;
  }
  const double top = logits[order[0]];
  double sum = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    const double p = std::exp((logits[order[i]] - top) / temperature);
    out.push_back({order[i], p, std::nullopt, -1});
    sum += p;
  }
  for (auto& c : out) c.prob /= sum;
  return out;
}

std::size_t sample_index(std::span<const double> probs, double u) {
  double total = 0.0;
  for (double p : probs) total += p;
  const double target = u * total;
  double cum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (target < cum) return i;
  }
  return probs.size() - 1;
}

TokenId sample_top_k(std::span<const double> logits, int k, double temperature, Rng& rng) {
  const auto cands = top_k_candidates(logits, k, temperature);
  std::vector<double> probs;
  for (const auto& c : cands) probs.push_back(c.prob);
  return cands[sample_index(probs, rng.uniform())].token;
}

CandidatePicker rng_picker(Rng& rng) {
  return [&rng](const std::vector<std::size_t>& remaining, const std::vector<Candidate>& candidates) {
    std::vector<double> probs;
    probs.reserve(remaining.size());
    for (std::size_t i : remaining) probs.push_back(candidates[i].prob);
    return sample_index(probs, rng.uniform());
  };
}

RejectionOutcome run_rejection(std::vector<Candidate>& candidates, std::optional<double> tau, int max_rounds,
                               const CandidateScorer& scorer, const CandidatePicker& pick) {
  if (candidates.empty()) throw StateError("empty candidate set");
  auto score_of = [&](std::size_t i) {
    if (!candidates[i].saliency) candidates[i].saliency = scorer(candidates[i].token);
    return candidates[i].saliency;
  };
  std::vector<std::size_t> remaining(candidates.size());
  std::iota(remaining.begin(), remaining.end(), 0);
  int rejections = 0;
  for (int round = 1; round <= max_rounds && !remaining.empty(); ++round) {
    const std::size_t offset = pick(remaining, candidates);
    const std::size_t i = remaining[offset];
    candidates[i].round = round;
    const auto s = score_of(i);
    if (!s || !tau) return {i, AcceptedVia::no_history, rejections, s};
    if (*s >= *tau) return {i, AcceptedVia::threshold, rejections, s};
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(offset));
    ++rejections;
  }
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double s = score_of(i).value_or(-std::numeric_limits<double>::infinity());
    if (s > best_score || (s == best_score && candidates[i].token < candidates[best].token)) {
      best = i;
      best_score = s;
    }
  }
  return {best, AcceptedVia::fallback, rejections, candidates[best].saliency};
}

std::optional<double> score_candidate(const Model& model, std::span<const TokenId> context, TokenId candidate,
                                      const SaliencyScoreConfig& cfg, std::shared_ptr<const AttentionHook> hook) {
  ContextScorer scorer(model, context, cfg, std::move(hook));
  return scorer(candidate);
}

ContextScorer::ContextScorer(const Model& model, std::span<const TokenId> context, const SaliencyScoreConfig& cfg,
                             std::shared_ptr<const AttentionHook> hook)
    : model_(&model), context_(context), cfg_(&cfg), hook_(std::move(hook)) {
  if (context.empty()) throw LengthError("cannot score against an empty context");
}

std::optional<double> ContextScorer::operator()(TokenId candidate) {
  const int row = static_cast<int>(context_.size()) - 1;
  int begin = cfg_->layout.output_start();
  if (cfg_->scope == ScoreScope::predecessor) begin = std::max(begin, row - 1);
  if (row <= begin) return std::nullopt;
  if (!pass_.valid()) pass_ = model_->forward(context_, hook_);
  model_->backward_attention(pass_, row, candidate);
  return candidate_score(build_stack(pass_.tape()), *cfg_, row);
}

SgrsStep sgrs_step(const Model& model, std::span<const TokenId> context, std::span<const double> logits,
                   SaliencyHistory& history, const SgrsConfig& cfg, Rng& rng,
                   std::shared_ptr<const AttentionHook> score_hook) {
  const int P = static_cast<int>(context.size());
  SgrsStep out;
  out.trace.position = P;
  out.trace.candidates = top_k_candidates(logits, cfg.top_k, cfg.temperature);
  out.trace.tau = adaptive_threshold(history, cfg.alpha, cfg.window, P);
  ContextScorer scorer(model, context, cfg.score, std::move(score_hook));
  const auto outcome = run_rejection(
      out.trace.candidates, out.trace.tau, cfg.max_rounds, [&](TokenId c) { return scorer(c); }, rng_picker(rng));
  out.token = out.trace.candidates[outcome.index].token;
  out.trace.accepted = out.token;
  out.trace.via = outcome.via;
  out.trace.rejections = outcome.rejections;
  if (outcome.saliency && (outcome.via != AcceptedVia::fallback || cfg.history_on_fallback))
    history.append(P, *outcome.saliency);
  return out;
}

const char* to_string(DecodeMode mode) {
  switch (mode) {
    case DecodeMode::baseline:
      return "baseline";
    case DecodeMode::sgrs:
      return "sgrs";
    case DecodeMode::locore:
      return "locore";
    case DecodeMode::sgrs_locore:
      return "sgrs+locore";
  }
  return "?";
}

DecodeMode parse_mode(const std::string& name) {
  if (name == "baseline") return DecodeMode::baseline;
  if (name == "sgrs") return DecodeMode::sgrs;
  if (name == "locore") return DecodeMode::locore;
  if (name == "sgrs+locore" || name == "sgrs_locore") return DecodeMode::sgrs_locore;
  throw ConfigError("unknown decode mode '" + name + "' (baseline, sgrs, locore, sgrs+locore)");
}

DecodeResult decode(const Model& model, std::span<const TokenId> prefix, const DecodeOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const bool use_sgrs = options.mode == DecodeMode::sgrs || options.mode == DecodeMode::sgrs_locore;
  const bool use_locore = options.mode == DecodeMode::locore || options.mode == DecodeMode::sgrs_locore;
  if (use_sgrs) options.sgrs.validate(model.config().n_layers);
  if (prefix.empty()) throw LengthError("decode needs a non-empty prefix");

  std::shared_ptr<const AttentionHook> gen_hook = options.extra_hook;
  std::shared_ptr<const AttentionHook> score_hook = options.extra_hook;
  if (use_locore) {
    LocoreConfig lc = options.locore;
    lc.scope = GainScope::final_row;
    gen_hook = chain(std::make_shared<LocoreHook>(lc), options.extra_hook);
    if (options.sgrs.score_with_locore) {
      // Uncached equivalent of the gains each row received when it was decoded.
      lc.scope = GainScope::every_row;
      score_hook = chain(std::make_shared<LocoreHook>(lc), options.extra_hook);
    }
  }

  IncrementalDecoder dec(model, gen_hook);
  std::vector<double> logits;
  for (TokenId t : prefix) {
    const auto lg = dec.push(t);
    logits.assign(lg.begin(), lg.end());
  }

  DecodeResult result;
  Rng rng(options.seed);
  SaliencyHistory history;
  const int max_len = model.config().max_seq_len;
  for (int step = 0; step < options.max_new_tokens && dec.length() < max_len; ++step) {
    TokenId next;
    if (use_sgrs) {
      auto s = sgrs_step(model, dec.tokens(), logits, history, options.sgrs, rng, score_hook);
      next = s.token;
      result.trace.push_back(std::move(s.trace));
    } else {
      next = sample_top_k(logits, options.sgrs.top_k, options.sgrs.temperature, rng);
    }
    result.tokens.push_back(next);
    if (options.eos && next == *options.eos) break;
    if (dec.length() >= max_len) break;
    const auto lg = dec.push(next);
    logits.assign(lg.begin(), lg.end());
  }
  result.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::string trace_to_jsonl(const std::vector<DecodeStepTrace>& trace, std::uint64_t seed, DecodeMode mode) {
  std::string out;
  nlohmann::ordered_json header;
  header["seed"] = seed;
  header["mode"] = to_string(mode);
  header["steps"] = trace.size();
  out += header.dump() + "\n";
  for (const auto& step : trace) {
    nlohmann::ordered_json j;
    j["position"] = step.position;
    j["tau"] = step.tau ? nlohmann::ordered_json(*step.tau) : nlohmann::ordered_json(nullptr);
    j["accepted"] = step.accepted;
    j["via"] = to_string(step.via);
    j["rejections"] = step.rejections;
    auto& cands = j["candidates"] = nlohmann::ordered_json::array();
    for (const auto& c : step.candidates) {
      nlohmann::ordered_json cj;
      cj["token"] = c.token;
      cj["prob"] = c.prob;
      cj["saliency"] = c.saliency ? nlohmann::ordered_json(*c.saliency) : nlohmann::ordered_json(nullptr);
      cj["round"] = c.round;
      cands.push_back(cj);
    }
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace salient
