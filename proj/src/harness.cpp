#include "salient/harness.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "salient/errors.hpp"
#include "salient/hooks.hpp"
#include "salient/parallel.hpp"
#include "salient/rng.hpp"

namespace salient::harness {

std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t id) { return mix_seed(seed, 0x6465636fULL + id); }

std::vector<DecodedSample> decode_corpus(const Model& model, const std::vector<SyntheticSample>& corpus,
                                         const TokenLayout& layout, const DecodeOptions& options,
                                         std::uint64_t seed, int jobs) {
  std::vector<DecodedSample> out(corpus.size());
  parallel_for(corpus.size(), jobs, [&](std::size_t i) {
    DecodeOptions o = options;
    o.seed = sample_seed(seed, corpus[i].id);
    const auto prefix = corpus[i].prefix(layout);
    auto r = decode(model, prefix, o);
    out[i] = {corpus[i].id, std::move(r.tokens), std::move(r.trace), r.elapsed_ms};
  });
  return out;
}

const char* to_string(Label label) {
  switch (label) {
    case Label::correct:
      return "correct";
    case Label::hallucinated:
      return "hallucinated";
    case Label::neutral:
      return "neutral";
  }
  return "?";
}

std::vector<TokenLabel> label_tokens(const Model& model, const SyntheticSample& sample, const TokenLayout& layout,
                                     const std::vector<TokenId>& output,
                                     const std::optional<SaliencyScoreConfig>& cfg) {
  std::vector<TokenId> seq = sample.prefix(layout);
  const int start = static_cast<int>(seq.size());
  seq.insert(seq.end(), output.begin(), output.end());
  seq.resize(std::min<std::size_t>(seq.size(), model.config().max_seq_len));

  std::vector<TokenLabel> labels;
  bool any_content = false;
  for (int t = start; t < static_cast<int>(seq.size()); ++t) {
    TokenLabel l;
    l.sample = sample.id;
    l.position = t;
    l.token = seq[t];
    if (task::is_content(seq[t])) {
      l.label = sample.grounded(seq[t]) ? Label::correct : Label::hallucinated;
      any_content = true;
    }
    labels.push_back(l);
  }
  if (!cfg || !any_content) return labels;

  SaliencyScoreConfig prev = *cfg;
  prev.scope = ScoreScope::predecessor;
  // Rows are causal, so one forward over the whole sequence serves every
  // position; rows after the scored one carry zero gradient.
  ForwardPass pass = model.forward(seq);
  for (auto& l : labels) {
    if (l.label == Label::neutral) continue;
    const int row = l.position - 1;
    model.backward_attention(pass, row, l.token);
    const SaliencyStack stack = build_stack(pass.tape());
    l.saliency_prev = candidate_score(stack, prev, row);
    if (layout.prompt_len > 0) {
      double total = 0.0;
      const int p0 = layout.sys_len + layout.img_len;
      for (int layer : cfg->target_layers)
        for (int j = p0; j < p0 + layout.prompt_len && j <= row; ++j) total += stack.layers[layer](row, j);
      l.saliency_prompt = total / (static_cast<double>(cfg->target_layers.size()) * layout.prompt_len);
    }
  }
  return labels;
}

std::vector<TokenLabel> label_corpus(const Model& model, const std::vector<SyntheticSample>& corpus,
                                     const TokenLayout& layout, const std::vector<DecodedSample>& decoded,
                                     const std::optional<SaliencyScoreConfig>& cfg, int jobs) {
  if (decoded.size() != corpus.size()) throw ShapeError("decoded outputs do not match corpus size");
  std::vector<std::vector<TokenLabel>> parts(corpus.size());
  parallel_for(corpus.size(), jobs, [&](std::size_t i) {
    parts[i] = label_tokens(model, corpus[i], layout, decoded[i].output, cfg);
  });
  std::vector<TokenLabel> out;
  for (auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

namespace {

void split(const std::vector<TokenLabel>& labels, std::vector<double>& correct, std::vector<double>& hallucinated,
           std::vector<double>* prompt_c = nullptr, std::vector<double>* prompt_h = nullptr) {
  for (const auto& l : labels) {
    if (l.label == Label::neutral || !l.saliency_prev) continue;
    (l.label == Label::correct ? correct : hallucinated).push_back(*l.saliency_prev);
    if (prompt_c && l.saliency_prompt) (l.label == Label::correct ? *prompt_c : *prompt_h).push_back(*l.saliency_prompt);
  }
}

}  // namespace

StatsReport stats_saliency(const std::vector<TokenLabel>& labels, int min_count) {
  std::vector<double> c, h, pc, ph;
  split(labels, c, h, &pc, &ph);
  if (static_cast<int>(c.size()) < min_count)
    throw InsufficientDataError("class 'correct' has " + std::to_string(c.size()) + " scored tokens, need " +
                                std::to_string(min_count));
  if (static_cast<int>(h.size()) < min_count)
    throw InsufficientDataError("class 'hallucinated' has " + std::to_string(h.size()) + " scored tokens, need " +
                                std::to_string(min_count));
  StatsReport r;
  r.correct = stats::summarize(c);
  r.hallucinated = stats::summarize(h);
  r.prompt_correct = stats::summarize(pc);
  r.prompt_hallucinated = stats::summarize(ph);
  r.welch = stats::welch_test(c, h);
  r.high_saliency_threshold = stats::percentile(c, 0.75);
  int high = 0;
  for (double v : h)
    if (v > r.high_saliency_threshold) ++high;
  r.high_saliency_hallucination_pct = 100.0 * high / static_cast<double>(h.size());
  return r;
}

void bin_analysis(const std::vector<TokenLabel>& labels, StatsReport& report, int n_bins) {
  if (n_bins < 1) throw ConfigError("bin count must be >= 1");
  std::vector<std::pair<double, bool>> pts;
  for (const auto& l : labels)
    if (l.label != Label::neutral && l.saliency_prev) pts.push_back({*l.saliency_prev, l.label == Label::hallucinated});
  if (pts.empty()) throw InsufficientDataError("no scored content tokens to bin");
  double lo = pts[0].first, hi = pts[0].first;
  for (const auto& p : pts) {
    lo = std::min(lo, p.first);
    hi = std::max(hi, p.first);
  }
  const double width = (hi - lo) / n_bins;
  report.bins.assign(n_bins, Bin{});
  for (int b = 0; b < n_bins; ++b) {
    report.bins[b].lo = lo + width * b;
    report.bins[b].hi = b + 1 == n_bins ? hi : lo + width * (b + 1);
  }
  for (const auto& p : pts) {
    int b = width > 0.0 ? static_cast<int>((p.first - lo) / width) : 0;
    b = std::clamp(b, 0, n_bins - 1);
    ++report.bins[b].count;
    if (p.second) ++report.bins[b].hallucinated;
  }
  std::vector<double> idx, rate;
  for (int b = 0; b < n_bins; ++b) {
    auto& bin = report.bins[b];
    bin.empty = bin.count == 0;
    bin.rate = bin.empty ? 0.0 : static_cast<double>(bin.hallucinated) / bin.count;
    if (!bin.empty) {
      idx.push_back(b);
      rate.push_back(bin.rate);
    }
  }
  report.spearman = stats::spearman(idx, rate);
}

Metrics evaluate(const std::vector<SyntheticSample>& corpus, const std::vector<DecodedSample>& decoded) {
  if (decoded.size() != corpus.size()) throw ShapeError("decoded outputs do not match corpus size");
  Metrics m;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& s = corpus[i];
    std::vector<TokenId> hit;
    for (TokenId t : decoded[i].output) {
      if (!task::is_content(t)) continue;
      ++m.content;
      if (s.grounded(t)) {
        hit.push_back(t);
      } else {
        ++m.hallucinated;
      }
    }
    std::sort(hit.begin(), hit.end());
    hit.erase(std::unique(hit.begin(), hit.end()), hit.end());
    m.gold_total += static_cast<int>(s.gold.size());
    m.gold_hit += static_cast<int>(hit.size());
    m.tokens += static_cast<int>(decoded[i].output.size());
    m.elapsed_ms += decoded[i].elapsed_ms;
    ++m.samples;
  }
  return m;
}

double greedy_token_accuracy(const Model& model, const std::vector<SyntheticSample>& corpus,
                             const TokenLayout& layout, int jobs) {
  DecodeOptions o;
  o.sgrs.temperature = 0.0;
  o.eos = task::kEos;
  std::vector<std::pair<int, int>> counts(corpus.size());
  parallel_for(corpus.size(), jobs, [&](std::size_t i) {
    const auto ref = corpus[i].reference_output();
    o.max_new_tokens = static_cast<int>(ref.size());
    DecodeOptions local = o;
    const auto r = decode(model, corpus[i].prefix(layout), local);
    int ok = 0;
    for (std::size_t k = 0; k < ref.size(); ++k)
      if (k < r.tokens.size() && r.tokens[k] == ref[k]) ++ok;
    counts[i] = {ok, static_cast<int>(ref.size())};
  });
  long ok = 0, total = 0;
  for (const auto& [a, b] : counts) {
    ok += a;
    total += b;
  }
  return total > 0 ? static_cast<double>(ok) / total : 0.0;
}

InterventionReport intervention(const Model& model, const std::vector<SyntheticSample>& corpus,
                                const TokenLayout& layout, const std::vector<DecodedSample>& decoded,
                                const std::vector<TokenLabel>& labels, const DecodeOptions& options,
                                std::uint64_t seed, const InterventionOptions& iopts, int jobs) {
  std::vector<double> correct;
  for (const auto& l : labels)
    if (l.label == Label::correct && l.saliency_prev) correct.push_back(*l.saliency_prev);
  if (correct.empty()) throw InsufficientDataError("no scored correct tokens for the intervention");
  InterventionReport report;
  report.threshold = stats::percentile(correct, iopts.quantile);

  std::map<std::uint64_t, std::size_t> index;
  for (std::size_t i = 0; i < corpus.size(); ++i) index[corpus[i].id] = i;

  struct Event {
    std::size_t sample;
    int position;
  };
  std::vector<Event> events;
  {
    std::map<std::uint64_t, std::vector<std::pair<double, int>>> per_sample;
    for (const auto& l : labels)
      if (l.label == Label::correct && l.saliency_prev && *l.saliency_prev > report.threshold)
        per_sample[l.sample].push_back({*l.saliency_prev, l.position});
    for (auto& [id, v] : per_sample) {
      std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
        return a.first > b.first || (a.first == b.first && a.second < b.second);
      });
      const int keep = iopts.max_per_sample > 0 ? std::min<int>(iopts.max_per_sample, v.size()) : v.size();
      for (int k = 0; k < keep; ++k) events.push_back({index.at(id), v[k].second});
    }
  }
  report.eligible = static_cast<int>(events.size());
  if (events.empty()) throw InsufficientDataError("no correct tokens above the intervention threshold");

  const std::size_t F = iopts.factors.size();
  struct Cell {
    int content = 0;
    int hallucinated = 0;
    bool same = true;
  };
  std::vector<Cell> cells(events.size() * F);
  parallel_for(events.size(), jobs, [&](std::size_t e) {
    const auto& ev = events[e];
    const auto& s = corpus[ev.sample];
    const auto prefix = s.prefix(layout);
    const int start = static_cast<int>(prefix.size());
    for (std::size_t f = 0; f < F; ++f) {
      DecodeOptions o = options;
      o.seed = sample_seed(seed, s.id);
      o.extra_hook = chain(options.extra_hook, std::make_shared<DecayHook>(ev.position, iopts.factors[f]));
      const auto r = decode(model, prefix, o);
      Cell& c = cells[e * F + f];
      for (std::size_t k = 0; k < r.tokens.size(); ++k) {
        const int pos = start + static_cast<int>(k);
        if (pos <= ev.position + 1 || !task::is_content(r.tokens[k])) continue;
        ++c.content;
        if (!s.grounded(r.tokens[k])) ++c.hallucinated;
      }
      if (iopts.factors[f] == 1.0) c.same = r.tokens == decoded[ev.sample].output;
    }
  });
  for (std::size_t f = 0; f < F; ++f) {
    InterventionRow row;
    row.factor = iopts.factors[f];
    row.events = static_cast<int>(events.size());
    for (std::size_t e = 0; e < events.size(); ++e) {
      row.content += cells[e * F + f].content;
      row.hallucinated += cells[e * F + f].hallucinated;
      if (!cells[e * F + f].same) report.identity_exact = false;
    }
    report.rows.push_back(row);
  }
  return report;
}

std::vector<SweepCell> sweep(const Model& model, const std::vector<SyntheticSample>& corpus,
                             const TokenLayout& layout, const DecodeOptions& base,
                             const std::vector<double>& alphas, const std::vector<double>& betas,
                             const std::vector<DecodeMode>& modes, std::uint64_t seed, int jobs) {
  if (alphas.empty() || betas.empty() || modes.empty()) throw ConfigError("sweep grids must be non-empty");
  std::vector<SweepCell> cells;
  std::map<std::tuple<int, double, double>, std::size_t> done;
  for (DecodeMode mode : modes) {
    const bool has_sgrs = mode == DecodeMode::sgrs || mode == DecodeMode::sgrs_locore;
    const bool has_locore = mode == DecodeMode::locore || mode == DecodeMode::sgrs_locore;
    for (double a : alphas) {
      for (double b : betas) {
        SweepCell cell{mode, a, b, {}, 0, 0};
        const auto key = std::make_tuple(static_cast<int>(mode), has_sgrs ? a : -1.0, has_locore ? b : -1.0);
        if (auto it = done.find(key); it != done.end()) {
          cell.metrics = cells[it->second].metrics;
          cell.fallbacks = cells[it->second].fallbacks;
          cell.rejections = cells[it->second].rejections;
          cells.push_back(cell);
          continue;
        }
        DecodeOptions o = base;
        o.mode = mode;
        o.sgrs.alpha = a;
        o.locore.beta = b;
        const auto decoded = decode_corpus(model, corpus, layout, o, seed, jobs);
        cell.metrics = evaluate(corpus, decoded);
        for (const auto& d : decoded)
          for (const auto& st : d.trace) {
            cell.rejections += st.rejections;
            if (st.via == AcceptedVia::fallback) ++cell.fallbacks;
          }
        done[key] = cells.size();
        cells.push_back(cell);
      }
    }
  }
  return cells;
}

}  // namespace salient::harness
