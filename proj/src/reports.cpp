#include "salient/reports.hpp"

#include <cmath>
#include <cstdio>

#include "json.hpp"

namespace salient::reports {

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string opt(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

std::string header(std::uint64_t seed) { return "# seed=" + std::to_string(seed) + "\n"; }

nlohmann::ordered_json summary_json(const stats::Summary& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"count", s.count}};
}

// JSON has no infinities; non-finite values become strings.
nlohmann::ordered_json finite(double v) {
  if (std::isfinite(v)) return v;
  return num(v);
}

}  // namespace

std::string labels_csv(const std::vector<harness::TokenLabel>& labels, std::uint64_t seed) {
  std::string out = header(seed) + "sample,position,token,name,label,saliency_prev,saliency_prompt\n";
  for (const auto& l : labels) {
    out += std::to_string(l.sample) + "," + std::to_string(l.position) + "," + std::to_string(l.token) + "," +
           task::token_name(l.token) + "," + harness::to_string(l.label) + "," + opt(l.saliency_prev) + "," +
           opt(l.saliency_prompt) + "\n";
  }
  return out;
}

std::string stats_json(const harness::StatsReport& r, std::uint64_t seed, int samples) {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["samples"] = samples;
  j["correct"] = summary_json(r.correct);
  j["hallucinated"] = summary_json(r.hallucinated);
  j["prompt_correct"] = summary_json(r.prompt_correct);
  j["prompt_hallucinated"] = summary_json(r.prompt_hallucinated);
  j["welch"] = {{"t", finite(r.welch.t)},
                {"df", finite(r.welch.df)},
                {"p_greater", r.welch.p_greater},
                {"p_two_sided", r.welch.p_two_sided}};
  j["spearman_bins"] = r.spearman;
  j["high_saliency_threshold"] = r.high_saliency_threshold;
  j["high_saliency_hallucination_pct"] = r.high_saliency_hallucination_pct;
  return j.dump(2) + "\n";
}

std::string bins_csv(const harness::StatsReport& r, std::uint64_t seed) {
  std::string out = header(seed) + "bin,lo,hi,count,hallucinated,rate\n";
  for (std::size_t b = 0; b < r.bins.size(); ++b) {
    const auto& bin = r.bins[b];
    out += std::to_string(b) + "," + num(bin.lo) + "," + num(bin.hi) + "," + std::to_string(bin.count) + "," +
           std::to_string(bin.hallucinated) + "," + (bin.empty ? std::string() : num(bin.rate)) + "\n";
  }
  out += "# spearman=" + num(r.spearman) + "\n";
  return out;
}

std::string intervention_csv(const harness::InterventionReport& r, std::uint64_t seed) {
  std::string out = header(seed) + "# threshold=" + num(r.threshold) + " eligible=" + std::to_string(r.eligible) +
                    " identity_exact=" + (r.identity_exact ? "true" : "false") + "\n" +
                    "factor,events,content,hallucinated,rate\n";
  for (const auto& row : r.rows)
    out += num(row.factor) + "," + std::to_string(row.events) + "," + std::to_string(row.content) + "," +
           std::to_string(row.hallucinated) + "," + num(row.rate()) + "\n";
  return out;
}

std::string sweep_csv(const std::vector<harness::SweepCell>& cells, std::uint64_t seed) {
  std::string out = header(seed) +
                    "mode,alpha,beta,samples,tokens,content,hallucinated,hallucination_rate,recall,fallbacks,"
                    "rejections\n";
  for (const auto& c : cells) {
    const auto& m = c.metrics;
    out += std::string(to_string(c.mode)) + "," + num(c.alpha) + "," + num(c.beta) + "," +
           std::to_string(m.samples) + "," + std::to_string(m.tokens) + "," + std::to_string(m.content) + "," +
           std::to_string(m.hallucinated) + "," + num(m.hallucination_rate()) + "," + num(m.recall()) + "," +
           std::to_string(c.fallbacks) + "," + std::to_string(c.rejections) + "\n";
  }
  return out;
}

std::string latency_csv(const std::vector<harness::SweepCell>& cells, std::uint64_t seed) {
  std::string out = header(seed) + "mode,alpha,beta,tokens,total_ms,ms_per_token\n";
  for (const auto& c : cells)
    out += std::string(to_string(c.mode)) + "," + num(c.alpha) + "," + num(c.beta) + "," +
           std::to_string(c.metrics.tokens) + "," + num(c.metrics.elapsed_ms) + "," + num(c.metrics.ms_per_token()) +
           "\n";
  return out;
}

std::string outputs_txt(const std::vector<harness::DecodedSample>& decoded, std::uint64_t seed) {
  std::string out = header(seed);
  for (const auto& d : decoded) {
    out += std::to_string(d.id) + "\t";
    for (std::size_t k = 0; k < d.output.size(); ++k) {
      if (k > 0) out += ' ';
      out += task::token_name(d.output[k]);
    }
    out += "\n";
  }
  return out;
}

}  // namespace salient::reports
