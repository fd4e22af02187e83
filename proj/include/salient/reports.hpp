#pragma once
// Text serializations of harness results. CSV reports start with a
// "# seed=<n>" comment line; JSON reports carry a "seed" field. Wall-clock
// figures only appear in latency_csv so every other report is reproducible
// byte for byte.

#include <cstdint>
#include <string>
#include <vector>

#include "salient/harness.hpp"

namespace salient::reports {

// sample,position,token,name,label,saliency_prev,saliency_prompt
std::string labels_csv(const std::vector<harness::TokenLabel>& labels, std::uint64_t seed);

std::string stats_json(const harness::StatsReport& report, std::uint64_t seed, int samples);

// bin,lo,hi,count,hallucinated,rate
std::string bins_csv(const harness::StatsReport& report, std::uint64_t seed);

// factor,events,content,hallucinated,rate
std::string intervention_csv(const harness::InterventionReport& report, std::uint64_t seed);

// mode,alpha,beta,samples,tokens,content,hallucinated,hallucination_rate,recall,fallbacks,rejections
std::string sweep_csv(const std::vector<harness::SweepCell>& cells, std::uint64_t seed);

// mode,alpha,beta,tokens,total_ms,ms_per_token
std::string latency_csv(const std::vector<harness::SweepCell>& cells, std::uint64_t seed);

// One line per sample: id, then the generated tokens by name.
std::string outputs_txt(const std::vector<harness::DecodedSample>& decoded, std::uint64_t seed);

}  // namespace salient::reports
