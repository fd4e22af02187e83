#pragma once
// Self-checks shared by `salient verify` and the acceptance suite. Each check
// is deterministic given its seed and reports a one-line detail string.

#include <cstdint>
#include <string>
#include <vector>

#include "salient/harness.hpp"
#include "salient/nanomodel.hpp"
#include "salient/sgrs.hpp"
#include "salient/task.hpp"

namespace salient::checks {

struct Result {
  std::string name;
  bool pass = false;
  std::string detail;
};

// dL/dA from the reverse pass against central differences on a fresh
// 2-layer, 2-head, d_model=32 model at n=12.
Result gradient_fidelity(std::uint64_t seed, double eps = 1e-4, double tolerance = 1e-4);

// Stack structure on a fresh model plus sign invariance of per_head_saliency
// on `trials` random matrices.
Result saliency_invariants(std::uint64_t seed, int trials = 1000);

// Two heads whose A*G cancel: appendix mode 0, main-text head sum > 0.
Result aggregation_divergence();

// alpha = 0 SGRS against plain top-K sampling, token for token.
Result sgrs_degeneracy(const Model& model, const std::vector<task::SyntheticSample>& corpus,
                       const TokenLayout& layout, DecodeOptions base, int jobs);

// beta = 0 is bit-identical to no hook; beta > 0 changes only the final row's
// window entries of the first layer, by exactly 1 + beta.
Result locore_locality(const Model& model, const std::vector<task::SyntheticSample>& corpus,
                       const TokenLayout& layout, double beta, int window);

// Raising alpha never lowers the rejection count under scripted scores.
Result rejection_monotone(std::uint64_t seed, int trials = 500);

// Every threshold acceptance in the traces satisfies score >= tau.
Result acceptance_soundness(const std::vector<harness::DecodedSample>& decoded);

}  // namespace salient::checks
