#pragma once
// Local coherence reinforcement: multiply the current query's attention to its
// most recent output positions by 1 + beta.

#include <memory>
#include <span>
#include <vector>

#include "salient/layout.hpp"
#include "salient/nanomodel.hpp"

namespace salient {

enum class GainScope {
  final_row,  // only the last query row of the sequence (the decode step)
  every_row,  // every row, as if each had been the final row when decoded
};

struct LocoreConfig {
  double beta = 0.15;
  int window = 5;
  bool renormalize = false;
  TokenLayout layout;
  GainScope scope = GainScope::final_row;

  void validate() const;
};

// Gains for j in [output_start, P): 1 + beta when P - j <= window, else 1.
// Empty when P <= output_start.
std::vector<double> gain_vector(int P, const TokenLayout& layout, double beta, int window);

// Multiplies row[j_begin + k] by gains[k]; with renormalize the whole row is
// then divided by its new sum. Throws ShapeError when the gains run past the row.
void apply_gain(std::span<double> row, int j_begin, std::span<const double> gains, bool renormalize);

class LocoreHook final : public AttentionHook {
 public:
  explicit LocoreHook(LocoreConfig cfg);

  bool touches(const RowSite& site) const override;
  void apply(const RowSite& site, std::span<double> row) const override;
  void backprop(const RowSite& site, std::span<const double> original, std::span<double> grad) const override;

  const LocoreConfig& config() const { return cfg_; }

 private:
  LocoreConfig cfg_;
};

// A model plus at most one installed LocoRE hook.
class HookedForward {
 public:
  explicit HookedForward(const Model& model) : model_(&model) {}

  // Throws StateError when a hook is already installed.
  void install_hook(const LocoreConfig& cfg);
  void remove_hook();
  bool installed() const { return hook_ != nullptr; }

  ForwardPass forward(std::span<const TokenId> tokens) const { return model_->forward(tokens, hook_); }
  IncrementalDecoder decoder() const { return IncrementalDecoder(*model_, hook_); }
  std::shared_ptr<const AttentionHook> hook() const { return hook_; }

 private:
  const Model* model_;
  std::shared_ptr<const AttentionHook> hook_;
};

}  // namespace salient
