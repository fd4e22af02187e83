#pragma once
// Precision-specific transformer engine behind salient::Model.

#include <memory>
#include <span>
#include <vector>

#include "salient/nanomodel.hpp"

namespace salient::detail {

struct ActivationCache {
  virtual ~ActivationCache() = default;
  int length = 0;
  int capacity = 0;
};

class Engine {
 public:
  virtual ~Engine() = default;

  virtual std::unique_ptr<ActivationCache> new_cache(int capacity) const = 0;

  // Appends `token` at position cache.length. hook_seq_len is reported to the
  // hook as RowSite::seq_len for every row computed by this call.
  virtual void advance(ActivationCache& cache, TokenId token, int hook_seq_len, const AttentionHook* hook,
                       std::span<double> logits_out) const = 0;

  virtual void export_tape(const ActivationCache& cache, AttentionTape& tape) const = 0;

  // Returns the weighted loss. param_grads (size parameter_count) and
  // attn_grads (tape whose gradient vector is filled) are optional outputs.
  virtual double backward(const ActivationCache& cache, std::span<const LossTerm> terms, const AttentionHook* hook,
                          std::vector<double>* param_grads, AttentionTape* attn_grads) const = 0;
};

std::unique_ptr<Engine> make_engine(const Checkpoint& ckpt);

}  // namespace salient::detail
