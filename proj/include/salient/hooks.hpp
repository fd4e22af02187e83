#pragma once
// General-purpose attention hooks.

#include <memory>
#include <vector>

#include "salient/nanomodel.hpp"

namespace salient {

// Applies hooks in order; null entries are skipped.
class HookChain final : public AttentionHook {
 public:
  explicit HookChain(std::vector<std::shared_ptr<const AttentionHook>> hooks);

  bool touches(const RowSite& site) const override;
  void apply(const RowSite& site, std::span<double> row) const override;
  void backprop(const RowSite& site, std::span<const double> original, std::span<double> grad) const override;

 private:
  std::vector<std::shared_ptr<const AttentionHook>> hooks_;
};

// Returns the chain of the non-null hooks, the single hook itself, or null.
std::shared_ptr<const AttentionHook> chain(std::shared_ptr<const AttentionHook> a,
                                           std::shared_ptr<const AttentionHook> b);

// Multiplies attention from every query row after `position` to column
// `position` by `factor`, in every layer and head. No renormalization.
class DecayHook final : public AttentionHook {
 public:
  DecayHook(int position, double factor) : position_(position), factor_(factor) {}

  bool touches(const RowSite& site) const override;
  void apply(const RowSite& site, std::span<double> row) const override;
  void backprop(const RowSite& site, std::span<const double> original, std::span<double> grad) const override;

  int position() const { return position_; }
  double factor() const { return factor_; }

 private:
  int position_;
  double factor_;
};

}  // namespace salient
