#pragma once
// Test-only oracles kept independent of the reverse pass they check.

#include <memory>
#include <vector>

#include "salient/nanomodel.hpp"

namespace salient::testing {

// Adds `delta` to one post-softmax attention entry; used to perturb A and
// re-run everything downstream of it.
class AdditiveProbe final : public AttentionHook {
 public:
  AdditiveProbe(int layer, int head, int row, int col, double delta)
      : layer_(layer), head_(head), row_(row), col_(col), delta_(delta) {}
  bool touches(const RowSite& s) const override { return s.layer == layer_ && s.head == head_ && s.query == row_; }
  void apply(const RowSite&, std::span<double> row) const override { row[col_] += delta_; }
  void backprop(const RowSite&, std::span<const double>, std::span<double>) const override {}

 private:
  int layer_, head_, row_, col_;
  double delta_;
};

// Runs `first` and then `second` on every row either touches.
class Sequence final : public AttentionHook {
 public:
  Sequence(std::shared_ptr<const AttentionHook> first, std::shared_ptr<const AttentionHook> second)
      : first_(std::move(first)), second_(std::move(second)) {}
  bool touches(const RowSite& s) const override { return first_->touches(s) || second_->touches(s); }
  void apply(const RowSite& s, std::span<double> row) const override {
    if (first_->touches(s)) first_->apply(s, row);
    if (second_->touches(s)) second_->apply(s, row);
  }
  void backprop(const RowSite&, std::span<const double>, std::span<double>) const override {}

 private:
  std::shared_ptr<const AttentionHook> first_, second_;
};

// Central finite difference of loss_ce(logits[position], target) w.r.t. A^(l,h)[row, col],
// the entry as seen downstream of `base` when one is given.
inline double finite_difference(const Model& model, const std::vector<TokenId>& tokens, int layer, int head, int row,
                                int col, int position, TokenId target, double eps,
                                std::shared_ptr<const AttentionHook> base = nullptr) {
  auto probe = [&](double d) -> std::shared_ptr<const AttentionHook> {
    auto p = std::make_shared<AdditiveProbe>(layer, head, row, col, d);
    if (!base) return p;
    return std::make_shared<Sequence>(base, p);
  };
  const auto plus = model.forward(tokens, probe(eps));
  const auto minus = model.forward(tokens, probe(-eps));
  return (loss_ce(plus.logits_at(position), target) - loss_ce(minus.logits_at(position), target)) / (2.0 * eps);
}

}  // namespace salient::testing
