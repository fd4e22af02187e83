#include "salient/hooks.hpp"

namespace salient {

HookChain::HookChain(std::vector<std::shared_ptr<const AttentionHook>> hooks) {
  for (auto& h : hooks)
    if (h) hooks_.push_back(std::move(h));
}

bool HookChain::touches(const RowSite& site) const {
  for (const auto& h : hooks_)
    if (h->touches(site)) return true;
  return false;
}

void HookChain::apply(const RowSite& site, std::span<double> row) const {
  for (const auto& h : hooks_)
    if (h->touches(site)) h->apply(site, row);
}

void HookChain::backprop(const RowSite& site, std::span<const double> original, std::span<double> grad) const {
  // Rebuild the input of every stage, then walk the stages backwards.
  std::vector<std::vector<double>> inputs;
  std::vector<double> cur(original.begin(), original.end());
  std::vector<const AttentionHook*> active;
  for (const auto& h : hooks_) {
    if (!h->touches(site)) continue;
    inputs.push_back(cur);
    active.push_back(h.get());
    h->apply(site, cur);
  }
  for (std::size_t k = active.size(); k-- > 0;) active[k]->backprop(site, inputs[k], grad);
}

std::shared_ptr<const AttentionHook> chain(std::shared_ptr<const AttentionHook> a,
                                           std::shared_ptr<const AttentionHook> b) {
  if (!a) return b;
  if (!b) return a;
  return std::make_shared<HookChain>(std::vector<std::shared_ptr<const AttentionHook>>{std::move(a), std::move(b)});
}

bool DecayHook::touches(const RowSite& site) const { return position_ >= 0 && site.query > position_; }

void DecayHook::apply(const RowSite&, std::span<double> row) const { row[position_] *= factor_; }

void DecayHook::backprop(const RowSite&, std::span<const double>, std::span<double> grad) const {
  grad[position_] *= factor_;
}

}  // namespace salient
