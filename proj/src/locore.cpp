#include "salient/locore.hpp"

#include "salient/errors.hpp"

namespace salient {

void LocoreConfig::validate() const {
  if (!(beta >= 0.0)) throw ConfigError("locore.beta must be >= 0");
  if (window < 1) throw ConfigError("locore.window must be >= 1");
}

std::vector<double> gain_vector(int P, const TokenLayout& layout, double beta, int window) {
  const auto J = layout.output_positions(P);
  std::vector<double> gains(J.size(), 1.0);
  for (int j = J.begin; j < J.end; ++j)
    if (P - j <= window) gains[j - J.begin] = 1.0 + beta;
  return gains;
}

void apply_gain(std::span<double> row, int j_begin, std::span<const double> gains, bool renormalize) {
  if (j_begin < 0 || j_begin + gains.size() > row.size())
    throw ShapeError("gain vector of length " + std::to_string(gains.size()) + " at offset " +
                     std::to_string(j_begin) + " does not fit row of length " + std::to_string(row.size()));
  for (std::size_t k = 0; k < gains.size(); ++k) row[j_begin + k] *= gains[k];
  if (!renormalize) return;
  double sum = 0.0;
  for (double v : row) sum += v;
  if (sum > 0.0)
    for (double& v : row) v /= sum;
}

LocoreHook::LocoreHook(LocoreConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

bool LocoreHook::touches(const RowSite& site) const {
  // beta = 0 is an exact identity, so skip the row entirely to keep bits.
  if (cfg_.beta == 0.0) return false;
  if (cfg_.scope == GainScope::final_row && site.query != site.seq_len - 1) return false;
  return site.query > cfg_.layout.output_start();
}

void LocoreHook::apply(const RowSite& site, std::span<double> row) const {
  const auto gains = gain_vector(site.query, cfg_.layout, cfg_.beta, cfg_.window);
  apply_gain(row, cfg_.layout.output_start(), gains, cfg_.renormalize);
}

void LocoreHook::backprop(const RowSite& site, std::span<const double> original, std::span<double> grad) const {
  const auto gains = gain_vector(site.query, cfg_.layout, cfg_.beta, cfg_.window);
  const int begin = cfg_.layout.output_start();
  std::vector<double> g(original.size(), 1.0);
  for (std::size_t k = 0; k < gains.size(); ++k) g[begin + k] = gains[k];
  if (!cfg_.renormalize) {
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] *= g[k];
    return;
  }
  // y = g*x / s with s = sum(g*x): dx_k = g_k (dy_k - <dy, y>) / s.
  double s = 0.0;
  for (std::size_t k = 0; k < original.size(); ++k) s += g[k] * original[k];
  if (s <= 0.0) return;
  double dot = 0.0;
  for (std::size_t k = 0; k < original.size(); ++k) dot += grad[k] * g[k] * original[k] / s;
  for (std::size_t k = 0; k < grad.size(); ++k) grad[k] = g[k] * (grad[k] - dot) / s;
}

void HookedForward::install_hook(const LocoreConfig& cfg) {
  if (hook_) throw StateError("a LocoRE hook is already installed");
  hook_ = std::make_shared<LocoreHook>(cfg);
}

void HookedForward::remove_hook() { hook_.reset(); }

}  // namespace salient
