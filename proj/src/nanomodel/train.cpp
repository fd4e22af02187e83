#include <cmath>
#include <numeric>
#include <thread>

#include "salient/nanomodel.hpp"
#include "salient/parallel.hpp"
#include "salient/rng.hpp"

namespace salient {

namespace {

std::vector<LossTerm> terms_for(const TrainingExample& ex) {
  std::vector<LossTerm> terms;
  const int n = static_cast<int>(ex.tokens.size());
  const int count = n - std::max(ex.first_target, 1);
  if (count <= 0) return terms;
  const double w = 1.0 / count;
  for (int t = std::max(ex.first_target, 1); t < n; ++t) terms.push_back({t - 1, ex.tokens[t], w});
  return terms;
}

}  // namespace

double mean_loss(const Model& model, std::span<const TrainingExample> data) {
  double total = 0.0;
  int used = 0;
  for (const auto& ex : data) {
    const auto terms = terms_for(ex);
    if (terms.empty()) continue;
    const auto pass = model.forward(ex.tokens);
    for (const auto& t : terms) total += t.weight * loss_ce(pass.logits_at(t.position), t.target);
    ++used;
  }
  return used > 0 ? total / used : 0.0;
}

Checkpoint train_toy(const Checkpoint& init, std::span<const TrainingExample> data, const TrainOptions& options,
                     TrainReport* report) {
  if (data.empty()) throw TrainingError("training corpus is empty", 0);
  Checkpoint ckpt = init;
  if (report != nullptr) {
    report->epoch_loss.clear();
    report->initial_loss = mean_loss(Model(init), data);
  }
  if (options.epochs <= 0) return ckpt;

  const std::size_t n_params = ckpt.params.size();
  std::vector<double> m(n_params, 0.0), v(n_params, 0.0), grad(n_params, 0.0);
  const double beta1 = 0.9, beta2 = 0.98, eps = 1e-9;
  const int batch = std::max(1, options.batch_size);
  const int steps_per_epoch = static_cast<int>((data.size() + batch - 1) / batch);
  const int total_steps = steps_per_epoch * options.epochs;
  Rng rng(mix_seed(init.config.rng_seed, 0x7261696eULL));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  int step = 0;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);
    double epoch_loss = 0.0;
    int epoch_count = 0;
    for (int s = 0; s < steps_per_epoch; ++s, ++step) {
      const std::size_t begin = static_cast<std::size_t>(s) * batch;
      const std::size_t end = std::min(order.size(), begin + batch);
      const Model model(ckpt);
      std::vector<GradientResult> results(end - begin);
      parallel_for(end - begin, options.jobs, [&](std::size_t b) {
        const auto& ex = data[order[begin + b]];
        const auto terms = terms_for(ex);
        if (terms.empty()) return;
        results[b] = model.parameter_gradients(model.forward(ex.tokens), terms);
      });
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0.0;
      int used = 0;
      for (const auto& r : results) {
        if (r.params.empty()) continue;
        for (std::size_t p = 0; p < n_params; ++p) grad[p] += r.params[p];
        batch_loss += r.loss;
        ++used;
      }
      if (used == 0) continue;
      if (!std::isfinite(batch_loss)) throw TrainingError("training diverged (loss is not finite)", epoch);
      double norm2 = 0.0;
      for (double& g : grad) {
        g /= used;
        norm2 += g * g;
      }
      const double norm = std::sqrt(norm2);
      if (!std::isfinite(norm)) throw TrainingError("training diverged (gradient is not finite)", epoch);
      const double clip = (options.grad_clip > 0.0 && norm > options.grad_clip) ? options.grad_clip / norm : 1.0;

      double lr = options.learning_rate;
      if (step < options.warmup_steps) {
        lr *= static_cast<double>(step + 1) / options.warmup_steps;
      } else if (total_steps > options.warmup_steps) {
        const double progress =
            static_cast<double>(step - options.warmup_steps) / (total_steps - options.warmup_steps);
        lr *= 0.1 + 0.9 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
      }
      const double bc1 = 1.0 - std::pow(beta1, step + 1);
      const double bc2 = 1.0 - std::pow(beta2, step + 1);
      for (std::size_t p = 0; p < n_params; ++p) {
        const double g = grad[p] * clip;
        m[p] = beta1 * m[p] + (1.0 - beta1) * g;
        v[p] = beta2 * v[p] + (1.0 - beta2) * g * g;
        ckpt.params[p] -= lr * ((m[p] / bc1) / (std::sqrt(v[p] / bc2) + eps) + options.weight_decay * ckpt.params[p]);
      }
      epoch_loss += batch_loss / used;
      ++epoch_count;
      if (options.verbose && step % 50 == 0)
        std::fprintf(stderr, "epoch %d step %d loss %.4f |g| %.3f lr %.2e\n", epoch, step, batch_loss / used, norm,
                     lr);
    }
    if (report != nullptr) report->epoch_loss.push_back(epoch_count > 0 ? epoch_loss / epoch_count : 0.0);
  }
  return ckpt;
}

}  // namespace salient
