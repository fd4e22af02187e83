#pragma once
// A small decoder-only transformer that records every post-softmax attention
// matrix during the forward pass and can return d(loss)/d(attention) through a
// hand-written reverse pass.
//
// Architecture: learned token + position embeddings, pre-norm residual blocks
// (LayerNorm -> causal multi-head attention -> residual, LayerNorm -> GELU MLP
// with 4x expansion -> residual), final LayerNorm, bias-free output head.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "salient/errors.hpp"
#include "salient/layout.hpp"
#include "salient/matrix.hpp"

namespace salient {

enum class Precision { f32, f64 };

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 64;
  int vocab_size = 96;
  int max_seq_len = 64;
  std::uint64_t rng_seed = 1;
  Precision precision = Precision::f64;

  int head_dim() const { return d_model / n_heads; }
  int ffn_dim() const { return 4 * d_model; }

  // Throws ShapeError on inconsistent fields.
  void validate() const;
  // Throws ShapeError when the layout cannot fit (needs sys+img+2 positions).
  void check_layout(const TokenLayout& layout) const;

  bool operator==(const ModelConfig&) const = default;
};

// One named tensor inside the flat parameter vector.
struct TensorSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

// Parameter order (all row-major, linear maps stored as [out x in]):
//   tok_emb [V x d], pos_emb [max_seq x d],
//   per layer l: l.ln1.g [1 x d], l.ln1.b [1 x d], l.wq, l.wk, l.wv, l.wo [d x d],
//                l.ln2.g, l.ln2.b [1 x d], l.ff1.w [4d x d], l.ff1.b [1 x 4d],
//                l.ff2.w [d x 4d], l.ff2.b [1 x d],
//   lnf.g, lnf.b [1 x d], head [V x d].
std::vector<TensorSpec> parameter_layout(const ModelConfig& cfg);
std::size_t parameter_count(const ModelConfig& cfg);

struct Checkpoint {
  ModelConfig config;
  std::vector<double> params;

  // Deterministic initialization from config.rng_seed.
  static Checkpoint initialize(const ModelConfig& cfg);

  std::span<double> tensor(const std::string& name);
  std::span<const double> tensor(const std::string& name) const;

  bool operator==(const Checkpoint&) const = default;
};

// Binary format: "NMDL" magic, version byte '1', little-endian fixed-width
// config header, then one record per tensor (name, rows, cols, f64 data).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string config_to_json(const ModelConfig& cfg);

// Post-softmax attention for every (layer, head), plus d(loss)/dA once a
// backward pass has run. Matrices are seq_len x seq_len, zero above the diagonal.
struct AttentionTape {
  int n_layers = 0;
  int n_heads = 0;
  int seq_len = 0;
  std::vector<Matrix> attention;
  std::vector<Matrix> gradient;

  const Matrix& attn(int layer, int head) const { return attention[layer * n_heads + head]; }
  const Matrix& grad(int layer, int head) const { return gradient[layer * n_heads + head]; }
  bool has_gradients() const { return !gradient.empty(); }
};

// Identifies one attention row as it is produced.
struct RowSite {
  int layer;
  int head;
  int query;    // row index
  int seq_len;  // length of the sequence this row belongs to
};

// In-place edit of post-softmax attention rows before value aggregation.
// Implementations must be stateless: the same site and input always produce
// the same output.
class AttentionHook {
 public:
  virtual ~AttentionHook() = default;
  virtual bool touches(const RowSite& site) const = 0;
  // row has length query + 1 (causal prefix).
  virtual void apply(const RowSite& site, std::span<double> row) const = 0;
  // Maps d(loss)/d(edited row) to d(loss)/d(original row) in place.
  virtual void backprop(const RowSite& site, std::span<const double> original,
                        std::span<double> grad) const = 0;
};

namespace detail {
struct ActivationCache;
class Engine;
}  // namespace detail

// Result of a forward pass: logits at every position, the attention tape and
// the activations needed for the reverse pass.
class ForwardPass {
 public:
  ForwardPass();
  ~ForwardPass();
  ForwardPass(ForwardPass&&) noexcept;
  ForwardPass& operator=(ForwardPass&&) noexcept;

  bool valid() const { return cache_ != nullptr; }
  int seq_len() const { return logits_.rows; }
  const Matrix& logits() const { return logits_; }
  std::span<const double> logits_at(int position) const { return logits_.row(position); }
  const AttentionTape& tape() const { return tape_; }
  AttentionTape& tape() { return tape_; }
  const std::vector<TokenId>& tokens() const { return tokens_; }

 private:
  friend class Model;
  std::unique_ptr<detail::ActivationCache> cache_;
  Matrix logits_;
  AttentionTape tape_;
  std::vector<TokenId> tokens_;
  std::shared_ptr<const AttentionHook> hook_;
};

struct LossTerm {
  int position;    // row whose logits are scored
  TokenId target;  // next token expected at position + 1
  double weight = 1.0;
};

struct GradientResult {
  double loss = 0.0;  // weighted sum of loss terms
  std::vector<double> params;
};

class IncrementalDecoder;

// Immutable after construction; safe to share across threads.
class Model {
 public:
  explicit Model(Checkpoint ckpt);
  ~Model();
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;

  const ModelConfig& config() const { return ckpt_.config; }
  const Checkpoint& checkpoint() const { return ckpt_; }

  ForwardPass forward(std::span<const TokenId> tokens,
                      std::shared_ptr<const AttentionHook> hook = nullptr) const;

  // Fills pass.tape().gradient with d loss_ce(logits[position], target) / dA for
  // every layer and head. A is read after any hook edit, i.e. the matrix that
  // feeds value aggregation.
  void backward_attention(ForwardPass& pass, int position, TokenId target) const;

  // Gradient of sum_k weight_k * loss_ce(logits[pos_k], target_k) w.r.t. all parameters.
  GradientResult parameter_gradients(const ForwardPass& pass, std::span<const LossTerm> terms) const;

 private:
  friend class IncrementalDecoder;
  Checkpoint ckpt_;
  std::unique_ptr<detail::Engine> engine_;
};

// KV-cached incremental forward. push() appends one token and returns the
// next-token logits for it; rows are computed with the same kernels as
// Model::forward, so logits are bit-identical to an uncached forward whose
// hook touches the same rows.
class IncrementalDecoder {
 public:
  explicit IncrementalDecoder(const Model& model, std::shared_ptr<const AttentionHook> hook = nullptr);
  ~IncrementalDecoder();
  IncrementalDecoder(IncrementalDecoder&&) noexcept;

  std::span<const double> push(TokenId token);
  int length() const;
  const std::vector<TokenId>& tokens() const { return tokens_; }

 private:
  const Model* model_;
  std::shared_ptr<const AttentionHook> hook_;
  std::unique_ptr<detail::ActivationCache> cache_;
  std::vector<double> logits_;
  std::vector<TokenId> tokens_;
};

// -log softmax(logits)[target]. Throws NumericError on non-finite logits.
double loss_ce(std::span<const double> logits, TokenId target);

// Softmax probabilities (numerically stable).
std::vector<double> softmax(std::span<const double> logits);

// Training on token sequences: loss is mean CE over positions >= first_target.
struct TrainingExample {
  std::vector<TokenId> tokens;
  int first_target = 1;  // first position whose token is predicted
};

struct TrainOptions {
  int epochs = 1;
  double learning_rate = 3e-3;
  int batch_size = 16;
  double weight_decay = 0.0;
  double grad_clip = 1.0;
  int warmup_steps = 50;
  int jobs = 1;
  bool verbose = false;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean training loss per epoch
  double initial_loss = 0.0;
};

// Adam with linear warmup and cosine decay. Deterministic given
// init.config.rng_seed and the example order. epochs = 0 returns init.
Checkpoint train_toy(const Checkpoint& init, std::span<const TrainingExample> data,
                     const TrainOptions& options, TrainReport* report = nullptr);

double mean_loss(const Model& model, std::span<const TrainingExample> data);

}  // namespace salient
