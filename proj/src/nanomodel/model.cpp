#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

#include "engine.hpp"
#include "salient/nanomodel.hpp"
#include "salient/rng.hpp"

namespace salient {

void ModelConfig::validate() const {
  if (n_layers <= 0 || n_heads <= 0 || d_model <= 0 || vocab_size <= 0 || max_seq_len <= 0)
    throw ShapeError("model dimensions must be positive");
  if (d_model % n_heads != 0)
    throw ShapeError("d_model (" + std::to_string(d_model) + ") not divisible by n_heads (" +
                     std::to_string(n_heads) + ")");
}

void ModelConfig::check_layout(const TokenLayout& layout) const {
  if (layout.sys_len < 0 || layout.img_len < 0 || layout.prompt_len < 0)
    throw ShapeError("layout lengths must be non-negative");
  if (max_seq_len < layout.sys_len + layout.img_len + 2)
    throw ShapeError("max_seq_len " + std::to_string(max_seq_len) + " cannot hold layout (needs sys+img+2 = " +
                     std::to_string(layout.sys_len + layout.img_len + 2) + ")");
}

std::vector<TensorSpec> parameter_layout(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<TensorSpec> specs;
  std::size_t offset = 0;
  auto add = [&](std::string name, int rows, int cols) {
    specs.push_back({std::move(name), rows, cols, offset});
    offset += static_cast<std::size_t>(rows) * cols;
  };
  const int d = cfg.d_model;
  const int F = cfg.ffn_dim();
  add("tok_emb", cfg.vocab_size, d);
  add("pos_emb", cfg.max_seq_len, d);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = std::to_string(l) + ".";
    add(p + "ln1.g", 1, d);
    add(p + "ln1.b", 1, d);
    add(p + "wq", d, d);
    add(p + "wk", d, d);
    add(p + "wv", d, d);
    add(p + "wo", d, d);
    add(p + "ln2.g", 1, d);
    add(p + "ln2.b", 1, d);
    add(p + "ff1.w", F, d);
    add(p + "ff1.b", 1, F);
    add(p + "ff2.w", d, F);
    add(p + "ff2.b", 1, d);
  }
  add("lnf.g", 1, d);
  add("lnf.b", 1, d);
  add("head", cfg.vocab_size, d);
  return specs;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  const auto specs = parameter_layout(cfg);
  return specs.back().offset + specs.back().size();
}

Checkpoint Checkpoint::initialize(const ModelConfig& cfg) {
  Checkpoint ckpt;
  ckpt.config = cfg;
  const auto specs = parameter_layout(cfg);
  ckpt.params.assign(parameter_count(cfg), 0.0);
  Rng rng(cfg.rng_seed);
  const double residual_scale = 1.0 / std::sqrt(2.0 * cfg.n_layers);
  for (const auto& spec : specs) {
    const std::string& name = spec.name;
    auto ends_with = [&](const char* suffix) {
      const std::string s(suffix);
      return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    double std_dev = 0.0;
    double fill = 0.0;
    if (ends_with(".g")) {
      fill = 1.0;
    } else if (ends_with(".b")) {
      fill = 0.0;
    } else if (name == "tok_emb" || name == "pos_emb") {
      std_dev = 0.1;
    } else {
      std_dev = 1.0 / std::sqrt(static_cast<double>(spec.cols));
      if (ends_with("wo") || ends_with("ff2.w")) std_dev *= residual_scale;
    }
    for (std::size_t k = 0; k < spec.size(); ++k)
      ckpt.params[spec.offset + k] = std_dev > 0.0 ? std_dev * rng.normal() : fill;
  }
  return ckpt;
}

std::span<double> Checkpoint::tensor(const std::string& name) {
  for (const auto& spec : parameter_layout(config))
    if (spec.name == name) return {params.data() + spec.offset, spec.size()};
  throw ShapeError("unknown tensor " + name);
}

std::span<const double> Checkpoint::tensor(const std::string& name) const {
  return const_cast<Checkpoint*>(this)->tensor(name);
}

std::string config_to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["n_layers"] = cfg.n_layers;
  j["n_heads"] = cfg.n_heads;
  j["d_model"] = cfg.d_model;
  j["vocab_size"] = cfg.vocab_size;
  j["max_seq_len"] = cfg.max_seq_len;
  j["rng_seed"] = cfg.rng_seed;
  j["precision"] = cfg.precision == Precision::f32 ? "f32" : "f64";
  j["parameter_count"] = parameter_count(cfg);
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------- ForwardPass

ForwardPass::ForwardPass() = default;
ForwardPass::~ForwardPass() = default;
ForwardPass::ForwardPass(ForwardPass&&) noexcept = default;
ForwardPass& ForwardPass::operator=(ForwardPass&&) noexcept = default;

// ---------------------------------------------------------------------- Model

Model::Model(Checkpoint ckpt) : ckpt_(std::move(ckpt)) {
  ckpt_.config.validate();
  if (ckpt_.params.size() != parameter_count(ckpt_.config))
    throw ShapeError("parameter vector size does not match config");
  engine_ = detail::make_engine(ckpt_);
}

Model::~Model() = default;
Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;

namespace {

void check_tokens(const ModelConfig& cfg, std::span<const TokenId> tokens) {
  if (static_cast<int>(tokens.size()) > cfg.max_seq_len)
    throw LengthError("sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                      std::to_string(cfg.max_seq_len));
  for (TokenId t : tokens)
    if (t < 0 || t >= cfg.vocab_size) throw VocabularyError("token id " + std::to_string(t) + " not in vocabulary");
}

}  // namespace

ForwardPass Model::forward(std::span<const TokenId> tokens, std::shared_ptr<const AttentionHook> hook) const {
  check_tokens(config(), tokens);
  const int n = static_cast<int>(tokens.size());
  ForwardPass pass;
  pass.cache_ = engine_->new_cache(std::max(n, 1));
  pass.logits_ = Matrix(n, config().vocab_size);
  for (int i = 0; i < n; ++i) engine_->advance(*pass.cache_, tokens[i], n, hook.get(), pass.logits_.row(i));
  engine_->export_tape(*pass.cache_, pass.tape_);
  pass.tokens_.assign(tokens.begin(), tokens.end());
  pass.hook_ = std::move(hook);
  return pass;
}

void Model::backward_attention(ForwardPass& pass, int position, TokenId target) const {
  if (!pass.valid()) throw StateError("backward_attention called before forward");
  if (position < 0 || position >= pass.seq_len())
    throw LengthError("loss position " + std::to_string(position) + " outside sequence");
  if (target < 0 || target >= config().vocab_size)
    throw VocabularyError("target token " + std::to_string(target) + " not in vocabulary");
  const LossTerm term{position, target, 1.0};
  engine_->backward(*pass.cache_, std::span(&term, 1), pass.hook_.get(), nullptr, &pass.tape_);
}

GradientResult Model::parameter_gradients(const ForwardPass& pass, std::span<const LossTerm> terms) const {
  if (!pass.valid()) throw StateError("parameter_gradients called before forward");
  for (const auto& t : terms) {
    if (t.position < 0 || t.position >= pass.seq_len()) throw LengthError("loss position outside sequence");
    if (t.target < 0 || t.target >= config().vocab_size) throw VocabularyError("target token not in vocabulary");
  }
  GradientResult out;
  out.loss = engine_->backward(*pass.cache_, terms, pass.hook_.get(), &out.params, nullptr);
  return out;
}

// --------------------------------------------------------- IncrementalDecoder

IncrementalDecoder::IncrementalDecoder(const Model& model, std::shared_ptr<const AttentionHook> hook)
    : model_(&model),
      hook_(std::move(hook)),
      cache_(model.engine_->new_cache(model.config().max_seq_len)),
      logits_(model.config().vocab_size) {}

IncrementalDecoder::~IncrementalDecoder() = default;
IncrementalDecoder::IncrementalDecoder(IncrementalDecoder&&) noexcept = default;

std::span<const double> IncrementalDecoder::push(TokenId token) {
  const auto& cfg = model_->config();
  if (cache_->length >= cfg.max_seq_len)
    throw LengthError("sequence length exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  if (token < 0 || token >= cfg.vocab_size)
    throw VocabularyError("token id " + std::to_string(token) + " not in vocabulary");
  model_->engine_->advance(*cache_, token, cache_->length + 1, hook_.get(), logits_);
  tokens_.push_back(token);
  return logits_;
}

int IncrementalDecoder::length() const { return cache_->length; }

// ----------------------------------------------------------------- loss/softmax

double loss_ce(std::span<const double> logits, TokenId target) {
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size())
    throw VocabularyError("target token " + std::to_string(target) + " not in vocabulary");
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) {
    if (!std::isfinite(v)) throw NumericError("non-finite logit");
    mx = std::max(mx, v);
  }
  const double lt = logits[target];
  if (lt == mx) {
    // log(sum_k exp(l_k - l_t)) with the target term factored out.
    double rest = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k)
      if (static_cast<TokenId>(k) != target) rest += std::exp(logits[k] - lt);
    return std::log1p(rest);
  }
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return mx + std::log(sum) - lt;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double mx = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

}  // namespace salient
