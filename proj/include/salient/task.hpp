#pragma once
// Synthetic grounded-description task.
//
// A scene is a list of (object, attribute) pairs with distinct attributes.
// The "image" is one token per pair, padded with an empty-slot token. The
// expected output describes every pair as "object is attribute ;", in slot
// order or sorted by attribute, and ends with EOS. Every object has a typical
// attribute; a distractor is an object whose attribute in this scene is
// atypical while its typical attribute appears nowhere in the scene, so
// falling back on the prior is a hallucination.

#include <cstdint>
#include <string>
#include <vector>

#include "salient/layout.hpp"
#include "salient/nanomodel.hpp"

namespace salient::task {

inline constexpr int kObjects = 8;
inline constexpr int kAttributes = 8;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kSys0 = 1;
inline constexpr TokenId kSys1 = 2;
inline constexpr TokenId kDescribe = 3;
inline constexpr TokenId kBegin = 4;
inline constexpr TokenId kIs = 5;
inline constexpr TokenId kSep = 6;
inline constexpr TokenId kEos = 7;
inline constexpr TokenId kEmptySlot = 8;
inline constexpr TokenId kFirstObject = 9;
inline constexpr TokenId kFirstAttribute = kFirstObject + kObjects;
inline constexpr TokenId kFirstPair = kFirstAttribute + kAttributes;
inline constexpr int kVocabUsed = kFirstPair + kObjects * kAttributes;

inline TokenId object_token(int o) { return kFirstObject + o; }
inline TokenId attribute_token(int a) { return kFirstAttribute + a; }
inline TokenId pair_token(int o, int a) { return kFirstPair + o * kAttributes + a; }
inline bool is_object(TokenId t) { return t >= kFirstObject && t < kFirstAttribute; }
inline bool is_attribute(TokenId t) { return t >= kFirstAttribute && t < kFirstPair; }
inline bool is_content(TokenId t) { return is_object(t) || is_attribute(t); }
inline int typical_attribute(int o) { return o % kAttributes; }

std::string token_name(TokenId t);

struct Pair {
  int object;
  int attribute;
  bool operator==(const Pair&) const = default;
};

struct SyntheticSample {
  std::uint64_t id = 0;
  std::vector<Pair> scene;            // image slot order
  std::vector<int> listing;           // indices into scene, in description order
  std::vector<TokenId> image_tokens;  // layout.img_len entries
  std::vector<TokenId> prompt;        // layout.prompt_len entries
  std::vector<TokenId> gold;          // sorted grounded content tokens
  std::vector<TokenId> caption;       // training target; may carry caption noise
  int distractors = 0;

  std::vector<TokenId> prefix(const TokenLayout& layout) const;
  std::vector<TokenId> reference_output() const;
  bool grounded(TokenId t) const;
};

enum class ListOrder { slot, attribute };

struct TaskConfig {
  int difficulty = 4;
  ListOrder order = ListOrder::attribute;
  // Training-caption noise; reference outputs are never noisy.
  // object_noise: probability that the caption ends with one extra object
  // absent from the scene, described with an attribute that is in the scene.
  // attribute_noise: probability, per distractor, that the caption
  // states the object's typical attribute instead of the true one.
  double object_noise = 0.0;
  double attribute_noise = 0.0;
  TokenLayout layout;
};

// Scene size is uniform on [1, min(1 + difficulty, img_len)]; each object is a
// distractor with probability min(0.1 * difficulty, 0.6). difficulty 0 gives a
// single typical object.
SyntheticSample make_sample(std::uint64_t seed, std::uint64_t id, const TaskConfig& cfg);
std::vector<SyntheticSample> gen_corpus(std::uint64_t seed, int n_samples, const TaskConfig& cfg);

// Teacher-forced example on the caption: loss on every output position.
TrainingExample to_training_example(const SyntheticSample& s, const TokenLayout& layout);

// Header line with the seed, then one JSON object per line: id, scene,
// listing, tokens, gold, caption, distractors.
std::string corpus_to_jsonl(const std::vector<SyntheticSample>& corpus, std::uint64_t seed, const TokenLayout& layout);
std::vector<SyntheticSample> corpus_from_jsonl(const std::string& text, const TokenLayout& layout);

}  // namespace salient::task
