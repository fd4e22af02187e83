#include "salient/task.hpp"

#include <algorithm>

#include "json.hpp"

#include "salient/errors.hpp"
#include "salient/rng.hpp"

namespace salient::task {

std::string token_name(TokenId t) {
  switch (t) {
    case kPad:
      return "<pad>";
    case kSys0:
      return "<sys0>";
    case kSys1:
      return "<sys1>";
    case kDescribe:
      return "describe";
    case kBegin:
      return ":";
    case kIs:
      return "is";
    case kSep:
      return ";";
    case kEos:
      return "<eos>";
    case kEmptySlot:
      return "<empty>";
    default:
      break;
  }
  if (is_object(t)) return "obj" + std::to_string(t - kFirstObject);
  if (is_attribute(t)) return "attr" + std::to_string(t - kFirstAttribute);
  if (t >= kFirstPair && t < kVocabUsed) {
    const int k = t - kFirstPair;
    return "[obj" + std::to_string(k / kAttributes) + ":attr" + std::to_string(k % kAttributes) + "]";
  }
  return "<" + std::to_string(t) + ">";
}

std::vector<TokenId> SyntheticSample::prefix(const TokenLayout& layout) const {
  std::vector<TokenId> out;
  out.reserve(layout.prefix_len());
  for (int i = 0; i < layout.sys_len; ++i) out.push_back(i % 2 == 0 ? kSys0 : kSys1);
  out.insert(out.end(), image_tokens.begin(), image_tokens.end());
  out.insert(out.end(), prompt.begin(), prompt.end());
  return out;
}

std::vector<TokenId> SyntheticSample::reference_output() const {
  std::vector<TokenId> out;
  for (int k : listing) {
    const auto& p = scene[k];
    out.push_back(object_token(p.object));
    out.push_back(kIs);
    out.push_back(attribute_token(p.attribute));
    out.push_back(kSep);
  }
  out.push_back(kEos);
  return out;
}

bool SyntheticSample::grounded(TokenId t) const { return std::binary_search(gold.begin(), gold.end(), t); }

namespace {

void finish(SyntheticSample& s, const TokenLayout& layout) {
  s.image_tokens.assign(layout.img_len, kEmptySlot);
  for (std::size_t k = 0; k < s.scene.size(); ++k) s.image_tokens[k] = pair_token(s.scene[k].object, s.scene[k].attribute);
  s.prompt.clear();
  for (int i = 0; i < layout.prompt_len; ++i) s.prompt.push_back(i + 1 == layout.prompt_len ? kBegin : kDescribe);
  s.gold.clear();
  s.distractors = 0;
  for (const auto& p : s.scene) {
    s.gold.push_back(object_token(p.object));
    s.gold.push_back(attribute_token(p.attribute));
    if (p.attribute != typical_attribute(p.object)) ++s.distractors;
  }
  std::sort(s.gold.begin(), s.gold.end());
  s.gold.erase(std::unique(s.gold.begin(), s.gold.end()), s.gold.end());
}

}  // namespace

SyntheticSample make_sample(std::uint64_t seed, std::uint64_t id, const TaskConfig& cfg) {
  if (cfg.difficulty < 0) throw ConfigError("harness.difficulty must be >= 0");
  if (cfg.layout.img_len < 1) throw ConfigError("layout.img_len must be >= 1");
  Rng rng(mix_seed(seed, id));
  SyntheticSample s;
  s.id = id;
  const int max_size = std::min({1 + cfg.difficulty, cfg.layout.img_len, kObjects});
  const int size = 1 + static_cast<int>(rng.below(max_size));
  const double p_distractor = std::min(0.1 * cfg.difficulty, 0.6);

  std::vector<int> objects(kObjects);
  for (int o = 0; o < kObjects; ++o) objects[o] = o;
  for (int k = kObjects; k > 1; --k) std::swap(objects[k - 1], objects[rng.below(k)]);
  objects.resize(size);

  std::vector<bool> distractor(size);
  for (int k = 0; k < size; ++k) distractor[k] = rng.uniform() < p_distractor;
  std::vector<bool> banned(kAttributes, false);  // typical attributes of distractors
  for (int k = 0; k < size; ++k)
    if (distractor[k]) banned[typical_attribute(objects[k])] = true;
  std::vector<bool> used(kAttributes, false);
  for (int k = 0; k < size; ++k)
    if (!distractor[k]) used[typical_attribute(objects[k])] = true;
  std::vector<int> attrs(size);
  for (int k = 0; k < size; ++k) {
    attrs[k] = typical_attribute(objects[k]);
    if (!distractor[k]) continue;
    std::vector<int> options;
    for (int a = 0; a < kAttributes; ++a)
      if (!banned[a] && !used[a]) options.push_back(a);
    if (options.empty()) {
      // Falls back to a typical pair; its attribute is free because only
      // this object has it as typical.
      used[attrs[k]] = true;
      continue;
    }
    attrs[k] = options[rng.below(options.size())];
    used[attrs[k]] = true;
  }
  for (int k = 0; k < size; ++k) s.scene.push_back({objects[k], attrs[k]});
  s.listing.resize(size);
  for (int k = 0; k < size; ++k) s.listing[k] = k;
  if (cfg.order == ListOrder::attribute)
    std::sort(s.listing.begin(), s.listing.end(),
              [&](int a, int b) { return s.scene[a].attribute < s.scene[b].attribute; });
  finish(s, cfg.layout);

  std::vector<Pair> told;
  for (int k : s.listing) {
    const auto& p = s.scene[k];
    const bool prior = p.attribute != typical_attribute(p.object) && rng.uniform() < cfg.attribute_noise;
    told.push_back({p.object, prior ? typical_attribute(p.object) : p.attribute});
  }
  if (size < kObjects && rng.uniform() < cfg.object_noise) {
    std::vector<int> absent;
    for (int o = 0; o < kObjects; ++o)
      if (std::find(objects.begin(), objects.end(), o) == objects.end()) absent.push_back(o);
    const int o = absent[rng.below(absent.size())];
    told.push_back({o, attrs[rng.below(size)]});
  }
  for (const auto& p : told) {
    s.caption.push_back(object_token(p.object));
    s.caption.push_back(kIs);
    s.caption.push_back(attribute_token(p.attribute));
    s.caption.push_back(kSep);
  }
  s.caption.push_back(kEos);
  return s;
}

std::vector<SyntheticSample> gen_corpus(std::uint64_t seed, int n_samples, const TaskConfig& cfg) {
  if (n_samples < 1) throw ConfigError("harness.samples must be >= 1");
  std::vector<SyntheticSample> out;
  out.reserve(n_samples);
  for (int i = 0; i < n_samples; ++i) out.push_back(make_sample(seed, static_cast<std::uint64_t>(i), cfg));
  return out;
}

TrainingExample to_training_example(const SyntheticSample& s, const TokenLayout& layout) {
  TrainingExample ex;
  ex.tokens = s.prefix(layout);
  ex.first_target = static_cast<int>(ex.tokens.size());
  const auto out = s.caption.empty() ? s.reference_output() : s.caption;
  ex.tokens.insert(ex.tokens.end(), out.begin(), out.end());
  return ex;
}

std::string corpus_to_jsonl(const std::vector<SyntheticSample>& corpus, std::uint64_t seed,
                            const TokenLayout& layout) {
  std::string out;
  nlohmann::ordered_json header;
  header["seed"] = seed;
  header["samples"] = corpus.size();
  header["sys_len"] = layout.sys_len;
  header["img_len"] = layout.img_len;
  header["prompt_len"] = layout.prompt_len;
  out += header.dump() + "\n";
  for (const auto& s : corpus) {
    nlohmann::ordered_json j;
    j["id"] = s.id;
    auto& scene = j["scene"] = nlohmann::ordered_json::array();
    for (const auto& p : s.scene) scene.push_back({p.object, p.attribute});
    j["listing"] = s.listing;
    j["tokens"] = s.prefix(layout);
    j["gold"] = s.gold;
    j["caption"] = s.caption;
    j["distractors"] = s.distractors;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<SyntheticSample> corpus_from_jsonl(const std::string& text, const TokenLayout& layout) {
  std::vector<SyntheticSample> out;
  std::size_t start = 0;
  bool header = true;
  int line_no = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw FormatError("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
    if (header) {
      header = false;
      if (j.contains("seed") && !j.contains("scene")) continue;
    }
    SyntheticSample s;
    try {
      s.id = j.at("id").get<std::uint64_t>();
      for (const auto& p : j.at("scene")) s.scene.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
      s.listing = j.at("listing").get<std::vector<int>>();
      if (j.contains("caption")) s.caption = j.at("caption").get<std::vector<TokenId>>();
    } catch (const std::exception& e) {
      throw FormatError("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
    finish(s, layout);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace salient::task
