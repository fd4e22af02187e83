#include <algorithm>
#include <set>

#include "doctest.h"

#include "salient/errors.hpp"
#include "salient/task.hpp"

using namespace salient;
using namespace salient::task;

TEST_CASE("token names") {
  CHECK(token_name(kIs) == "is");
  CHECK(token_name(kEos) == "<eos>");
  CHECK(token_name(object_token(3)) == "obj3");
  CHECK(token_name(attribute_token(7)) == "attr7");
  CHECK(token_name(pair_token(2, 5)) == "[obj2:attr5]");
  CHECK(kVocabUsed <= 96);
}

TEST_CASE("samples are well formed") {
  TaskConfig cfg;
  cfg.difficulty = 4;
  for (std::uint64_t id = 0; id < 300; ++id) {
    const auto s = make_sample(11, id, cfg);
    REQUIRE(!s.scene.empty());
    CHECK(s.scene.size() <= 5);
    CHECK(s.prefix(cfg.layout).size() == static_cast<std::size_t>(cfg.layout.prefix_len()));
    std::set<int> objects, attrs;
    for (const auto& p : s.scene) {
      objects.insert(p.object);
      attrs.insert(p.attribute);
    }
    CHECK(objects.size() == s.scene.size());
    CHECK(attrs.size() == s.scene.size());
    // Image slots carry the scene in slot order, then empty slots.
    for (std::size_t k = 0; k < s.image_tokens.size(); ++k)
      CHECK(s.image_tokens[k] ==
            (k < s.scene.size() ? pair_token(s.scene[k].object, s.scene[k].attribute) : kEmptySlot));
    // Attribute order lists by ascending attribute.
    for (std::size_t k = 1; k < s.listing.size(); ++k)
      CHECK(s.scene[s.listing[k - 1]].attribute < s.scene[s.listing[k]].attribute);
    const auto ref = s.reference_output();
    CHECK(ref.size() == 4 * s.scene.size() + 1);
    CHECK(ref.back() == kEos);
    for (TokenId t : ref)
      if (is_content(t)) CHECK(s.grounded(t));
    // Without noise the caption is the reference.
    CHECK(s.caption == ref);
  }
}

TEST_CASE("slot order and difficulty 0") {
  TaskConfig cfg;
  cfg.order = ListOrder::slot;
  const auto s = make_sample(3, 4, cfg);
  for (std::size_t k = 0; k < s.listing.size(); ++k) CHECK(s.listing[k] == static_cast<int>(k));
  cfg.difficulty = 0;
  for (std::uint64_t id = 0; id < 20; ++id) {
    const auto t = make_sample(3, id, cfg);
    REQUIRE(t.scene.size() == 1);
    CHECK(t.scene[0].attribute == typical_attribute(t.scene[0].object));
    CHECK(t.distractors == 0);
  }
  cfg.difficulty = -1;
  CHECK_THROWS_AS(make_sample(3, 0, cfg), ConfigError);
}

TEST_CASE("object noise appends one absent object") {
  TaskConfig cfg;
  cfg.object_noise = 1.0;
  int noisy = 0;
  for (std::uint64_t id = 0; id < 200; ++id) {
    const auto s = make_sample(5, id, cfg);
    const auto ref = s.reference_output();
    if (s.caption == ref) continue;
    ++noisy;
    REQUIRE(s.caption.size() == ref.size() + 4);
    CHECK(std::equal(ref.begin(), ref.end() - 1, s.caption.begin()));
    const TokenId extra = s.caption[ref.size() - 1];
    CHECK(is_object(extra));
    CHECK_FALSE(s.grounded(extra));
    CHECK(s.grounded(s.caption[ref.size() + 1]));  // its attribute is in the scene
  }
  CHECK(noisy == 200);
}

TEST_CASE("attribute noise states the typical attribute") {
  TaskConfig cfg;
  cfg.difficulty = 6;
  cfg.attribute_noise = 1.0;
  int changed = 0;
  for (std::uint64_t id = 0; id < 100; ++id) {
    const auto s = make_sample(8, id, cfg);
    for (std::size_t k = 0; k < s.listing.size(); ++k) {
      const auto& p = s.scene[s.listing[k]];
      const TokenId said = s.caption[4 * k + 2];
      CHECK(said == attribute_token(typical_attribute(p.object)));
      changed += p.attribute != typical_attribute(p.object);
    }
  }
  CHECK(changed > 0);
}

TEST_CASE("corpus determinism and jsonl round trip") {
  TaskConfig cfg;
  cfg.object_noise = 0.5;
  const auto a = gen_corpus(2024, 50, cfg);
  const auto b = gen_corpus(2024, 50, cfg);
  CHECK(corpus_to_jsonl(a, 2024, cfg.layout) == corpus_to_jsonl(b, 2024, cfg.layout));
  CHECK(corpus_to_jsonl(a, 2024, cfg.layout) != corpus_to_jsonl(gen_corpus(2025, 50, cfg), 2025, cfg.layout));
  const auto text = corpus_to_jsonl(a, 2024, cfg.layout);
  const auto back = corpus_from_jsonl(text, cfg.layout);
  REQUIRE(back.size() == a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(back[i].scene == a[i].scene);
    CHECK(back[i].listing == a[i].listing);
    CHECK(back[i].caption == a[i].caption);
    CHECK(back[i].gold == a[i].gold);
    CHECK(back[i].prefix(cfg.layout) == a[i].prefix(cfg.layout));
  }
  CHECK_THROWS_AS(gen_corpus(1, 0, cfg), ConfigError);
}

TEST_CASE("training example targets the caption") {
  TaskConfig cfg;
  const auto s = make_sample(1, 1, cfg);
  const auto ex = to_training_example(s, cfg.layout);
  CHECK(ex.first_target == cfg.layout.prefix_len());
  CHECK(std::equal(s.caption.begin(), s.caption.end(), ex.tokens.begin() + ex.first_target));
}
