#pragma once

#include <cstdint>
#include <optional>

namespace salient {

using TokenId = std::int32_t;

// Partition of a sequence into system, image, prompt and output spans.
//
// Output positions J for a query at row P are { j | output_start <= j < P }.
// output_start defaults to sys_len + img_len, which places the prompt inside
// J; set output_start_override to sys_len + img_len + prompt_len to restrict
// J to generated tokens only.
struct TokenLayout {
  int sys_len = 2;
  int img_len = 8;
  int prompt_len = 2;
  std::optional<int> output_start_override;

  int output_start() const { return output_start_override.value_or(sys_len + img_len); }
  int prefix_len() const { return sys_len + img_len + prompt_len; }

  // [begin, end) of J for query row P; empty when P <= output_start.
  struct Range {
    int begin;
    int end;
    int size() const { return end > begin ? end - begin : 0; }
    bool empty() const { return size() == 0; }
  };
  Range output_positions(int P) const { return {output_start(), P}; }

  bool operator==(const TokenLayout&) const = default;
};

}  // namespace salient
