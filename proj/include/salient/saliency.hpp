#pragma once
// Gradient-times-attention saliency.
//
// Per head: S = tril(|A * dL/dA|). Per layer the head maps are summed and
// divided by the Frobenius norm of the sum. The alternative "appendix"
// aggregation takes |sum_h A*G| / H without normalization.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "salient/layout.hpp"
#include "salient/matrix.hpp"
#include "salient/nanomodel.hpp"

namespace salient {

enum class Aggregation { main_text, appendix_taylor };

struct SaliencyStack {
  Aggregation mode = Aggregation::main_text;
  int n = 0;
  std::vector<Matrix> layers;
  std::vector<bool> degenerate;  // layer sum was the zero matrix
};

// Which output positions j contribute to a candidate score read from row P.
enum class ScoreScope {
  output_span,  // output_start <= j < P
  predecessor,  // j = P - 1 only (when P - 1 >= output_start)
};

struct SaliencyScoreConfig {
  std::vector<int> target_layers;
  TokenLayout layout;
  ScoreScope scope = ScoreScope::output_span;

  // Upper half of the stack: {n_layers/2, ..., n_layers-1}.
  static std::vector<int> default_layers(int n_layers);
  void validate(int n_layers) const;
};

Matrix per_head_saliency(const Matrix& A, const Matrix& G);

struct LayerSaliency {
  Matrix value;
  bool degenerate = false;
};
LayerSaliency layer_saliency(const std::vector<Matrix>& heads);
// Sum of heads before normalization.
Matrix head_sum(const std::vector<Matrix>& heads);

Matrix appendix_saliency(const std::vector<Matrix>& A, const std::vector<Matrix>& G);

// Builds the per-layer stack from a tape with gradients filled in.
SaliencyStack build_stack(const AttentionTape& tape, Aggregation mode = Aggregation::main_text);

// Mean of stack.layers[l](P, j) over target layers and j in the scope.
// Returns nullopt when the scope is empty (no output history yet).
std::optional<double> candidate_score(const SaliencyStack& stack, const SaliencyScoreConfig& cfg, int P);

enum class MapFormat { dense, triples };

// Writes layer `layer` as CSV plus `<path>.json` with the layout boundaries
// (and the seed, when given). Dense: one line per row, comma-separated.
// Triples: header "i,j,value" then one line per entry, row-major.
void export_map(const SaliencyStack& stack, int layer, const TokenLayout& layout,
                const std::filesystem::path& path, MapFormat format = MapFormat::dense,
                std::optional<std::uint64_t> seed = std::nullopt);

// Parses a dense map written by export_map (comment lines starting with '#' skipped).
Matrix read_dense_map(const std::filesystem::path& path);

// n x n grid of rects on a fixed 10-step grayscale ramp, with partition lines
// at sys_len, sys_len + img_len and output_start.
std::string map_svg(const Matrix& m, const TokenLayout& layout, int cell_px = 12);

}  // namespace salient
