#include "salient/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"

#include "salient/errors.hpp"
#include "salient/io.hpp"

namespace salient {

std::vector<int> SaliencyScoreConfig::default_layers(int n_layers) {
  std::vector<int> out;
  for (int l = n_layers / 2; l < n_layers; ++l) out.push_back(l);
  return out;
}

void SaliencyScoreConfig::validate(int n_layers) const {
  if (target_layers.empty()) throw ConfigError("saliency target layer set is empty");
  for (int l : target_layers)
    if (l < 0 || l >= n_layers)
      throw ConfigError("saliency target layer " + std::to_string(l) + " outside [0, " + std::to_string(n_layers) + ")");
}

Matrix per_head_saliency(const Matrix& A, const Matrix& G) {
  if (!A.same_shape(G)) throw ShapeError("attention and gradient shapes differ");
  Matrix S(A.rows, A.cols);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j <= std::min(i, A.cols - 1); ++j) S(i, j) = std::abs(A(i, j) * G(i, j));
  return S;
}

Matrix head_sum(const std::vector<Matrix>& heads) {
  if (heads.empty()) throw ShapeError("layer saliency needs at least one head");
  Matrix sum(heads[0].rows, heads[0].cols);
  for (const auto& h : heads) {
    if (!h.same_shape(sum)) throw ShapeError("head saliency shapes differ");
    for (std::size_t k = 0; k < sum.data.size(); ++k) sum.data[k] += h.data[k];
  }
  return sum;
}

LayerSaliency layer_saliency(const std::vector<Matrix>& heads) {
  LayerSaliency out{head_sum(heads), false};
  double norm2 = 0.0;
  for (double v : out.value.data) norm2 += v * v;
  if (norm2 == 0.0) {
    out.degenerate = true;
    return out;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& v : out.value.data) v *= inv;
  return out;
}

Matrix appendix_saliency(const std::vector<Matrix>& A, const std::vector<Matrix>& G) {
  if (A.empty() || A.size() != G.size()) throw ShapeError("appendix saliency needs matching head lists");
  Matrix sum(A[0].rows, A[0].cols);
  for (std::size_t h = 0; h < A.size(); ++h) {
    if (!A[h].same_shape(sum) || !G[h].same_shape(sum)) throw ShapeError("head shapes differ");
    for (std::size_t k = 0; k < sum.data.size(); ++k) sum.data[k] += A[h].data[k] * G[h].data[k];
  }
  const double inv_h = 1.0 / static_cast<double>(A.size());
  Matrix out(sum.rows, sum.cols);
  for (int i = 0; i < sum.rows; ++i)
    for (int j = 0; j <= std::min(i, sum.cols - 1); ++j) out(i, j) = std::abs(sum(i, j)) * inv_h;
  return out;
}

SaliencyStack build_stack(const AttentionTape& tape, Aggregation mode) {
  if (!tape.has_gradients()) throw StateError("attention tape has no gradients; run backward_attention first");
  SaliencyStack stack;
  stack.mode = mode;
  stack.n = tape.seq_len;
  for (int l = 0; l < tape.n_layers; ++l) {
    if (mode == Aggregation::main_text) {
      std::vector<Matrix> heads;
      heads.reserve(tape.n_heads);
      for (int h = 0; h < tape.n_heads; ++h) heads.push_back(per_head_saliency(tape.attn(l, h), tape.grad(l, h)));
      auto layer = layer_saliency(heads);
      stack.layers.push_back(std::move(layer.value));
      stack.degenerate.push_back(layer.degenerate);
    } else {
      std::vector<Matrix> A, G;
      for (int h = 0; h < tape.n_heads; ++h) {
        A.push_back(tape.attn(l, h));
        G.push_back(tape.grad(l, h));
      }
      stack.layers.push_back(appendix_saliency(A, G));
      stack.degenerate.push_back(false);
    }
  }
  return stack;
}

std::optional<double> candidate_score(const SaliencyStack& stack, const SaliencyScoreConfig& cfg, int P) {
  cfg.validate(static_cast<int>(stack.layers.size()));
  if (P < 0 || P >= stack.n) throw LengthError("score position " + std::to_string(P) + " outside sequence");
  int begin = cfg.layout.output_start();
  const int end = P;
  if (cfg.scope == ScoreScope::predecessor) begin = std::max(begin, P - 1);
  if (begin < 0) begin = 0;
  if (end <= begin) return std::nullopt;
  double total = 0.0;
  for (int l : cfg.target_layers)
    for (int j = begin; j < end; ++j) total += stack.layers[l](P, j);
  return total / (static_cast<double>(cfg.target_layers.size()) * (end - begin));
}

namespace {

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void export_map(const SaliencyStack& stack, int layer, const TokenLayout& layout, const std::filesystem::path& path,
                MapFormat format, std::optional<std::uint64_t> seed) {
  if (layer < 0 || layer >= static_cast<int>(stack.layers.size()))
    throw ConfigError("map layer " + std::to_string(layer) + " outside [0, " + std::to_string(stack.layers.size()) + ")");
  const Matrix& m = stack.layers[layer];
  std::string csv;
  if (format == MapFormat::dense) {
    for (int i = 0; i < m.rows; ++i) {
      for (int j = 0; j < m.cols; ++j) {
        if (j > 0) csv += ',';
        csv += format_value(m(i, j));
      }
      csv += '\n';
    }
  } else {
    csv = "i,j,value\n";
    for (int i = 0; i < m.rows; ++i)
      for (int j = 0; j < m.cols; ++j) csv += std::to_string(i) + "," + std::to_string(j) + "," + format_value(m(i, j)) + "\n";
  }
  nlohmann::ordered_json side;
  if (seed) side["seed"] = *seed;
  side["layer"] = layer;
  side["aggregation"] = stack.mode == Aggregation::main_text ? "main_text" : "appendix_taylor";
  side["format"] = format == MapFormat::dense ? "dense" : "triples";
  side["n"] = m.rows;
  side["sys_len"] = layout.sys_len;
  side["img_len"] = layout.img_len;
  side["prompt_len"] = layout.prompt_len;
  side["output_start"] = layout.output_start();
  write_file_atomic(path, csv);
  auto side_path = path;
  side_path += ".json";
  write_file_atomic(side_path, side.dump(2) + "\n");
}

Matrix read_dense_map(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError("bad map cell '" + cell + "' in " + path.string());
      }
    }
    rows.push_back(std::move(row));
  }
  const int n = static_cast<int>(rows.size());
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(rows[i].size()) != n) throw FormatError("map is not square: " + path.string());
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  }
  return m;
}

std::string map_svg(const Matrix& m, const TokenLayout& layout, int cell_px) {
  double mx = 0.0;
  for (double v : m.data) mx = std::max(mx, v);
  const int size = m.cols * cell_px;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << m.rows * cell_px
      << "\" shape-rendering=\"crispEdges\">\n";
  for (int i = 0; i < m.rows; ++i) {
    for (int j = 0; j < m.cols; ++j) {
      // Step 0 is white (zero), step 9 black (the maximum).
      int step = mx > 0.0 ? static_cast<int>(m(i, j) / mx * 10.0) : 0;
      step = std::clamp(step, 0, 9);
      const int gray = 255 - step * 255 / 9;
      svg << "<rect x=\"" << j * cell_px << "\" y=\"" << i * cell_px << "\" width=\"" << cell_px << "\" height=\""
          << cell_px << "\" fill=\"rgb(" << gray << ',' << gray << ',' << gray << ")\"/>\n";
    }
  }
  const int marks[] = {layout.sys_len, layout.sys_len + layout.img_len, layout.output_start()};
  int last = -1;
  for (int b : marks) {
    if (b == last || b <= 0 || b >= m.cols) continue;
    last = b;
    const int p = b * cell_px;
    svg << "<line x1=\"" << p << "\" y1=\"0\" x2=\"" << p << "\" y2=\"" << m.rows * cell_px
        << "\" stroke=\"red\" stroke-width=\"1\"/>\n";
    svg << "<line x1=\"0\" y1=\"" << p << "\" x2=\"" << size << "\" y2=\"" << p
        << "\" stroke=\"red\" stroke-width=\"1\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace salient
