#include "salient/config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "salient/errors.hpp"
#include "salient/io.hpp"

namespace salient {

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"run.seed", "7", "seed for decoding and every report header"},
      {"run.jobs", "1", "worker threads for per-sample loops"},
      {"run.out", "out", "output directory"},
      {"run.checkpoint", "data/reference.nmdl", "checkpoint to load (train writes <out>/model.nmdl)"},

      {"model.n_layers", "4", "transformer layers"},
      {"model.n_heads", "4", "attention heads per layer"},
      {"model.d_model", "64", "residual width (divisible by n_heads)"},
      {"model.vocab_size", "96", "vocabulary size"},
      {"model.max_seq_len", "64", "maximum sequence length"},
      {"model.seed", "1", "initialization seed"},
      {"model.precision", "f64", "f64 or f32"},

      {"layout.sys_len", "2", "system tokens"},
      {"layout.img_len", "8", "image tokens"},
      {"layout.prompt_len", "2", "prompt tokens"},
      {"layout.output_start", "-1", "first position of J; -1 means sys_len + img_len"},

      {"saliency.layers", "upper", "target layers: 'upper' (upper half) or a comma list"},
      {"saliency.scope", "output_span", "candidate score positions: output_span or predecessor"},
      {"saliency.aggregation", "main_text", "main_text or appendix_taylor (maps only)"},

      {"sgrs.top_k", "5", "candidate set size"},
      {"sgrs.max_rounds", "5", "rejection rounds"},
      {"sgrs.alpha", "0.6", "threshold sensitivity"},
      {"sgrs.window", "10", "history window W"},
      {"sgrs.temperature", "1.0", "sampling temperature; <= 0 is greedy"},
      {"sgrs.history_on_fallback", "true", "record fallback-accepted saliency in the history"},
      {"sgrs.score_with_locore", "false", "score candidates with LocoRE gains active"},

      {"locore.beta", "0.15", "gain strength"},
      {"locore.window", "5", "local window w_s"},
      {"locore.renormalize", "false", "renormalize gained rows"},

      {"decode.mode", "baseline", "baseline, sgrs, locore or sgrs+locore"},
      {"decode.max_new", "40", "maximum generated tokens"},
      {"decode.first", "0", "first corpus sample to decode"},
      {"decode.count", "1", "number of samples to decode"},

      {"train.samples", "6000", "training corpus size"},
      {"train.corpus_seed", "1000", "training corpus seed"},
      {"train.epochs", "2", "epochs"},
      {"train.lr", "0.003", "peak learning rate"},
      {"train.batch", "32", "batch size"},
      {"train.warmup", "100", "warmup steps"},
      {"train.weight_decay", "0", "decoupled weight decay"},
      {"train.clip", "1", "global gradient-norm clip (0 disables)"},

      {"harness.samples", "2000", "evaluation corpus size"},
      {"harness.corpus_seed", "2024", "evaluation corpus seed"},
      {"harness.difficulty", "4", "scene size and distractor rate"},
      {"harness.order", "attribute", "caption order: slot or attribute"},
      {"harness.object_noise", "0.25", "training captions: extra absent object probability"},
      {"harness.attribute_noise", "0", "training captions: prior attribute probability per distractor"},
      {"harness.bins", "10", "saliency bins"},
      {"harness.quantile", "0.75", "intervention threshold quantile of correct-token saliency"},
      {"harness.factors", "1.0,0.8,0.6,0.4,0.2", "intervention decay factors"},
      {"harness.max_per_sample", "1", "intervened tokens per sample (highest saliency first)"},

      {"sweep.alphas", "0,0.6", "alpha grid"},
      {"sweep.betas", "0,0.1,0.15,0.2,1.0", "beta grid"},
      {"sweep.modes", "baseline,locore,sgrs,sgrs+locore", "modes"},
      {"sweep.samples", "500", "samples per sweep cell (first N of the evaluation corpus)"},

      {"map.sample", "0", "corpus sample to map"},
      {"map.tokens", "", "explicit token ids (comma list) instead of a decoded sample"},
      {"map.layer", "-1", "layer to export; -1 is the last layer"},
      {"map.position", "-1", "query row scored; -1 is the second-to-last row"},
      {"map.format", "dense", "dense or triples"},
  };
  return keys;
}

ConfigStore::ConfigStore() {
  for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

void ConfigStore::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

}  // namespace

void ConfigStore::parse(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    try {
      set(key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void ConfigStore::load_file(const std::filesystem::path& path) { parse(read_file(path), path.string()); }

const std::string& ConfigStore::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

std::string ConfigStore::get_string(const std::string& key) const { return raw(key); }

long long ConfigStore::get_int(const std::string& key) const {
  const auto& v = raw(key);
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t ConfigStore::get_u64(const std::string& key) const {
  const auto& v = raw(key);
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': expected an unsigned integer, got '" + v + "'");
  return out;
}

double ConfigStore::get_double(const std::string& key) const {
  const auto& v = raw(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
}

bool ConfigStore::get_bool(const std::string& key) const {
  const auto& v = raw(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<double> ConfigStore::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(raw(key))) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': bad number '" + item + "'");
    }
  }
  return out;
}

std::vector<int> ConfigStore::get_ints(const std::string& key) const {
  std::vector<int> out;
  for (const auto& item : split_list(raw(key))) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size())
      throw ConfigError("config key '" + key + "': bad integer '" + item + "'");
    out.push_back(v);
  }
  return out;
}

std::string ConfigStore::dump() const {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + "=" + values_.at(k.name) + "\n";
  return out;
}

DecodeOptions RunConfig::decode_options() const {
  DecodeOptions o;
  o.mode = mode;
  o.sgrs = sgrs;
  o.locore = locore;
  o.max_new_tokens = max_new_tokens;
  o.eos = task::kEos;
  o.seed = seed;
  return o;
}

namespace {

template <typename T>
T checked(const std::string& key, T value, bool ok, const std::string& what) {
  if (!ok) throw ConfigError("config key '" + key + "': " + what);
  return value;
}

}  // namespace

RunConfig to_run_config(const ConfigStore& s) {
  RunConfig c;
  c.seed = s.get_u64("run.seed");
  c.jobs = static_cast<int>(s.get_int("run.jobs"));
  if (c.jobs < 1) throw ConfigError("config key 'run.jobs': must be >= 1");
  c.out = s.get_string("run.out");
  c.checkpoint = s.get_string("run.checkpoint");

  c.model.n_layers = static_cast<int>(s.get_int("model.n_layers"));
  c.model.n_heads = static_cast<int>(s.get_int("model.n_heads"));
  c.model.d_model = static_cast<int>(s.get_int("model.d_model"));
  c.model.vocab_size = static_cast<int>(s.get_int("model.vocab_size"));
  c.model.max_seq_len = static_cast<int>(s.get_int("model.max_seq_len"));
  c.model.rng_seed = s.get_u64("model.seed");
  const auto precision = s.get_string("model.precision");
  if (precision == "f64") {
    c.model.precision = Precision::f64;
  } else if (precision == "f32") {
    c.model.precision = Precision::f32;
  } else {
    throw ConfigError("config key 'model.precision': expected f64 or f32, got '" + precision + "'");
  }
  try {
    c.model.validate();
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("model.*: ") + e.what());
  }
  if (c.model.vocab_size < task::kVocabUsed)
    throw ConfigError("config key 'model.vocab_size': the task needs at least " + std::to_string(task::kVocabUsed));

  c.layout.sys_len = static_cast<int>(s.get_int("layout.sys_len"));
  c.layout.img_len = static_cast<int>(s.get_int("layout.img_len"));
  c.layout.prompt_len = static_cast<int>(s.get_int("layout.prompt_len"));
  if (const auto os = s.get_int("layout.output_start"); os >= 0) c.layout.output_start_override = static_cast<int>(os);
  try {
    c.model.check_layout(c.layout);
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("layout.*: ") + e.what());
  }

  SaliencyScoreConfig score;
  score.layout = c.layout;
  const auto layers = s.get_string("saliency.layers");
  score.target_layers = layers == "upper" ? SaliencyScoreConfig::default_layers(c.model.n_layers) : s.get_ints("saliency.layers");
  try {
    score.validate(c.model.n_layers);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config key 'saliency.layers': ") + e.what());
  }
  const auto scope = s.get_string("saliency.scope");
  if (scope == "output_span") {
    score.scope = ScoreScope::output_span;
  } else if (scope == "predecessor") {
    score.scope = ScoreScope::predecessor;
  } else {
    throw ConfigError("config key 'saliency.scope': expected output_span or predecessor");
  }
  const auto agg = s.get_string("saliency.aggregation");
  if (agg == "main_text") {
    c.aggregation = Aggregation::main_text;
  } else if (agg == "appendix_taylor") {
    c.aggregation = Aggregation::appendix_taylor;
  } else {
    throw ConfigError("config key 'saliency.aggregation': expected main_text or appendix_taylor");
  }

  c.sgrs.top_k = static_cast<int>(s.get_int("sgrs.top_k"));
  c.sgrs.max_rounds = static_cast<int>(s.get_int("sgrs.max_rounds"));
  c.sgrs.alpha = s.get_double("sgrs.alpha");
  c.sgrs.window = static_cast<int>(s.get_int("sgrs.window"));
  c.sgrs.temperature = s.get_double("sgrs.temperature");
  c.sgrs.history_on_fallback = s.get_bool("sgrs.history_on_fallback");
  c.sgrs.score_with_locore = s.get_bool("sgrs.score_with_locore");
  c.sgrs.score = score;
  checked("sgrs.top_k", 0, c.sgrs.top_k >= 1, "must be >= 1");
  checked("sgrs.max_rounds", 0, c.sgrs.max_rounds >= 1, "must be >= 1");
  checked("sgrs.window", 0, c.sgrs.window >= 1, "must be >= 1");
  checked("sgrs.alpha", 0, c.sgrs.alpha >= 0.0, "must be >= 0");

  c.locore.beta = s.get_double("locore.beta");
  c.locore.window = static_cast<int>(s.get_int("locore.window"));
  c.locore.renormalize = s.get_bool("locore.renormalize");
  c.locore.layout = c.layout;
  checked("locore.beta", 0, c.locore.beta >= 0.0, "must be >= 0");
  checked("locore.window", 0, c.locore.window >= 1, "must be >= 1");

  try {
    c.mode = parse_mode(s.get_string("decode.mode"));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config key 'decode.mode': ") + e.what());
  }
  c.max_new_tokens = static_cast<int>(s.get_int("decode.max_new"));
  c.decode_first = static_cast<int>(s.get_int("decode.first"));
  c.decode_count = static_cast<int>(s.get_int("decode.count"));
  checked("decode.max_new", 0, c.max_new_tokens >= 1, "must be >= 1");
  checked("decode.first", 0, c.decode_first >= 0, "must be >= 0");
  checked("decode.count", 0, c.decode_count >= 1, "must be >= 1");

  c.train_samples = static_cast<int>(s.get_int("train.samples"));
  c.train_corpus_seed = s.get_u64("train.corpus_seed");
  c.train.epochs = static_cast<int>(s.get_int("train.epochs"));
  c.train.learning_rate = s.get_double("train.lr");
  c.train.batch_size = static_cast<int>(s.get_int("train.batch"));
  c.train.warmup_steps = static_cast<int>(s.get_int("train.warmup"));
  c.train.weight_decay = s.get_double("train.weight_decay");
  c.train.grad_clip = s.get_double("train.clip");
  c.train.jobs = c.jobs;
  checked("train.samples", 0, c.train_samples >= 1, "must be >= 1");
  checked("train.epochs", 0, c.train.epochs >= 0, "must be >= 0");
  checked("train.batch", 0, c.train.batch_size >= 1, "must be >= 1");

  c.samples = static_cast<int>(s.get_int("harness.samples"));
  c.corpus_seed = s.get_u64("harness.corpus_seed");
  c.task.difficulty = static_cast<int>(s.get_int("harness.difficulty"));
  {
    const auto order = s.get_string("harness.order");
    if (order == "slot") {
      c.task.order = task::ListOrder::slot;
    } else if (order == "attribute") {
      c.task.order = task::ListOrder::attribute;
    } else {
      throw ConfigError("config key 'harness.order': expected slot or attribute, got '" + order + "'");
    }
  }
  c.task.object_noise = s.get_double("harness.object_noise");
  c.task.attribute_noise = s.get_double("harness.attribute_noise");
  c.task.layout = c.layout;
  c.bins = static_cast<int>(s.get_int("harness.bins"));
  c.intervention.quantile = s.get_double("harness.quantile");
  c.intervention.factors = s.get_doubles("harness.factors");
  c.intervention.max_per_sample = static_cast<int>(s.get_int("harness.max_per_sample"));
  checked("harness.samples", 0, c.samples >= 1, "must be >= 1");
  checked("harness.difficulty", 0, c.task.difficulty >= 0, "must be >= 0");
  checked("harness.bins", 0, c.bins >= 1, "must be >= 1");
  checked("harness.factors", 0, !c.intervention.factors.empty(), "must list at least one factor");

  c.sweep_alphas = s.get_doubles("sweep.alphas");
  c.sweep_betas = s.get_doubles("sweep.betas");
  for (const auto& m : split_list(s.get_string("sweep.modes"))) {
    try {
      c.sweep_modes.push_back(parse_mode(m));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("config key 'sweep.modes': ") + e.what());
    }
  }
  c.sweep_samples = static_cast<int>(s.get_int("sweep.samples"));
  checked("sweep.alphas", 0, !c.sweep_alphas.empty(), "must be non-empty");
  checked("sweep.betas", 0, !c.sweep_betas.empty(), "must be non-empty");
  checked("sweep.modes", 0, !c.sweep_modes.empty(), "must be non-empty");
  checked("sweep.samples", 0, c.sweep_samples >= 1, "must be >= 1");

  c.map_sample = static_cast<int>(s.get_int("map.sample"));
  c.map_tokens = s.get_ints("map.tokens");
  c.map_layer = static_cast<int>(s.get_int("map.layer"));
  c.map_position = static_cast<int>(s.get_int("map.position"));
  const auto fmt = s.get_string("map.format");
  if (fmt == "dense") {
    c.map_format = MapFormat::dense;
  } else if (fmt == "triples") {
    c.map_format = MapFormat::triples;
  } else {
    throw ConfigError("config key 'map.format': expected dense or triples");
  }
  return c;
}

}  // namespace salient
