// salient: train, decode, map and analysis commands over one flat config.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "salient/checks.hpp"
#include "salient/config.hpp"
#include "salient/harness.hpp"
#include "salient/io.hpp"
#include "salient/reports.hpp"

namespace fs = std::filesystem;
using namespace salient;

namespace {

enum Exit { kOk = 0, kVerifyFailed = 1, kConfigError = 2, kIoError = 3 };

std::string key_listing() {
  std::string out = "Config keys (override with --<key> VALUE or --<key>=VALUE):\n";
  for (const auto& k : config_keys()) {
    std::string line = "  " + k.name + " = " + k.default_value;
    if (line.size() < 44) line.resize(44, ' ');
    out += line + "  " + k.help + "\n";
  }
  return out;
}

// Turns leftover "--ns.key value" / "--ns.key=value" arguments into overrides.
void apply_extras(ConfigStore& store, const std::vector<std::string>& extras) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + arg + "'");
    std::string key = arg.substr(2);
    std::string value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.resize(eq);
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("config key '" + key + "': missing value");
      value = extras[++i];
    }
    store.set(key, value);
  }
}

std::vector<task::SyntheticSample> eval_corpus(const RunConfig& c, int n) {
  return task::gen_corpus(c.corpus_seed, n, c.task);
}

std::vector<harness::DecodedSample> decode_all(const Model& model, const RunConfig& c,
                                                const std::vector<task::SyntheticSample>& corpus) {
  return harness::decode_corpus(model, corpus, c.layout, c.decode_options(), c.seed, c.jobs);
}

void write(const fs::path& path, const std::string& text) {
  write_file_atomic(path, text);
  std::printf("wrote %s\n", path.string().c_str());
}

int cmd_train(const RunConfig& c) {
  auto corpus = task::gen_corpus(c.train_corpus_seed, c.train_samples, c.task);
  std::vector<TrainingExample> data;
  data.reserve(corpus.size());
  for (const auto& s : corpus) data.push_back(task::to_training_example(s, c.layout));
  TrainOptions opts = c.train;
  opts.jobs = c.jobs;
  TrainReport report;
  const auto ckpt = train_toy(Checkpoint::initialize(c.model), data, opts, &report);
  const auto path = c.out / "model.nmdl";
  save_checkpoint(ckpt, path);
  std::printf("wrote %s\n", path.string().c_str());

  const Model model(ckpt);
  const std::vector<task::SyntheticSample> held(corpus.begin(), corpus.begin() + std::min<std::size_t>(200, corpus.size()));
  nlohmann::ordered_json j;
  j["seed"] = c.model.rng_seed;
  j["corpus_seed"] = c.train_corpus_seed;
  j["samples"] = c.train_samples;
  j["initial_loss"] = report.initial_loss;
  j["epoch_loss"] = report.epoch_loss;
  j["greedy_token_accuracy"] = harness::greedy_token_accuracy(model, held, c.layout, c.jobs);
  write(c.out / "train.json", j.dump(2) + "\n");
  return kOk;
}

int cmd_decode(const RunConfig& c) {
  const Model model(load_checkpoint(c.checkpoint));
  auto corpus = eval_corpus(c, c.decode_first + c.decode_count);
  corpus.erase(corpus.begin(), corpus.begin() + c.decode_first);
  const auto decoded = decode_all(model, c, corpus);
  const auto text = reports::outputs_txt(decoded, c.seed);
  std::fputs(text.c_str(), stdout);
  write(c.out / "outputs.txt", text);
  std::string traces;
  long tokens = 0;
  double total_ms = 0.0;
  for (const auto& d : decoded) {
    traces += trace_to_jsonl(d.trace, harness::sample_seed(c.seed, d.id), c.mode);
    tokens += static_cast<long>(d.output.size());
    total_ms += d.elapsed_ms;
  }
  write(c.out / "trace.jsonl", traces);
  char line[256];
  std::snprintf(line, sizeof line, "%s,%ld,%.6g,%.6g\n", to_string(c.mode), tokens, total_ms,
                tokens > 0 ? total_ms / tokens : 0.0);
  write(c.out / "latency.csv", "# seed=" + std::to_string(c.seed) + "\nmode,tokens,total_ms,ms_per_token\n" + line);
  return kOk;
}

int cmd_map(const RunConfig& c) {
  const Model model(load_checkpoint(c.checkpoint));
  std::vector<TokenId> tokens;
  if (!c.map_tokens.empty()) {
    tokens.assign(c.map_tokens.begin(), c.map_tokens.end());
  } else {
    const auto corpus = eval_corpus(c, c.map_sample + 1);
    const auto& sample = corpus.back();
    const auto decoded = decode_all(model, c, {sample});
    tokens = sample.prefix(c.layout);
    tokens.insert(tokens.end(), decoded[0].output.begin(), decoded[0].output.end());
    tokens.resize(std::min<std::size_t>(tokens.size(), model.config().max_seq_len));
  }
  const int n = static_cast<int>(tokens.size());
  if (n == 0) throw ConfigError("config key 'map.tokens': empty sequence");
  const int position = c.map_position >= 0 ? c.map_position : std::max(n - 2, 0);
  if (position >= n)
    throw ConfigError("config key 'map.position': " + std::to_string(position) + " outside sequence of length " +
                      std::to_string(n));
  const int layer = c.map_layer >= 0 ? c.map_layer : model.config().n_layers - 1;
  if (layer >= model.config().n_layers) throw ConfigError("config key 'map.layer': no such layer");

  auto pass = model.forward(tokens);
  TokenId target = 0;
  if (position + 1 < n) {
    target = tokens[position + 1];
  } else {
    const auto row = pass.logits_at(position);
    target = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  model.backward_attention(pass, position, target);
  const auto stack = build_stack(pass.tape(), c.aggregation);
  const auto csv = c.out / "map.csv";
  export_map(stack, layer, c.layout, csv, c.map_format, c.seed);
  std::printf("wrote %s\n", csv.string().c_str());
  write(c.out / "map.svg", map_svg(stack.layers[layer], c.layout));
  return kOk;
}

struct Analysis {
  std::vector<task::SyntheticSample> corpus;
  std::vector<harness::DecodedSample> decoded;
  std::vector<harness::TokenLabel> labels;
};

Analysis analyse(const Model& model, const RunConfig& c) {
  Analysis a;
  a.corpus = eval_corpus(c, c.samples);
  a.decoded = decode_all(model, c, a.corpus);
  a.labels = harness::label_corpus(model, a.corpus, c.layout, a.decoded, c.sgrs.score, c.jobs);
  return a;
}

int cmd_stats(const RunConfig& c, bool bins_only) {
  const Model model(load_checkpoint(c.checkpoint));
  const auto a = analyse(model, c);
  auto report = harness::stats_saliency(a.labels);
  harness::bin_analysis(a.labels, report, c.bins);
  if (!bins_only) {
    write(c.out / "labels.csv", reports::labels_csv(a.labels, c.seed));
    write(c.out / "stats.json", reports::stats_json(report, c.seed, c.samples));
    std::printf("correct %.4f (n=%d)  hallucinated %.4f (n=%d)  welch p_greater %.3g\n", report.correct.mean,
                report.correct.count, report.hallucinated.mean, report.hallucinated.count, report.welch.p_greater);
  }
  write(c.out / "bins.csv", reports::bins_csv(report, c.seed));
  std::printf("spearman(bin, rate) %.3f\n", report.spearman);
  return kOk;
}

int cmd_intervene(const RunConfig& c) {
  const Model model(load_checkpoint(c.checkpoint));
  const auto a = analyse(model, c);
  const auto report =
      harness::intervention(model, a.corpus, c.layout, a.decoded, a.labels, c.decode_options(), c.seed,
                            c.intervention, c.jobs);
  const auto text = reports::intervention_csv(report, c.seed);
  std::fputs(text.c_str(), stdout);
  write(c.out / "intervention.csv", text);
  return kOk;
}

int cmd_sweep(const RunConfig& c) {
  const Model model(load_checkpoint(c.checkpoint));
  const auto corpus = eval_corpus(c, c.sweep_samples);
  const auto cells = harness::sweep(model, corpus, c.layout, c.decode_options(), c.sweep_alphas, c.sweep_betas,
                                    c.sweep_modes, c.seed, c.jobs);
  const auto text = reports::sweep_csv(cells, c.seed);
  std::fputs(text.c_str(), stdout);
  write(c.out / "sweep.csv", text);
  write(c.out / "latency.csv", reports::latency_csv(cells, c.seed));
  return kOk;
}

int cmd_verify(const RunConfig& c) {
  const Model model(load_checkpoint(c.checkpoint));
  const auto corpus = eval_corpus(c, 100);
  std::vector<checks::Result> results;
  results.push_back(checks::gradient_fidelity(c.seed));
  results.push_back(checks::saliency_invariants(c.seed));
  results.push_back(checks::aggregation_divergence());
  results.push_back(checks::rejection_monotone(c.seed));
  results.push_back(checks::sgrs_degeneracy(model, corpus, c.layout, c.decode_options(), c.jobs));
  const std::vector<task::SyntheticSample> few(corpus.begin(), corpus.begin() + 20);
  results.push_back(checks::locore_locality(model, few, c.layout, c.locore.beta > 0 ? c.locore.beta : 0.15,
                                            c.locore.window));

  auto opts = c.decode_options();
  opts.mode = DecodeMode::sgrs_locore;
  const auto once = harness::decode_corpus(model, few, c.layout, opts, c.seed, c.jobs);
  const auto twice = harness::decode_corpus(model, few, c.layout, opts, c.seed, std::max(2, c.jobs));
  results.push_back(checks::acceptance_soundness(once));
  bool same = true;
  for (std::size_t i = 0; i < once.size(); ++i) same = same && once[i].output == twice[i].output;
  results.push_back({"decode reproducibility", same, "sgrs+locore on 20 samples, serial vs 2 workers"});

  auto base = c.decode_options();
  base.mode = DecodeMode::baseline;
  const auto decoded = harness::decode_corpus(model, few, c.layout, base, c.seed, c.jobs);
  const auto labels = harness::label_corpus(model, few, c.layout, decoded, c.sgrs.score, c.jobs);
  harness::InterventionOptions io = c.intervention;
  io.factors = {1.0};
  const auto ir = harness::intervention(model, few, c.layout, decoded, labels, base, c.seed, io, c.jobs);
  results.push_back({"intervention identity", ir.identity_exact,
                     "r=1 re-decodes of " + std::to_string(ir.eligible) + " events match the originals"});

  int failed = 0;
  for (const auto& r : results) {
    std::printf("%s  %s: %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    if (!r.pass) ++failed;
  }
  std::printf("%d/%zu checks passed\n", static_cast<int>(results.size()) - failed, results.size());
  return failed == 0 ? kOk : kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Saliency analysis and saliency-guided decoding on a toy grounded-captioning model"};
  app.footer(key_listing());
  app.require_subcommand(1);
  app.allow_extras();
  std::string config_path;
  std::string seed, jobs, out;
  app.add_option("--config", config_path, "config file (key = value lines)");
  app.add_option("--seed", seed, "alias for --run.seed");
  app.add_option("--jobs", jobs, "alias for --run.jobs");
  app.add_option("--out", out, "alias for --run.out");

  struct Sub {
    const char* name;
    const char* help;
  };
  const std::vector<Sub> subs = {
      {"train", "train a checkpoint on the synthetic task"},
      {"decode", "decode corpus samples; writes outputs, traces and latency"},
      {"map", "export one layer's saliency map as CSV + SVG"},
      {"stats", "token labels and correct vs hallucinated saliency"},
      {"bins", "hallucination rate by saliency bin"},
      {"intervene", "decay attention to high-saliency tokens and re-decode"},
      {"sweep", "hallucination and recall over the mode/alpha/beta grid"},
      {"verify", "run the invariant suite; exit 1 on any failure"},
  };
  std::string mode, max_new, layer, position;
  for (const auto& s : subs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    sub->allow_extras();
    sub->fallthrough();
    sub->footer("Any config key may be given as --<key> VALUE; see salient --help.");
    if (std::string(s.name) == "decode") {
      sub->add_option("--mode", mode, "alias for --decode.mode");
      sub->add_option("--max-new", max_new, "alias for --decode.max_new");
    }
    if (std::string(s.name) == "map") {
      sub->add_option("--layer", layer, "alias for --map.layer");
      sub->add_option("--position", position, "alias for --map.position");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    ConfigStore store;
    if (!config_path.empty()) store.load_file(config_path);
    std::vector<std::string> extras = app.remaining();
    for (auto* sub : app.get_subcommands()) {
      const auto rest = sub->remaining();
      extras.insert(extras.end(), rest.begin(), rest.end());
    }
    apply_extras(store, extras);
    if (!seed.empty()) store.set("run.seed", seed);
    if (!jobs.empty()) store.set("run.jobs", jobs);
    if (!out.empty()) store.set("run.out", out);
    if (!mode.empty()) store.set("decode.mode", mode);
    if (!max_new.empty()) store.set("decode.max_new", max_new);
    if (!layer.empty()) store.set("map.layer", layer);
    if (!position.empty()) store.set("map.position", position);
    const RunConfig c = to_run_config(store);
    fs::create_directories(c.out);
    write_file_atomic(c.out / "config.txt", store.dump());

    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "train") return cmd_train(c);
    if (cmd == "decode") return cmd_decode(c);
    if (cmd == "map") return cmd_map(c);
    if (cmd == "stats") return cmd_stats(c, false);
    if (cmd == "bins") return cmd_stats(c, true);
    if (cmd == "intervene") return cmd_intervene(c);
    if (cmd == "sweep") return cmd_sweep(c);
    if (cmd == "verify") return cmd_verify(c);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIoError;
  }
  return kOk;
}
