#pragma once
// Run configuration: a flat key=value file with dotted namespaces
// (model.d_model=64). Every key has a default; later sources override
// earlier ones (defaults < file < command line).

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "salient/harness.hpp"
#include "salient/locore.hpp"
#include "salient/nanomodel.hpp"
#include "salient/sgrs.hpp"
#include "salient/task.hpp"

namespace salient {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

// All recognized keys in display order.
const std::vector<ConfigKey>& config_keys();

class ConfigStore {
 public:
  ConfigStore();

  // Throws ConfigError naming the key when it is unknown.
  void set(const std::string& key, const std::string& value);
  // Lines are "key = value"; '#' starts a comment. Throws ConfigError with
  // the line number on malformed lines and IoError when unreadable.
  void load_file(const std::filesystem::path& path);
  void parse(const std::string& text, const std::string& origin = "<config>");

  const std::string& raw(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  long long get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<int> get_ints(const std::string& key) const;

  // Canonical "key=value" dump of every key, sorted as in config_keys().
  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
};

struct RunConfig {
  ModelConfig model;
  TokenLayout layout;
  SgrsConfig sgrs;
  LocoreConfig locore;
  Aggregation aggregation = Aggregation::main_text;
  task::TaskConfig task;

  DecodeMode mode = DecodeMode::baseline;
  int max_new_tokens = 40;
  int decode_first = 0;
  int decode_count = 1;

  TrainOptions train;
  int train_samples = 6000;
  std::uint64_t train_corpus_seed = 1000;

  int samples = 2000;
  std::uint64_t corpus_seed = 2024;
  int bins = 10;
  harness::InterventionOptions intervention;
  std::vector<double> sweep_alphas;
  std::vector<double> sweep_betas;
  std::vector<DecodeMode> sweep_modes;
  int sweep_samples = 500;

  int map_layer = -1;
  int map_position = -1;
  int map_sample = 0;
  MapFormat map_format = MapFormat::dense;
  std::vector<int> map_tokens;

  std::filesystem::path checkpoint;
  std::filesystem::path out = "out";
  std::uint64_t seed = 7;
  int jobs = 1;

  DecodeOptions decode_options() const;
};

// Validates and converts; errors name the offending key.
RunConfig to_run_config(const ConfigStore& store);

}  // namespace salient
