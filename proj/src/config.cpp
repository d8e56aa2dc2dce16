#include "capgen/config.h"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "capgen/error.h"

namespace capgen {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out;
  in >> out;
  if (in.fail() || !in.eof()) throw ConfigError("config field " + key + ": bad value \"" + value + "\"");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config field " + key + ": bad boolean \"" + value + "\"");
}

void apply_key(PipelineConfig* cfg, const std::string& key, const std::string& value) {
  if (key == "dataset") cfg->dataset = value;
  else if (key == "model_dir") cfg->model_dir = value;
  else if (key == "report_dir") cfg->report_dir = value;
  else if (key == "seed") cfg->seed = parse_number<uint64_t>(key, value);
  else if (key == "split_train") cfg->split_ratios[0] = parse_number<double>(key, value);
  else if (key == "split_val") cfg->split_ratios[1] = parse_number<double>(key, value);
  else if (key == "split_test") cfg->split_ratios[2] = parse_number<double>(key, value);
  else if (key == "vocab_size") cfg->vocab_size = parse_number<int>(key, value);
  else if (key == "add_unk") cfg->add_unk = parse_bool(key, value);
  else if (key == "frequent_words") cfg->frequent_words = parse_number<int>(key, value);
  else if (key == "closed_class_mode") cfg->closed_class_mode = value;
  else if (key == "score_source") cfg->score_source = value;
  else if (key == "decode_split") cfg->decode_split = value;
  else if (key == "mil.lr") cfg->mil.learning_rate = parse_number<double>(key, value);
  else if (key == "mil.epochs") cfg->mil.epochs = parse_number<int>(key, value);
  else if (key == "mil.tau") cfg->mil.tau = parse_number<double>(key, value);
  else if (key == "mil.threads") cfg->mil.threads = parse_number<int>(key, value);
  else if (key == "melm.hash_bits") cfg->melm.hash_bits = parse_number<int>(key, value);
  else if (key == "melm.n_max") cfg->melm.n_max = parse_number<int>(key, value);
  else if (key == "melm.nce_samples") cfg->melm.nce_samples = parse_number<int>(key, value);
  else if (key == "melm.lr") cfg->melm.learning_rate = parse_number<double>(key, value);
  else if (key == "melm.epochs") cfg->melm.epochs = parse_number<int>(key, value);
  else if (key == "melm.use_score") cfg->melm.use_score_feature = parse_bool(key, value);
  else if (key == "decoder.beam_width") cfg->decoder.beam_width = parse_number<int>(key, value);
  else if (key == "decoder.max_length") cfg->decoder.max_length = parse_number<int>(key, value);
  else if (key == "decoder.m_best") cfg->decoder.m_best = parse_number<int>(key, value);
  else if (key == "decoder.t_cap") cfg->decoder.t_cap = parse_number<int>(key, value);
  else if (key == "dmsm.d_sem") cfg->dmsm.d_sem = parse_number<int>(key, value);
  else if (key == "dmsm.gamma") cfg->dmsm.gamma = parse_number<double>(key, value);
  else if (key == "dmsm.negatives") cfg->dmsm.negatives = parse_number<int>(key, value);
  else if (key == "dmsm.lr") cfg->dmsm.learning_rate = parse_number<double>(key, value);
  else if (key == "dmsm.epochs") cfg->dmsm.epochs = parse_number<int>(key, value);
  else if (key == "dmsm.trigram_overflow") cfg->dmsm.trigram_overflow = parse_number<int>(key, value);
  else if (key == "mert.restarts") cfg->mert.restarts = parse_number<int>(key, value);
  else throw ConfigError("unknown config key: " + key);
}

}  // namespace

void apply_config_file(PipelineConfig* cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    apply_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void apply_env_overrides(PipelineConfig* cfg) {
  if (const char* v = std::getenv("CAPGEN_DATASET")) cfg->dataset = v;
  if (const char* v = std::getenv("CAPGEN_MODEL_DIR")) cfg->model_dir = v;
  if (const char* v = std::getenv("CAPGEN_REPORT_DIR")) cfg->report_dir = v;
}

bool command_needs_seed(const std::string& command) {
  return command == "prepare" || command == "train-mil" || command == "train-lm" ||
         command == "train-dmsm" || command == "mert" || command == "evaluate";
}

void validate_config(const PipelineConfig& cfg, const std::string& command) {
  if (command_needs_seed(command) && !cfg.seed) {
    throw ConfigError("config field seed: required for command " + command);
  }
  if (cfg.dataset.empty()) throw ConfigError("config field dataset: required");
  if (cfg.vocab_size < 1) throw ConfigError("config field vocab_size: must be >= 1");
  if (cfg.frequent_words < 1) throw ConfigError("config field frequent_words: must be >= 1");
  for (double r : cfg.split_ratios) {
    if (r < 0.0) throw ConfigError("config field split_*: ratios must be non-negative");
  }
  if (!(cfg.split_ratios[0] + cfg.split_ratios[1] + cfg.split_ratios[2] > 0.0)) {
    throw ConfigError("config field split_*: ratios must sum to a positive value");
  }
  if (cfg.closed_class_mode != "fixed" && cfg.closed_class_mode != "recompute") {
    throw ConfigError("config field closed_class_mode: must be fixed or recompute");
  }
  if (cfg.score_source != "image" && cfg.score_source != "raw") {
    throw ConfigError("config field score_source: must be image or raw");
  }
  if (cfg.decode_split != "train" && cfg.decode_split != "val" && cfg.decode_split != "test") {
    throw ConfigError("config field decode_split: must be train, val or test");
  }
  if (cfg.mil.epochs < 0) throw ConfigError("config field mil.epochs: must be >= 0");
  if (cfg.mil.tau < 0.0 || cfg.mil.tau > 1.0) throw ConfigError("config field mil.tau: must be in [0,1]");
  if (cfg.mil.threads < 1) throw ConfigError("config field mil.threads: must be >= 1");
  if (cfg.melm.hash_bits < 4 || cfg.melm.hash_bits > 30) {
    throw ConfigError("config field melm.hash_bits: must be in [4,30]");
  }
  if (cfg.melm.n_max < 1 || cfg.melm.n_max > 4) throw ConfigError("config field melm.n_max: must be in [1,4]");
  if (cfg.melm.nce_samples < 1) throw ConfigError("config field melm.nce_samples: must be >= 1");
  if (cfg.melm.epochs < 0) throw ConfigError("config field melm.epochs: must be >= 0");
  if (cfg.decoder.beam_width < 1) throw ConfigError("config field decoder.beam_width: must be >= 1");
  if (cfg.decoder.max_length < 1) throw ConfigError("config field decoder.max_length: must be >= 1");
  if (cfg.decoder.m_best < 1) throw ConfigError("config field decoder.m_best: must be >= 1");
  if (cfg.decoder.t_cap < 0) throw ConfigError("config field decoder.t_cap: must be >= 0");
  if (cfg.dmsm.d_sem < 1) throw ConfigError("config field dmsm.d_sem: must be >= 1");
  if (cfg.dmsm.gamma <= 0.0) throw ConfigError("config field dmsm.gamma: must be > 0");
  if (cfg.dmsm.negatives < 1) throw ConfigError("config field dmsm.negatives: must be >= 1");
  if (cfg.dmsm.epochs < 0) throw ConfigError("config field dmsm.epochs: must be >= 0");
  if (cfg.dmsm.trigram_overflow < 0) throw ConfigError("config field dmsm.trigram_overflow: must be >= 0");
  if (cfg.mert.restarts < 0) throw ConfigError("config field mert.restarts: must be >= 0");
}

}  // namespace capgen
