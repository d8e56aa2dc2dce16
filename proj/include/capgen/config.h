#ifndef CAPGEN_CONFIG_H_
#define CAPGEN_CONFIG_H_

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include "capgen/decoder.h"
#include "capgen/dmsm.h"
#include "capgen/melm.h"
#include "capgen/mil.h"
#include "capgen/rerank.h"

namespace capgen {

struct PipelineConfig {
  std::string dataset;
  std::string model_dir = "models";
  std::string report_dir = "reports";
  std::optional<uint64_t> seed;  // required by every stochastic stage

  std::array<double, 3> split_ratios = {0.8, 0.1, 0.1};
  int vocab_size = 1000;
  bool add_unk = true;
  int frequent_words = 100;
  std::string closed_class_mode = "fixed";  // fixed | recompute
  std::string score_source = "image";       // image | raw
  std::string decode_split = "test";        // train | val | test

  MilConfig mil;
  MelmConfig melm;
  DecoderConfig decoder;
  DmsmConfig dmsm;
  MertConfig mert;

  std::string vocab_path() const { return model_dir + "/vocab.json"; }
  std::string stats_path() const { return model_dir + "/stats.json"; }
  std::string split_path() const { return model_dir + "/split.json"; }
  std::string mil_path() const { return model_dir + "/mil.json"; }
  std::string detections_path() const { return model_dir + "/detections.jsonl"; }
  std::string melm_path() const { return model_dir + "/melm.json"; }
  std::string dmsm_path() const { return model_dir + "/dmsm.json"; }
  std::string mbest_path(const std::string& split) const {
    return model_dir + "/mbest_" + split + ".jsonl";
  }
  std::string mert_path() const { return model_dir + "/mert.json"; }
  std::string captions_path() const { return report_dir + "/captions.txt"; }
  std::string report_path() const { return report_dir + "/report.txt"; }
  std::string per_image_path() const { return report_dir + "/per_image.tsv"; }
};

// Plain key=value lines; '#' starts a comment. Unknown keys are rejected.
void apply_config_file(PipelineConfig* cfg, const std::string& path);
// CAPGEN_DATASET, CAPGEN_MODEL_DIR and CAPGEN_REPORT_DIR override paths only.
void apply_env_overrides(PipelineConfig* cfg);
// Throws ConfigError naming the offending field.
void validate_config(const PipelineConfig& cfg, const std::string& command);

bool command_needs_seed(const std::string& command);

}  // namespace capgen

#endif  // CAPGEN_CONFIG_H_
