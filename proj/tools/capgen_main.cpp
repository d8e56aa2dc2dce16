#include <cstring>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "capgen/error.h"
#include "capgen/pipeline.h"

namespace {

using capgen::PipelineConfig;

void add_common_options(CLI::App* cmd, PipelineConfig* cfg) {
  cmd->add_option("--dataset", cfg->dataset, "Dataset file (JSON lines with a header record)");
  cmd->add_option("--model-dir", cfg->model_dir, "Directory for model artifacts");
  cmd->add_option("--report-dir", cfg->report_dir, "Directory for reports and captions");
  cmd->add_option("--seed", cfg->seed, "Seed driving every stochastic stage");
  cmd->add_option("--split-train", cfg->split_ratios[0], "Train split ratio");
  cmd->add_option("--split-val", cfg->split_ratios[1], "Validation split ratio");
  cmd->add_option("--split-test", cfg->split_ratios[2], "Test split ratio");
  cmd->add_option("--vocab-size", cfg->vocab_size, "Vocabulary size");
  cmd->add_option("--add-unk", cfg->add_unk, "Reserve an <unk> slot in the vocabulary");
  cmd->add_option("--frequent-words", cfg->frequent_words, "Frequent-word count used by the decoder");
  cmd->add_option("--closed-class-mode", cfg->closed_class_mode, "fixed | recompute");
  cmd->add_option("--score-source", cfg->score_source, "Detector score fed to the LM: image | raw");
  cmd->add_option("--split", cfg->decode_split, "Split to decode/caption/evaluate: train | val | test");
  cmd->add_option("--mil-lr", cfg->mil.learning_rate, "MIL learning rate");
  cmd->add_option("--mil-epochs", cfg->mil.epochs, "MIL training epochs");
  cmd->add_option("--mil-tau", cfg->mil.tau, "Detection precision threshold");
  cmd->add_option("--mil-threads", cfg->mil.threads, "Concurrent word detectors during training");
  cmd->add_option("--lm-hash-bits", cfg->melm.hash_bits, "log2 of the feature hash table size");
  cmd->add_option("--lm-ngram-order", cfg->melm.n_max, "Maximum n-gram order (1..4)");
  cmd->add_option("--lm-nce-samples", cfg->melm.nce_samples, "Contrastive samples per position");
  cmd->add_option("--lm-lr", cfg->melm.learning_rate, "LM learning rate");
  cmd->add_option("--lm-epochs", cfg->melm.epochs, "LM training epochs");
  cmd->add_option("--lm-use-score", cfg->melm.use_score_feature, "Enable the detector Score feature");
  cmd->add_option("--beam-width", cfg->decoder.beam_width, "Beam width k");
  cmd->add_option("--max-length", cfg->decoder.max_length, "Maximum sentence length L");
  cmd->add_option("--m-best", cfg->decoder.m_best, "M-best list size");
  cmd->add_option("--t-cap", cfg->decoder.t_cap, "Cap on the coverage target T");
  cmd->add_option("--dmsm-dim", cfg->dmsm.d_sem, "Shared semantic dimension");
  cmd->add_option("--dmsm-gamma", cfg->dmsm.gamma, "Posterior smoothing factor");
  cmd->add_option("--dmsm-negatives", cfg->dmsm.negatives, "Negative captions per pair");
  cmd->add_option("--dmsm-lr", cfg->dmsm.learning_rate, "DMSM learning rate");
  cmd->add_option("--dmsm-epochs", cfg->dmsm.epochs, "DMSM training epochs");
  cmd->add_option("--mert-restarts", cfg->mert.restarts, "MERT random restarts");
}

}  // namespace

int main(int argc, char** argv) {
  PipelineConfig cfg;

  // A config file forms the base layer, the environment overrides paths,
  // explicit flags override everything.
  try {
    for (int i = 1; i + 1 < argc; ++i) {
      if (std::strcmp(argv[i], "--config") == 0) {
        capgen::apply_config_file(&cfg, argv[i + 1]);
      }
    }
    capgen::apply_env_overrides(&cfg);
  } catch (const capgen::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  CLI::App app{"capgen: train word detectors, a caption language model and a multimodal "
               "similarity model from captioned images, then decode, re-rank and evaluate"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "Key=value config file (already applied)");

  static const char* kCommands[] = {"prepare",   "train-mil", "detect",  "train-lm", "train-dmsm",
                                    "decode",    "mert",      "caption", "evaluate"};
  static const char* kHelp[] = {
      "Split the dataset and build the vocabulary and corpus statistics",
      "Train noisy-OR word detectors and calibrate them on the validation split",
      "Write calibrated word detections for every image",
      "Train the maximum-entropy language model with NCE",
      "Train the deep multimodal similarity model",
      "Beam-search the chosen split into M-best lists",
      "Tune re-ranking weights on the validation M-best lists",
      "Detect, decode and re-rank end to end, writing one caption per image",
      "Score captions against references (BLEU, simplified METEOR, PPLX)"};

  for (size_t i = 0; i < sizeof(kCommands) / sizeof(kCommands[0]); ++i) {
    CLI::App* sub = app.add_subcommand(kCommands[i], kHelp[i]);
    add_common_options(sub, &cfg);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  std::string command = app.get_subcommands().front()->get_name();
  try {
    capgen::pipeline::run(command, cfg);
  } catch (const capgen::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const capgen::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const capgen::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
