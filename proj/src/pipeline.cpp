#include "capgen/pipeline.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>

#include "capgen/error.h"
#include "capgen/metrics.h"
#include "capgen/serialize.h"

namespace capgen {
namespace pipeline {

namespace {

namespace fs = std::filesystem;

void require_artifact(const std::string& path) {
  if (!fs::exists(path)) throw DataError("missing artifact: " + path);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory: " + dir);
}

Dataset load_prepared_dataset(const PipelineConfig& cfg) {
  Dataset ds = load_dataset(cfg.dataset);
  require_artifact(cfg.split_path());
  load_split(&ds, cfg.split_path());
  return ds;
}

std::shared_ptr<const Vocabulary> load_vocab_ptr(const PipelineConfig& cfg) {
  require_artifact(cfg.vocab_path());
  return std::make_shared<Vocabulary>(load_vocab(cfg.vocab_path()).vocab);
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  return Split::kTest;
}

ScoreSource parse_score_source(const PipelineConfig& cfg) {
  return cfg.score_source == "raw" ? ScoreSource::kRawScore : ScoreSource::kImageProb;
}

std::map<std::string, const DetectedWordSet*> index_detections(
    const std::vector<DetectedWordSet>& detections) {
  std::map<std::string, const DetectedWordSet*> out;
  for (const auto& d : detections) out[d.image_id] = &d;
  return out;
}

const DetectedWordSet& detections_for(const std::map<std::string, const DetectedWordSet*>& index,
                                      const std::string& image_id) {
  auto it = index.find(image_id);
  if (it == index.end()) throw DataError("no detections recorded for image " + image_id);
  return *it->second;
}

// Up to 4 references per image, chosen deterministically from the seed.
RefSet pick_references(const DatasetEntry& entry, Rng& rng) {
  std::vector<int> order(entry.captions.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  if (order.size() > 4) rng.shuffle(order);
  RefSet refs;
  for (size_t i = 0; i < order.size() && i < 4; ++i) {
    refs.push_back(entry.captions[static_cast<size_t>(order[i])].tokens);
  }
  return refs;
}

struct RerankModels {
  std::optional<DmsmModel> dmsm;
  MertWeights weights{};
};

RerankModels load_rerank_models(const PipelineConfig& cfg) {
  RerankModels out;
  if (fs::exists(cfg.dmsm_path())) out.dmsm = load_dmsm(cfg.dmsm_path());
  if (fs::exists(cfg.mert_path())) {
    out.weights = load_mert_weights(cfg.mert_path());
  } else {
    out.weights[0] = 1.0;  // fall back to ranking by log-likelihood
  }
  return out;
}

MBestList decode_image(const DetectedWordSet& dets, const MelmModel& lm, const CorpusStats& stats,
                       const PipelineConfig& cfg) {
  std::vector<RemainingWord> remaining = to_remaining(dets, lm.vocab(), parse_score_source(cfg));
  std::vector<CompletedSentence> completed = beam_search(remaining, lm, stats, cfg.decoder);
  int t_init = std::min(static_cast<int>(remaining.size()), cfg.decoder.t_cap);
  return m_best(completed, cfg.decoder.m_best, t_init, lm.vocab());
}

std::string select_caption(const MBestList& list, const DatasetEntry& entry,
                           const RerankModels& models, const Vocabulary& vocab) {
  std::vector<FeatureVector> features;
  std::vector<const MBestEntry*> kept;
  for (const auto& e : list.entries) {
    if (e.tokens.empty()) continue;  // rerank features need a non-empty body
    double dmsm_score = 0.0;
    if (models.dmsm && entry.image_feature.size() > 0) {
      std::vector<std::string> words;
      for (int t : e.tokens) words.push_back(vocab.word(t));
      dmsm_score = models.dmsm->score(entry.image_feature, words);
    }
    features.push_back(sentence_features(e.log_score, static_cast<int>(e.tokens.size()), e.rank,
                                         e.coverage, dmsm_score));
    kept.push_back(&e);
  }
  if (kept.empty()) return "";
  int best = rerank_select(features, models.weights);
  return sentence_string(kept[static_cast<size_t>(best)]->tokens, vocab);
}

}  // namespace

void prepare(const PipelineConfig& cfg) {
  ensure_dir(cfg.model_dir);
  Dataset ds = load_dataset(cfg.dataset);
  split_dataset(ds, cfg.split_ratios, *cfg.seed);

  std::vector<Caption> train_captions = ds.captions(Split::kTrain);
  VocabBuild vb = build_vocabulary(train_captions, cfg.vocab_size);
  if (cfg.add_unk) vb.vocab = vb.vocab.with_unk();
  ClosedClassMode mode = cfg.closed_class_mode == "recompute" ? ClosedClassMode::kRecompute
                                                              : ClosedClassMode::kFixed;
  CorpusStats stats = build_stats(train_captions, vb.vocab, cfg.frequent_words, mode);

  save_split(ds, cfg.split_path());
  save_vocab(vb, cfg.vocab_path());
  save_stats(stats, cfg.stats_path());
  std::cout << "prepare: " << ds.entries.size() << " images, vocabulary " << vb.vocab.size()
            << " words covering " << vb.coverage << " of token occurrences\n";
}

void train_mil(const PipelineConfig& cfg) {
  ensure_dir(cfg.model_dir);
  Dataset ds = load_prepared_dataset(cfg);
  auto vocab = load_vocab_ptr(cfg);

  std::vector<RegionBag> train_bags = make_bags(ds, ds.indices(Split::kTrain), *vocab);
  std::vector<RegionBag> val_bags = make_bags(ds, ds.indices(Split::kVal), *vocab);

  MilConfig mil_cfg = cfg.mil;
  mil_cfg.seed = *cfg.seed;
  MilModel model = train_mil(train_bags, vocab, mil_cfg);

  std::vector<std::string> train_ids;
  for (const auto& b : train_bags) train_ids.push_back(b.image_id);
  CalibrationTable calibration = calibrate(model, val_bags, train_ids, cfg.mil.tau);

  save_mil(model, calibration, cfg.mil_path());
  std::cout << "train-mil: " << model.word_count() - static_cast<int>(model.skipped_words.size())
            << " detectors trained, " << model.skipped_words.size() << " words skipped\n";
}

void detect(const PipelineConfig& cfg) {
  Dataset ds = load_prepared_dataset(cfg);
  auto vocab = load_vocab_ptr(cfg);
  require_artifact(cfg.stats_path());
  CorpusStats stats = load_stats(cfg.stats_path(), *vocab);
  require_artifact(cfg.mil_path());
  MilArtifact mil = load_mil(cfg.mil_path(), vocab);

  std::vector<int> all(ds.entries.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  std::vector<RegionBag> bags = make_bags(ds, all, *vocab);

  std::vector<DetectedWordSet> detections;
  detections.reserve(bags.size());
  for (const auto& bag : bags) {
    detections.push_back(detect_words(mil.model, mil.calibration, bag, stats));
  }
  save_detections(detections, cfg.detections_path());
  std::cout << "detect: scored " << detections.size() << " images\n";
}

void train_lm(const PipelineConfig& cfg) {
  ensure_dir(cfg.model_dir);
  Dataset ds = load_prepared_dataset(cfg);
  auto vocab = load_vocab_ptr(cfg);
  require_artifact(cfg.detections_path());
  auto det_index = index_detections(load_detections(cfg.detections_path()));

  // The LM conditions every training caption on the detections of its image.
  std::vector<LmExample> examples;
  ScoreSource source = parse_score_source(cfg);
  std::vector<DetectedWordSet> det_store;
  for (int i : ds.indices(Split::kTrain)) {
    const DatasetEntry& e = ds.entries[static_cast<size_t>(i)];
    const DetectedWordSet& dets = detections_for(det_index, e.image_id);
    for (const auto& cap : e.captions) {
      examples.push_back(make_lm_example(cap, dets, *vocab, source));
    }
  }

  MelmModel model(vocab, cfg.melm);
  NceTrainReport report = model.train_nce(examples, *cfg.seed);
  save_melm(model, cfg.melm_path());
  std::cout << "train-lm: " << examples.size() << " captions, " << report.distinct_keys
            << " feature keys in " << report.used_slots
            << " slots (collision rate " << report.collision_rate << ")\n";
  for (size_t e = 0; e < report.epoch_objectives.size(); ++e) {
    std::cout << "  epoch " << e + 1 << " nce objective " << report.epoch_objectives[e] << "\n";
  }
}

void train_dmsm(const PipelineConfig& cfg) {
  ensure_dir(cfg.model_dir);
  Dataset ds = load_prepared_dataset(cfg);
  auto vocab = load_vocab_ptr(cfg);
  if (ds.image_dim <= 0) throw DataError("train-dmsm: dataset declares no image_feature dimension");

  std::vector<DmsmPair> pairs;
  for (int i : ds.indices(Split::kTrain)) {
    const DatasetEntry& e = ds.entries[static_cast<size_t>(i)];
    if (e.image_feature.size() == 0) {
      throw DataError("train-dmsm: image " + e.image_id + " has no image_feature");
    }
    for (const auto& cap : e.captions) pairs.push_back({e.image_feature, cap.tokens});
  }

  DmsmModel model(*vocab, ds.image_dim, cfg.dmsm, *cfg.seed);
  model.train(pairs, *cfg.seed);
  save_dmsm(model, cfg.dmsm_path());
  std::cout << "train-dmsm: " << pairs.size() << " pairs";
  if (!model.epoch_losses.empty()) {
    std::cout << ", loss " << model.epoch_losses.front() << " -> " << model.epoch_losses.back();
  }
  std::cout << "\n";
}

void decode(const PipelineConfig& cfg) {
  Dataset ds = load_prepared_dataset(cfg);
  auto vocab = load_vocab_ptr(cfg);
  require_artifact(cfg.stats_path());
  CorpusStats stats = load_stats(cfg.stats_path(), *vocab);
  require_artifact(cfg.melm_path());
  MelmModel lm = load_melm(cfg.melm_path(), vocab);
  require_artifact(cfg.detections_path());
  auto det_index = index_detections(load_detections(cfg.detections_path()));

  std::vector<ImageMBest> lists;
  for (int i : ds.indices(parse_split(cfg.decode_split))) {
    const DatasetEntry& e = ds.entries[static_cast<size_t>(i)];
    ImageMBest im;
    im.image_id = e.image_id;
    im.list = decode_image(detections_for(det_index, e.image_id), lm, stats, cfg);
    lists.push_back(std::move(im));
  }
  save_mbest(lists, *vocab, cfg.mbest_path(cfg.decode_split));
  std::cout << "decode: " << lists.size() << " images -> " << cfg.mbest_path(cfg.decode_split) << "\n";
}

void mert(const PipelineConfig& cfg) {
  Dataset ds = load_prepared_dataset(cfg);
  auto vocab = load_vocab_ptr(cfg);
  require_artifact(cfg.mbest_path("val"));
  std::vector<ImageMBest> lists = load_mbest(cfg.mbest_path("val"), *vocab);

  std::optional<DmsmModel> dmsm;
  if (fs::exists(cfg.dmsm_path())) dmsm = load_dmsm(cfg.dmsm_path());

  Rng ref_rng = Rng::substream(*cfg.seed, "mert-refs");
  MertProblem problem;
  for (const auto& im : lists) {
    const DatasetEntry* entry = ds.find(im.image_id);
    if (entry == nullptr) throw DataError("mert: image " + im.image_id + " not in dataset");
    RefSet refs = pick_references(*entry, ref_rng);
    std::vector<MertCandidate> list;
    for (const auto& e : im.list.entries) {
      if (e.tokens.empty()) continue;
      MertCandidate cand;
      double dmsm_score = 0.0;
      if (dmsm && entry->image_feature.size() > 0) {
        std::vector<std::string> words;
        for (int t : e.tokens) words.push_back(vocab->word(t));
        dmsm_score = dmsm->score(entry->image_feature, words);
      }
      cand.features = sentence_features(e.log_score, static_cast<int>(e.tokens.size()), e.rank,
                                        e.coverage, dmsm_score);
      std::vector<std::string> words;
      for (int t : e.tokens) words.push_back(vocab->word(t));
      cand.bleu = ngram_stats(words, refs);
      list.push_back(std::move(cand));
    }
    if (!list.empty()) problem.lists.push_back(std::move(list));
  }
  if (problem.lists.empty()) throw DataError("mert: no usable candidate lists in " + cfg.mbest_path("val"));

  MertWeights init{};
  init[0] = 1.0;  // start from plain log-likelihood ranking
  MertConfig mert_cfg = cfg.mert;
  mert_cfg.seed = *cfg.seed;
  double before = problem_bleu(problem, init);
  MertWeights tuned = mert_optimize(problem, init, mert_cfg);
  double after = problem_bleu(problem, tuned);
  save_mert_weights(tuned, cfg.mert_path());
  std::cout << "mert: tuning BLEU " << before << " -> " << after << "\n";
}

void caption(const PipelineConfig& cfg) {
  ensure_dir(cfg.report_dir);
  Dataset ds = load_prepared_dataset(cfg);
  auto vocab = load_vocab_ptr(cfg);
  require_artifact(cfg.stats_path());
  CorpusStats stats = load_stats(cfg.stats_path(), *vocab);
  require_artifact(cfg.mil_path());
  MilArtifact mil = load_mil(cfg.mil_path(), vocab);
  require_artifact(cfg.melm_path());
  MelmModel lm = load_melm(cfg.melm_path(), vocab);
  RerankModels models = load_rerank_models(cfg);

  std::ofstream out(cfg.captions_path());
  if (!out) throw DataError("cannot write artifact: " + cfg.captions_path());
  int count = 0;
  for (int i : ds.indices(parse_split(cfg.decode_split))) {
    const DatasetEntry& e = ds.entries[static_cast<size_t>(i)];
    RegionBag bag;
    bag.image_id = e.image_id;
    bag.regions = e.regions;
    DetectedWordSet dets = detect_words(mil.model, mil.calibration, bag, stats);
    MBestList list = decode_image(dets, lm, stats, cfg);
    out << e.image_id << "\t" << select_caption(list, e, models, *vocab) << "\n";
    ++count;
  }
  std::cout << "caption: wrote " << count << " captions to " << cfg.captions_path() << "\n";
}

void evaluate(const PipelineConfig& cfg) {
  ensure_dir(cfg.report_dir);
  Dataset ds = load_prepared_dataset(cfg);
  require_artifact(cfg.captions_path());

  std::ifstream in(cfg.captions_path());
  std::map<std::string, std::string> hyp_by_image;
  std::string line;
  while (std::getline(in, line)) {
    auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    hyp_by_image[line.substr(0, tab)] = line.substr(tab + 1);
  }

  Rng ref_rng = Rng::substream(*cfg.seed, "eval-refs");
  std::vector<std::string> ids;
  std::vector<Tokens> hyps;
  std::vector<RefSet> refs;
  for (int i : ds.indices(parse_split(cfg.decode_split))) {
    const DatasetEntry& e = ds.entries[static_cast<size_t>(i)];
    auto it = hyp_by_image.find(e.image_id);
    if (it == hyp_by_image.end()) {
      throw DataError("evaluate: no caption for image " + e.image_id + " in " + cfg.captions_path());
    }
    ids.push_back(e.image_id);
    hyps.push_back(tokenize(it->second));
    refs.push_back(pick_references(e, ref_rng));
  }
  EvalReport report = evaluate_corpus(ids, hyps, refs);

  // PPLX of the LM on the split's human captions, when the LM artifacts exist.
  if (fs::exists(cfg.melm_path()) && fs::exists(cfg.detections_path()) && fs::exists(cfg.vocab_path())) {
    auto vocab = load_vocab_ptr(cfg);
    MelmModel lm = load_melm(cfg.melm_path(), vocab);
    auto det_index = index_detections(load_detections(cfg.detections_path()));
    std::vector<LmExample> examples;
    ScoreSource source = parse_score_source(cfg);
    for (int i : ds.indices(parse_split(cfg.decode_split))) {
      const DatasetEntry& e = ds.entries[static_cast<size_t>(i)];
      const DetectedWordSet& dets = detections_for(det_index, e.image_id);
      for (const auto& cap : e.captions) examples.push_back(make_lm_example(cap, dets, *vocab, source));
    }
    report.pplx = lm.perplexity(examples);
  }

  std::ofstream rep(cfg.report_path());
  if (!rep) throw DataError("cannot write artifact: " + cfg.report_path());
  for (int k = 1; k <= 4; ++k) {
    rep << "bleu_" << k << "\t" << report.bleu_n[static_cast<size_t>(k - 1)] << "\n";
  }
  rep << "meteor_lite\t" << report.meteor << "\n";
  if (report.pplx) rep << "pplx\t" << *report.pplx << "\n";
  rep << "references\t" << report.reference_count << "\n";
  rep << "images\t" << ids.size() << "\n";

  std::ofstream per(cfg.per_image_path());
  per << "image_id\tbleu\tmeteor_lite\n";
  for (size_t i = 0; i < report.image_ids.size(); ++i) {
    per << report.image_ids[i] << "\t" << report.sentence_bleu[i] << "\t"
        << report.sentence_meteor[i] << "\n";
  }
  std::cout << "evaluate: bleu_4 " << report.bleu_n[3] << " meteor_lite " << report.meteor;
  if (report.pplx) std::cout << " pplx " << *report.pplx;
  std::cout << "\n";
}

void run(const std::string& command, const PipelineConfig& cfg) {
  validate_config(cfg, command);
  if (command == "prepare") prepare(cfg);
  else if (command == "train-mil") train_mil(cfg);
  else if (command == "detect") detect(cfg);
  else if (command == "train-lm") train_lm(cfg);
  else if (command == "train-dmsm") train_dmsm(cfg);
  else if (command == "decode") decode(cfg);
  else if (command == "mert") mert(cfg);
  else if (command == "caption") caption(cfg);
  else if (command == "evaluate") evaluate(cfg);
  else throw ConfigError("unknown command: " + command);
}

}  // namespace pipeline
}  // namespace capgen
