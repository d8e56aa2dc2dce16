#include "capgen/serialize.h"

#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "capgen/error.h"

namespace capgen {

using nlohmann::json;

namespace {

json load_json(const std::string& path, const char* format) {
  std::ifstream in(path);
  if (!in) throw DataError("missing artifact: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("corrupt artifact " + path + ": " + e.what());
  }
  if (j.value("format", "") != format) {
    throw DataError("artifact " + path + " is not a " + format + " file");
  }
  return j;
}

void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write artifact: " + path);
  out << j.dump(1) << "\n";
}

void check_vocab_hash(const json& j, const Vocabulary& vocab, const std::string& path) {
  if (j.at("vocab_hash").get<uint64_t>() != vocab.hash()) {
    throw DataError("artifact " + path + " was built against a different vocabulary");
  }
}

json layer_to_json(const DenseLayer& l) {
  json j;
  j["rows"] = l.W.rows();
  j["cols"] = l.W.cols();
  json w = json::array();
  for (Eigen::Index c = 0; c < l.W.cols(); ++c) {
    for (Eigen::Index r = 0; r < l.W.rows(); ++r) w.push_back(l.W(r, c));
  }
  j["W"] = w;
  json b = json::array();
  for (Eigen::Index i = 0; i < l.b.size(); ++i) b.push_back(l.b[i]);
  j["b"] = b;
  return j;
}

DenseLayer layer_from_json(const json& j) {
  DenseLayer l;
  Eigen::Index rows = j.at("rows").get<Eigen::Index>();
  Eigen::Index cols = j.at("cols").get<Eigen::Index>();
  l.W.resize(rows, cols);
  const auto& w = j.at("W");
  size_t k = 0;
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) l.W(r, c) = w.at(k++).get<double>();
  }
  const auto& b = j.at("b");
  l.b.resize(static_cast<Eigen::Index>(b.size()));
  for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b[i] = b.at(static_cast<size_t>(i)).get<double>();
  return l;
}

}  // namespace

void save_vocab(const VocabBuild& build, const std::string& path) {
  json j;
  j["format"] = "capgen-vocab";
  j["version"] = 1;
  j["words"] = build.vocab.words();
  j["coverage"] = build.coverage;
  j["total_tokens"] = build.total_tokens;
  j["distinct_tokens"] = build.distinct_tokens;
  write_json(j, path);
}

VocabBuild load_vocab(const std::string& path) {
  json j = load_json(path, "capgen-vocab");
  VocabBuild out;
  out.vocab = Vocabulary(j.at("words").get<std::vector<std::string>>());
  out.coverage = j.value("coverage", 0.0);
  out.total_tokens = j.value("total_tokens", int64_t{0});
  out.distinct_tokens = j.value("distinct_tokens", int64_t{0});
  return out;
}

void save_stats(const CorpusStats& stats, const std::string& path) {
  json j;
  j["format"] = "capgen-stats";
  j["version"] = 1;
  j["unigram_counts"] = stats.unigram_counts;
  json succ = json::array();
  for (const auto& [key, nexts] : stats.successor_table) {
    succ.push_back(json::array({key, nexts}));
  }
  j["successor_table"] = succ;
  j["frequent_words"] = stats.frequent_words;
  j["closed_class"] = stats.closed_class;
  write_json(j, path);
}

CorpusStats load_stats(const std::string& path, const Vocabulary& vocab) {
  json j = load_json(path, "capgen-stats");
  CorpusStats stats;
  stats.unigram_counts = j.at("unigram_counts").get<std::vector<int64_t>>();
  if (static_cast<int>(stats.unigram_counts.size()) != vocab.size()) {
    throw DataError("artifact " + path + " does not match the vocabulary size");
  }
  for (const auto& pair : j.at("successor_table")) {
    stats.successor_table.emplace(pair.at(0).get<int>(), pair.at(1).get<std::vector<int>>());
  }
  stats.frequent_words = j.at("frequent_words").get<std::vector<int>>();
  stats.closed_class = j.at("closed_class").get<std::vector<std::string>>();
  return stats;
}

void save_split(const Dataset& ds, const std::string& path) {
  if (ds.split.size() != ds.entries.size()) throw DataError("save_split: dataset has no split");
  json j;
  j["format"] = "capgen-split";
  j["version"] = 1;
  json train = json::array(), val = json::array(), test = json::array();
  for (size_t i = 0; i < ds.entries.size(); ++i) {
    switch (ds.split[i]) {
      case Split::kTrain: train.push_back(ds.entries[i].image_id); break;
      case Split::kVal: val.push_back(ds.entries[i].image_id); break;
      case Split::kTest: test.push_back(ds.entries[i].image_id); break;
    }
  }
  j["train"] = train;
  j["val"] = val;
  j["test"] = test;
  write_json(j, path);
}

void load_split(Dataset* ds, const std::string& path) {
  json j = load_json(path, "capgen-split");
  std::map<std::string, Split> assign;
  for (const auto& id : j.at("train")) assign.emplace(id.get<std::string>(), Split::kTrain);
  for (const auto& id : j.at("val")) assign.emplace(id.get<std::string>(), Split::kVal);
  for (const auto& id : j.at("test")) assign.emplace(id.get<std::string>(), Split::kTest);
  ds->split.assign(ds->entries.size(), Split::kTrain);
  for (size_t i = 0; i < ds->entries.size(); ++i) {
    auto it = assign.find(ds->entries[i].image_id);
    if (it == assign.end()) {
      throw DataError("artifact " + path + " has no split for image " + ds->entries[i].image_id);
    }
    ds->split[i] = it->second;
  }
}

void save_mil(const MilModel& model, const CalibrationTable& calibration, const std::string& path) {
  json j;
  j["format"] = "capgen-mil";
  j["version"] = 1;
  j["vocab_hash"] = model.vocab().hash();
  j["dim"] = model.dim();
  j["tau"] = calibration.tau;
  j["trained_epochs"] = model.trained_epochs;
  j["epoch_losses"] = model.epoch_losses;
  j["skipped"] = model.skipped_words;
  json words = json::array();
  for (int w = 0; w < model.word_count(); ++w) {
    const WordDetector& det = model.detector(w);
    if (!det.trained) continue;
    json rec;
    rec["id"] = w;
    rec["u"] = det.u;
    json v = json::array();
    for (Eigen::Index i = 0; i < det.v.size(); ++i) v.push_back(det.v[i]);
    rec["v"] = v;
    words.push_back(rec);
  }
  j["words"] = words;
  json cal = json::array();
  for (const auto& [word, curve] : calibration.curves) {
    json pts = json::array();
    for (const auto& p : curve) pts.push_back(json::array({p.threshold, p.precision}));
    cal.push_back(json::array({word, pts}));
  }
  j["calibration"] = cal;
  write_json(j, path);
}

MilArtifact load_mil(const std::string& path, std::shared_ptr<const Vocabulary> vocab) {
  json j = load_json(path, "capgen-mil");
  check_vocab_hash(j, *vocab, path);
  MilArtifact out;
  out.model = MilModel(vocab, j.at("dim").get<int>());
  out.model.trained_epochs = j.value("trained_epochs", 0);
  out.model.epoch_losses = j.value("epoch_losses", std::vector<double>{});
  out.model.skipped_words = j.value("skipped", std::vector<std::string>{});
  for (const auto& rec : j.at("words")) {
    int w = rec.at("id").get<int>();
    WordDetector& det = out.model.detector(w);
    det.u = rec.at("u").get<double>();
    const auto& v = rec.at("v");
    det.v.resize(static_cast<Eigen::Index>(v.size()));
    for (Eigen::Index i = 0; i < det.v.size(); ++i) det.v[i] = v.at(static_cast<size_t>(i)).get<double>();
    det.trained = true;
  }
  out.calibration.tau = j.at("tau").get<double>();
  for (const auto& pair : j.at("calibration")) {
    std::vector<CalibrationPoint> curve;
    for (const auto& p : pair.at(1)) curve.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    out.calibration.curves.emplace(pair.at(0).get<int>(), std::move(curve));
  }
  return out;
}

void save_melm(const MelmModel& model, const std::string& path) {
  json j;
  j["format"] = "capgen-melm";
  j["version"] = 1;
  j["vocab_hash"] = model.vocab().hash();
  json cfg;
  cfg["hash_bits"] = model.config().hash_bits;
  cfg["n_max"] = model.config().n_max;
  cfg["nce_samples"] = model.config().nce_samples;
  cfg["use_score_feature"] = model.config().use_score_feature;
  j["config"] = cfg;
  j["noise"] = "unigram-add1";
  json slots = json::array();
  const auto& weights = model.weights();
  for (size_t s = 0; s < weights.size(); ++s) {
    if (weights[s] != 0.0) slots.push_back(json::array({s, weights[s]}));
  }
  j["slots"] = slots;
  write_json(j, path);
}

MelmModel load_melm(const std::string& path, std::shared_ptr<const Vocabulary> vocab) {
  json j = load_json(path, "capgen-melm");
  check_vocab_hash(j, *vocab, path);
  MelmConfig cfg;
  cfg.hash_bits = j.at("config").at("hash_bits").get<int>();
  cfg.n_max = j.at("config").at("n_max").get<int>();
  cfg.nce_samples = j.at("config").at("nce_samples").get<int>();
  cfg.use_score_feature = j.at("config").at("use_score_feature").get<bool>();
  MelmModel model(vocab, cfg);
  for (const auto& pair : j.at("slots")) {
    model.mutable_weights().at(pair.at(0).get<size_t>()) = pair.at(1).get<double>();
  }
  return model;
}

void save_dmsm(const DmsmModel& model, const std::string& path) {
  json j;
  j["format"] = "capgen-dmsm";
  j["version"] = 1;
  j["image_dim"] = model.image_dim;
  json cfg;
  cfg["d_sem"] = model.cfg.d_sem;
  cfg["conv_dim"] = model.cfg.conv_dim;
  cfg["hidden_dim"] = model.cfg.hidden_dim;
  cfg["gamma"] = model.cfg.gamma;
  cfg["negatives"] = model.cfg.negatives;
  cfg["trigram_overflow"] = model.cfg.trigram_overflow;
  j["config"] = cfg;
  j["trigrams"] = model.trigrams.trigrams();
  j["conv"] = layer_to_json(model.conv);
  json text = json::array();
  for (const auto& l : model.text_dense) text.push_back(layer_to_json(l));
  j["text_dense"] = text;
  json image = json::array();
  for (const auto& l : model.image_layers) image.push_back(layer_to_json(l));
  j["image_layers"] = image;
  write_json(j, path);
}

DmsmModel load_dmsm(const std::string& path) {
  json j = load_json(path, "capgen-dmsm");
  DmsmModel model;
  model.image_dim = j.at("image_dim").get<int>();
  model.cfg.d_sem = j.at("config").at("d_sem").get<int>();
  model.cfg.conv_dim = j.at("config").at("conv_dim").get<int>();
  model.cfg.hidden_dim = j.at("config").at("hidden_dim").get<int>();
  model.cfg.gamma = j.at("config").at("gamma").get<double>();
  model.cfg.negatives = j.at("config").at("negatives").get<int>();
  model.cfg.trigram_overflow = j.at("config").at("trigram_overflow").get<int>();
  model.trigrams = TrigramIndex(j.at("trigrams").get<std::vector<std::string>>(),
                                model.cfg.trigram_overflow);
  model.conv = layer_from_json(j.at("conv"));
  for (const auto& l : j.at("text_dense")) model.text_dense.push_back(layer_from_json(l));
  for (const auto& l : j.at("image_layers")) model.image_layers.push_back(layer_from_json(l));
  return model;
}

void save_mert_weights(const MertWeights& weights, const std::string& path) {
  json j;
  j["format"] = "capgen-mert";
  j["version"] = 1;
  json w;
  const auto& names = sentence_feature_names();
  for (int i = 0; i < kNumSentenceFeatures; ++i) w[names[static_cast<size_t>(i)]] = weights[static_cast<size_t>(i)];
  j["weights"] = w;
  write_json(j, path);
}

MertWeights load_mert_weights(const std::string& path) {
  json j = load_json(path, "capgen-mert");
  MertWeights weights{};
  const auto& names = sentence_feature_names();
  for (int i = 0; i < kNumSentenceFeatures; ++i) {
    weights[static_cast<size_t>(i)] = j.at("weights").at(names[static_cast<size_t>(i)]).get<double>();
  }
  return weights;
}

void save_detections(const std::vector<DetectedWordSet>& detections, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write artifact: " + path);
  for (const auto& d : detections) {
    json rec;
    rec["image_id"] = d.image_id;
    json words = json::array();
    for (const auto& e : d.entries) {
      json w;
      w["word"] = e.word;
      w["image_prob"] = e.image_prob;
      w["raw_score"] = e.raw_score;
      words.push_back(w);
    }
    rec["words"] = words;
    out << rec.dump() << "\n";
  }
}

std::vector<DetectedWordSet> load_detections(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing artifact: " + path);
  std::vector<DetectedWordSet> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("detections line " + std::to_string(line_no) + ": " + e.what());
    }
    DetectedWordSet d;
    d.image_id = rec.at("image_id").get<std::string>();
    for (const auto& w : rec.at("words")) {
      Detection det;
      det.word = w.at("word").get<std::string>();
      det.image_prob = w.at("image_prob").get<double>();
      det.raw_score = w.at("raw_score").get<double>();
      d.entries.push_back(std::move(det));
    }
    out.push_back(std::move(d));
  }
  return out;
}

void save_mbest(const std::vector<ImageMBest>& lists, const Vocabulary& vocab,
                const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write artifact: " + path);
  for (const auto& im : lists) {
    json rec;
    rec["image_id"] = im.image_id;
    rec["achieved_t"] = im.list.achieved_t;
    rec["requested_m"] = im.list.requested_m;
    json entries = json::array();
    for (const auto& e : im.list.entries) {
      json je;
      json toks = json::array();
      for (int t : e.tokens) toks.push_back(vocab.word(t));
      je["tokens"] = toks;
      je["log_score"] = e.log_score;
      je["coverage"] = e.coverage;
      entries.push_back(je);
    }
    rec["entries"] = entries;
    out << rec.dump() << "\n";
  }
}

std::vector<ImageMBest> load_mbest(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw DataError("missing artifact: " + path);
  std::vector<ImageMBest> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("mbest line " + std::to_string(line_no) + ": " + e.what());
    }
    ImageMBest im;
    im.image_id = rec.at("image_id").get<std::string>();
    im.list.achieved_t = rec.at("achieved_t").get<int>();
    im.list.requested_m = rec.at("requested_m").get<int>();
    int rank = 0;
    for (const auto& je : rec.at("entries")) {
      MBestEntry e;
      for (const auto& t : je.at("tokens")) {
        auto id = vocab.lookup(t.get<std::string>());
        if (!id) throw DataError("mbest line " + std::to_string(line_no) + ": unknown token");
        e.tokens.push_back(*id);
      }
      e.log_score = je.at("log_score").get<double>();
      e.coverage = je.at("coverage").get<int>();
      e.rank = ++rank;
      im.list.entries.push_back(std::move(e));
    }
    out.push_back(std::move(im));
  }
  return out;
}

}  // namespace capgen
