#include "capgen/corpus.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "capgen/error.h"
#include "capgen/hashing.h"
#include "capgen/rng.h"

namespace capgen {

using nlohmann::json;

namespace {

bool is_word_char(unsigned char c) {
  // Bytes >= 0x80 are kept so multi-byte UTF-8 sequences survive intact.
  return std::isalnum(c) || c >= 0x80;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view raw) {
  std::string cleaned;
  cleaned.reserve(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) {
    unsigned char c = static_cast<unsigned char>(raw[i]);
    if (is_word_char(c)) {
      cleaned.push_back(static_cast<char>(std::tolower(c)));
    } else if (c == '\'' && i > 0 && i + 1 < raw.size() &&
               is_word_char(static_cast<unsigned char>(raw[i - 1])) &&
               is_word_char(static_cast<unsigned char>(raw[i + 1]))) {
      cleaned.push_back('\'');
    } else {
      cleaned.push_back(' ');
    }
  }
  std::vector<std::string> tokens;
  std::istringstream in(cleaned);
  std::string tok;
  while (in >> tok) tokens.push_back(tok);
  return tokens;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  index_.reserve(words_.size());
  for (int i = 0; i < static_cast<int>(words_.size()); ++i) {
    auto [it, inserted] = index_.emplace(words_[i], i);
    if (!inserted) throw DataError("duplicate vocabulary word: " + words_[i]);
    if (words_[i] == kUnkSymbol) unk_ = i;
  }
}

std::optional<int> Vocabulary::lookup(std::string_view w) const {
  auto it = index_.find(std::string(w));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> Vocabulary::lookup_or_unk(std::string_view w) const {
  if (auto id = lookup(w)) return id;
  if (unk_ >= 0) return unk_;
  return std::nullopt;
}

std::optional<int> Vocabulary::unk_id() const {
  if (unk_ >= 0) return unk_;
  return std::nullopt;
}

Vocabulary Vocabulary::with_unk() const {
  if (unk_ >= 0) return *this;
  std::vector<std::string> words = words_;
  words.push_back(kUnkSymbol);
  return Vocabulary(std::move(words));
}

uint64_t Vocabulary::hash() const {
  uint64_t h = kFnvOffset;
  for (const auto& w : words_) {
    h = fnv1a64(w, h);
    h = fnv1a64("\n", h);
  }
  return h;
}

VocabBuild build_vocabulary(const std::vector<Caption>& captions, int size) {
  if (size < 1) throw ConfigError("vocabulary size must be >= 1");
  std::map<std::string, int64_t> counts;
  int64_t total = 0;
  for (const auto& cap : captions) {
    for (const auto& tok : cap.tokens) {
      ++counts[tok];
      ++total;
    }
  }
  std::vector<std::pair<std::string, int64_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  size_t keep = std::min<size_t>(static_cast<size_t>(size), ranked.size());
  std::vector<std::string> words;
  words.reserve(keep);
  int64_t covered = 0;
  for (size_t i = 0; i < keep; ++i) {
    words.push_back(ranked[i].first);
    covered += ranked[i].second;
  }
  VocabBuild out;
  out.vocab = Vocabulary(std::move(words));
  out.total_tokens = total;
  out.distinct_tokens = static_cast<int64_t>(ranked.size());
  out.coverage = total > 0 ? static_cast<double>(covered) / static_cast<double>(total) : 0.0;
  return out;
}

const std::vector<std::string>& default_closed_class() {
  static const std::vector<std::string> kList = {
      "a", "on", "of", "the", "in", "with", "and", "is",
      "to", "an", "at", "are", "next", "that", "it"};
  return kList;
}

const std::vector<std::string>& closed_class_lexicon() {
  static const std::vector<std::string> kLexicon = {
      "a",     "an",      "the",    "on",      "of",      "in",     "with",
      "and",   "or",      "but",    "is",      "are",     "was",    "were",
      "be",    "been",    "being",  "to",      "at",      "by",     "for",
      "from",  "as",      "that",   "this",    "these",   "those",  "it",
      "its",   "he",      "she",    "they",    "them",    "his",    "her",
      "their", "there",   "here",   "next",    "up",      "down",   "over",
      "under", "into",    "onto",   "out",     "off",     "about",  "after",
      "before","between", "behind", "through", "during",  "not",    "no",
      "some",  "any",     "each",   "both",    "while",   "than",   "so"};
  return kLexicon;
}

bool CorpusStats::is_closed_class(const std::string& w) const {
  return std::find(closed_class.begin(), closed_class.end(), w) != closed_class.end();
}

const std::vector<int>& CorpusStats::successors(int id) const {
  static const std::vector<int> kEmpty;
  auto it = successor_table.find(id);
  return it == successor_table.end() ? kEmpty : it->second;
}

CorpusStats build_stats(const std::vector<Caption>& captions, const Vocabulary& vocab,
                        int frequent_count, ClosedClassMode mode) {
  CorpusStats stats;
  stats.unigram_counts.assign(static_cast<size_t>(vocab.size()), 0);

  std::map<int, std::set<int>> succ;
  for (const auto& cap : captions) {
    std::optional<int> prev = kStartId;
    for (const auto& tok : cap.tokens) {
      std::optional<int> cur = vocab.lookup_or_unk(tok);
      if (cur) {
        ++stats.unigram_counts[static_cast<size_t>(*cur)];
        if (prev) succ[*prev].insert(*cur);
      }
      prev = cur;  // an OOV token with no <unk> slot breaks the bigram chain
    }
  }
  for (auto& [key, nexts] : succ) {
    stats.successor_table.emplace(key, std::vector<int>(nexts.begin(), nexts.end()));
  }

  // Vocabulary order is corpus-frequency order; <unk> is excluded because it
  // is a reserved word, not a corpus word.
  for (int id = 0; id < vocab.size() && static_cast<int>(stats.frequent_words.size()) < frequent_count; ++id) {
    if (vocab.is_unk(id)) continue;
    stats.frequent_words.push_back(id);
  }

  if (mode == ClosedClassMode::kFixed) {
    stats.closed_class = default_closed_class();
  } else {
    std::vector<std::pair<std::string, int64_t>> found;
    for (const auto& w : closed_class_lexicon()) {
      auto id = vocab.lookup(w);
      if (!id || vocab.is_unk(*id)) continue;
      int64_t c = stats.unigram_counts[static_cast<size_t>(*id)];
      if (c > 0) found.emplace_back(w, c);
    }
    std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    for (size_t i = 0; i < found.size() && i < 15; ++i) stats.closed_class.push_back(found[i].first);
  }
  return stats;
}

std::vector<int> Dataset::indices(Split s) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(entries.size()); ++i) {
    if (i < static_cast<int>(split.size()) && split[i] == s) out.push_back(i);
  }
  return out;
}

const DatasetEntry* Dataset::find(std::string_view image_id) const {
  for (const auto& e : entries) {
    if (e.image_id == image_id) return &e;
  }
  return nullptr;
}

std::vector<Caption> Dataset::captions(Split s) const {
  std::vector<Caption> out;
  for (int i : indices(s)) {
    for (const auto& c : entries[static_cast<size_t>(i)].captions) out.push_back(c);
  }
  return out;
}

namespace {

Eigen::MatrixXd read_region_sidecar(const std::filesystem::path& path, int dim, int line_no) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("line " + std::to_string(line_no) + ": cannot open region file " + path.string());
  }
  uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  Eigen::MatrixXd regions(count, dim);
  std::vector<double> row(static_cast<size_t>(dim));
  for (uint32_t r = 0; r < count; ++r) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(sizeof(double) * row.size()));
    if (!in) {
      throw DataError("line " + std::to_string(line_no) + ": truncated region file " + path.string());
    }
    for (int c = 0; c < dim; ++c) regions(r, c) = row[static_cast<size_t>(c)];
  }
  return regions;
}

}  // namespace

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);
  std::filesystem::path base = std::filesystem::path(path).parent_path();

  Dataset ds;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  std::set<std::string> seen_ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": malformed record: " + e.what());
    }
    if (!have_header) {
      if (!rec.contains("region_dim") || !rec["region_dim"].is_number_integer()) {
        throw DataError("line 1: header must declare region_dim");
      }
      ds.region_dim = rec["region_dim"].get<int>();
      ds.image_dim = rec.value("image_dim", 0);
      if (ds.region_dim <= 0) throw DataError("line 1: region_dim must be positive");
      have_header = true;
      continue;
    }
    DatasetEntry entry;
    if (!rec.contains("image_id") || !rec["image_id"].is_string()) {
      throw DataError("line " + std::to_string(line_no) + ": missing image_id");
    }
    entry.image_id = rec["image_id"].get<std::string>();
    if (!seen_ids.insert(entry.image_id).second) {
      throw DataError("line " + std::to_string(line_no) + ": duplicate image_id " + entry.image_id);
    }
    if (!rec.contains("captions") || !rec["captions"].is_array() || rec["captions"].empty()) {
      throw DataError("line " + std::to_string(line_no) + ": missing captions field");
    }
    for (const auto& c : rec["captions"]) {
      if (!c.is_string()) throw DataError("line " + std::to_string(line_no) + ": caption must be a string");
      Caption cap;
      cap.image_id = entry.image_id;
      cap.raw = c.get<std::string>();
      cap.tokens = tokenize(cap.raw);
      if (cap.tokens.empty()) {
        throw DataError("line " + std::to_string(line_no) + ": caption tokenizes to nothing: \"" + cap.raw + "\"");
      }
      entry.captions.push_back(std::move(cap));
    }
    if (rec.contains("regions_path")) {
      entry.regions = read_region_sidecar(base / rec["regions_path"].get<std::string>(), ds.region_dim, line_no);
    } else if (rec.contains("regions") && rec["regions"].is_array()) {
      const auto& arr = rec["regions"];
      entry.regions.resize(static_cast<Eigen::Index>(arr.size()), ds.region_dim);
      for (size_t r = 0; r < arr.size(); ++r) {
        if (!arr[r].is_array() || static_cast<int>(arr[r].size()) != ds.region_dim) {
          throw DataError("line " + std::to_string(line_no) + ": region vector " + std::to_string(r) +
                          " does not match declared dimensionality " + std::to_string(ds.region_dim));
        }
        for (int c = 0; c < ds.region_dim; ++c) {
          entry.regions(static_cast<Eigen::Index>(r), c) = arr[r][static_cast<size_t>(c)].get<double>();
        }
      }
    } else {
      throw DataError("line " + std::to_string(line_no) + ": missing regions field");
    }
    if (entry.regions.rows() == 0) {
      throw DataError("line " + std::to_string(line_no) + ": empty region bag");
    }
    if (rec.contains("image_feature")) {
      const auto& arr = rec["image_feature"];
      if (!arr.is_array() || static_cast<int>(arr.size()) != ds.image_dim) {
        throw DataError("line " + std::to_string(line_no) + ": image_feature does not match declared image_dim " +
                        std::to_string(ds.image_dim));
      }
      entry.image_feature.resize(ds.image_dim);
      for (int c = 0; c < ds.image_dim; ++c) entry.image_feature[c] = arr[static_cast<size_t>(c)].get<double>();
    }
    ds.entries.push_back(std::move(entry));
  }
  if (!have_header) throw DataError("dataset file has no header record: " + path);
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset file: " + path);
  json header;
  header["region_dim"] = ds.region_dim;
  header["image_dim"] = ds.image_dim;
  out << header.dump() << "\n";
  for (const auto& e : ds.entries) {
    json rec;
    rec["image_id"] = e.image_id;
    json caps = json::array();
    for (const auto& c : e.captions) caps.push_back(c.raw);
    rec["captions"] = caps;
    json regions = json::array();
    for (Eigen::Index r = 0; r < e.regions.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < e.regions.cols(); ++c) row.push_back(e.regions(r, c));
      regions.push_back(row);
    }
    rec["regions"] = regions;
    if (e.image_feature.size() > 0) {
      json feat = json::array();
      for (Eigen::Index c = 0; c < e.image_feature.size(); ++c) feat.push_back(e.image_feature[c]);
      rec["image_feature"] = feat;
    }
    out << rec.dump() << "\n";
  }
}

void split_dataset(Dataset& ds, const std::array<double, 3>& ratios, uint64_t seed) {
  double sum = ratios[0] + ratios[1] + ratios[2];
  if (!(sum > 0.0)) throw ConfigError("split ratios must sum to a positive value");
  const size_t n = ds.entries.size();
  std::vector<int> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  Rng rng = Rng::substream(seed, "split");
  rng.shuffle(order);

  // Largest-remainder apportionment keeps every split within one image of
  // its requested share.
  std::array<size_t, 3> count{};
  std::array<double, 3> frac{};
  size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    double exact = static_cast<double>(n) * ratios[static_cast<size_t>(s)] / sum;
    count[static_cast<size_t>(s)] = static_cast<size_t>(std::floor(exact));
    frac[static_cast<size_t>(s)] = exact - std::floor(exact);
    assigned += count[static_cast<size_t>(s)];
  }
  while (assigned < n) {
    int best = 0;
    for (int s = 1; s < 3; ++s) {
      if (frac[static_cast<size_t>(s)] > frac[static_cast<size_t>(best)]) best = s;
    }
    ++count[static_cast<size_t>(best)];
    frac[static_cast<size_t>(best)] = -1.0;
    ++assigned;
  }

  ds.split.assign(n, Split::kTrain);
  size_t pos = 0;
  for (int s = 0; s < 3; ++s) {
    for (size_t i = 0; i < count[static_cast<size_t>(s)]; ++i, ++pos) {
      ds.split[static_cast<size_t>(order[pos])] = static_cast<Split>(s);
    }
  }
}

}  // namespace capgen
