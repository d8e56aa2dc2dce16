#ifndef CAPGEN_CORPUS_H_
#define CAPGEN_CORPUS_H_

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace capgen {

inline constexpr const char* kStartSymbol = "<s>";
inline constexpr const char* kEndSymbol = "</s>";
inline constexpr const char* kUnkSymbol = "<unk>";

// Pseudo token id for the start-of-sentence symbol; never a vocabulary slot.
inline constexpr int kStartId = -1;

struct Caption {
  std::string image_id;
  std::vector<std::string> tokens;
  std::string raw;
};

// Lowercases, strips punctuation except intra-word apostrophes, splits on
// whitespace. Idempotent; empty input yields an empty list.
std::vector<std::string> tokenize(std::string_view raw);

std::string join_tokens(const std::vector<std::string>& tokens);

class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> words);  // most frequent first

  int size() const { return static_cast<int>(words_.size()); }
  const std::string& word(int id) const { return words_.at(static_cast<size_t>(id)); }
  const std::vector<std::string>& words() const { return words_; }
  std::optional<int> lookup(std::string_view w) const;
  // OOV maps to <unk> when the vocabulary carries one, otherwise nullopt.
  std::optional<int> lookup_or_unk(std::string_view w) const;
  std::optional<int> unk_id() const;
  bool is_unk(int id) const { return unk_ >= 0 && id == unk_; }
  // Copy with <unk> appended as the last slot (no-op if already present).
  Vocabulary with_unk() const;
  // Stable fingerprint used to pair models with the vocabulary they were
  // trained against.
  uint64_t hash() const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
  int unk_ = -1;
};

struct VocabBuild {
  Vocabulary vocab;
  double coverage = 0.0;  // fraction of token occurrences covered
  int64_t total_tokens = 0;
  int64_t distinct_tokens = 0;
};

// The `size` most frequent tokens, ties broken lexicographically. Returns all
// tokens (and the actual size) when the corpus has fewer distinct tokens.
VocabBuild build_vocabulary(const std::vector<Caption>& captions, int size);

enum class ClosedClassMode { kFixed, kRecompute };

struct CorpusStats {
  std::vector<int64_t> unigram_counts;             // aligned to vocabulary ids
  std::map<int, std::vector<int>> successor_table; // kStartId or word id -> sorted next ids
  std::vector<int> frequent_words;                 // top-F vocabulary ids
  std::vector<std::string> closed_class;           // function words removed from detections

  bool is_closed_class(const std::string& w) const;
  const std::vector<int>& successors(int id) const;  // empty set for unseen keys
};

// kFixed keeps the standard 15-word English list; kRecompute ranks a built-in
// closed-class lexicon by corpus frequency and keeps the top 15.
CorpusStats build_stats(const std::vector<Caption>& captions, const Vocabulary& vocab,
                        int frequent_count = 100,
                        ClosedClassMode mode = ClosedClassMode::kFixed);

const std::vector<std::string>& default_closed_class();
const std::vector<std::string>& closed_class_lexicon();

enum class Split { kTrain = 0, kVal = 1, kTest = 2 };

struct DatasetEntry {
  std::string image_id;
  std::vector<Caption> captions;
  Eigen::MatrixXd regions;        // one row per region feature vector
  Eigen::VectorXd image_feature;  // size 0 when absent
};

struct Dataset {
  int region_dim = 0;
  int image_dim = 0;
  std::vector<DatasetEntry> entries;
  std::vector<Split> split;  // parallel to entries; set by split_dataset

  std::vector<int> indices(Split s) const;
  const DatasetEntry* find(std::string_view image_id) const;
  std::vector<Caption> captions(Split s) const;
};

// One JSON record per line after a header declaring feature dimensions.
// Malformed records raise DataError naming the offending line.
Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& ds, const std::string& path);

// Deterministic shuffle + largest-remainder assignment: split sizes are
// within one image of the requested proportions.
void split_dataset(Dataset& ds, const std::array<double, 3>& ratios, uint64_t seed);

}  // namespace capgen

#endif  // CAPGEN_CORPUS_H_
