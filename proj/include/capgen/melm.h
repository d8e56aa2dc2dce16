#ifndef CAPGEN_MELM_H_
#define CAPGEN_MELM_H_

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "capgen/corpus.h"
#include "capgen/mil.h"
#include "capgen/rng.h"

namespace capgen {

enum class FeatureTemplate : uint8_t {
  kAttribute = 1,  // candidate is a still-unused detected word
  kNGramPlus = 2,  // n-gram ending in candidate, candidate unused-detected
  kNGramMinus = 3, // n-gram ending in candidate, candidate not in the set
  kEnd = 4,        // candidate emitted with no detected words left
  kScore = 5,      // log detector probability of an unused detected word
};

struct FeatureKey {
  FeatureTemplate tmpl;
  std::vector<int> ngram;  // token ids; empty for Attribute/Score

  uint64_t hash() const;
  std::string to_string(const Vocabulary& vocab) const;
  bool operator==(const FeatureKey& o) const { return tmpl == o.tmpl && ngram == o.ngram; }
};

struct Feature {
  FeatureKey key;
  double value = 1.0;
};

struct RemainingWord {
  int id = -1;
  double log_score = 0.0;  // floored log image probability from the detector

  bool operator==(const RemainingWord& o) const { return id == o.id && log_score == o.log_score; }
};

// Generation state: token history (start symbol first) plus the detected
// words not yet used. Generating a remaining word consumes it.
struct LmState {
  std::vector<int> history;
  std::vector<RemainingWord> remaining;  // sorted by id

  static LmState initial(std::vector<RemainingWord> detections);
  bool in_remaining(int id, double* log_score = nullptr) const;
};

LmState advance(const LmState& state, int token);

struct MelmConfig {
  int hash_bits = 22;
  int n_max = 4;
  int nce_samples = 15;
  double learning_rate = 0.1;  // decayed by 1/sqrt(epoch)
  int epochs = 20;
  bool use_score_feature = true;
};

struct LmExample {
  std::vector<int> tokens;  // vocabulary ids, no sentence markers
  std::vector<RemainingWord> detections;
};

struct NceTrainReport {
  std::vector<double> epoch_objectives;
  int64_t distinct_keys = 0;
  int64_t used_slots = 0;
  double collision_rate = 0.0;
};

inline constexpr double kScoreFloorLog = -13.815510557964274;  // log(1e-6)

// Which detector output feeds the Score feature.
enum class ScoreSource { kImageProb, kRawScore };

LmExample make_lm_example(const Caption& caption, const DetectedWordSet& detections,
                          const Vocabulary& vocab,
                          ScoreSource source = ScoreSource::kImageProb);
std::vector<RemainingWord> to_remaining(const DetectedWordSet& detections, const Vocabulary& vocab,
                                        ScoreSource source = ScoreSource::kImageProb);

// Log-linear LM over hashed features, probability conditioned on the history
// and the unused detected-word set. Trained with noise-contrastive
// estimation against an empirical unigram noise distribution.
class MelmModel {
 public:
  MelmModel() = default;
  MelmModel(std::shared_ptr<const Vocabulary> vocab, MelmConfig config);

  const MelmConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return *vocab_; }
  std::shared_ptr<const Vocabulary> vocab_ptr() const { return vocab_; }
  int end_id() const { return vocab_->size(); }
  int candidate_count() const { return vocab_->size() + 1; }
  std::string token_string(int id) const;

  std::vector<Feature> extract_features(const LmState& state, int candidate) const;
  double unnormalized_score(const LmState& state, int candidate) const;
  // Exact probability over V + </s> via max-subtracted softmax.
  double word_prob_exact(const LmState& state, int candidate) const;
  std::vector<double> candidate_log_probs(const LmState& state) const;

  NceTrainReport train_nce(const std::vector<LmExample>& examples, uint64_t seed);
  // 2^(-mean log2 p) over all predicted tokens including </s>.
  double perplexity(const std::vector<LmExample>& examples) const;

  double weight(const FeatureKey& key) const;
  void set_weight(const FeatureKey& key, double w);
  uint32_t slot_of(const FeatureKey& key) const;
  const std::vector<double>& weights() const { return weights_; }
  std::vector<double>& mutable_weights() { return weights_; }

  // NCE internals, exposed so the objective gradient can be checked against
  // finite differences with a fixed noise draw.
  void build_noise(const std::vector<LmExample>& examples);
  double noise_log_prob(int candidate) const;
  int sample_noise(Rng& rng) const;
  bool has_noise() const { return !noise_cdf_.empty(); }
  double nce_position_objective(const LmState& state, int gold,
                                const std::vector<int>& noise) const;
  std::unordered_map<uint32_t, double> nce_position_gradient(const LmState& state, int gold,
                                                             const std::vector<int>& noise) const;

 private:
  std::shared_ptr<const Vocabulary> vocab_;
  MelmConfig config_;
  std::vector<double> weights_;
  std::vector<double> noise_log_prob_;
  std::vector<double> noise_cdf_;
};

}  // namespace capgen

#endif  // CAPGEN_MELM_H_
