#ifndef CAPGEN_MIL_H_
#define CAPGEN_MIL_H_

#include <Eigen/Core>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "capgen/corpus.h"

namespace capgen {

// One image's bag of region feature vectors plus the vocabulary words that
// appear in any of its captions.
struct RegionBag {
  std::string image_id;
  Eigen::MatrixXd regions;          // one row per region
  std::vector<int> positive_words;  // sorted vocabulary ids

  bool is_positive(int word) const;
};

struct WordDetector {
  Eigen::VectorXd v;
  double u = 0.0;
  bool trained = false;
};

struct MilConfig {
  double learning_rate = 0.05;
  int epochs = 3;
  double tau = 0.5;  // detection precision threshold
  int threads = 1;
  uint64_t seed = 0;
};

class MilModel {
 public:
  MilModel() = default;
  MilModel(std::shared_ptr<const Vocabulary> vocab, int dim);

  int dim() const { return dim_; }
  const Vocabulary& vocab() const { return *vocab_; }
  std::shared_ptr<const Vocabulary> vocab_ptr() const { return vocab_; }
  const WordDetector& detector(int word) const { return detectors_.at(static_cast<size_t>(word)); }
  WordDetector& detector(int word) { return detectors_.at(static_cast<size_t>(word)); }
  int word_count() const { return static_cast<int>(detectors_.size()); }

  // Noisy-OR probability of the bag containing `word`.
  double bag_prob(int word, const Eigen::MatrixXd& regions) const;
  double max_instance_prob(int word, const Eigen::MatrixXd& regions) const;

  std::vector<std::string> skipped_words;  // no positive or no negative bags
  std::vector<double> epoch_losses;
  int trained_epochs = 0;

 private:
  std::shared_ptr<const Vocabulary> vocab_;
  int dim_ = 0;
  std::vector<WordDetector> detectors_;
};

// sigma(v . features + u); rejects non-finite inputs.
double instance_prob(const Eigen::VectorXd& features, const Eigen::VectorXd& v, double u);

// 1 - prod(1 - p_j). Errors on an empty bag.
double noisy_or(const std::vector<double>& instance_probs);

// Cross-entropy of the noisy-OR bag probability against the bag label, with
// factors floored at 1e-12 to keep the logs finite.
double mil_bag_loss(const WordDetector& det, const RegionBag& bag, bool positive);
void mil_bag_gradient(const WordDetector& det, const RegionBag& bag, bool positive,
                      Eigen::VectorXd* grad_v, double* grad_u);

// Per-word SGD on the noisy-OR cross entropy. Words lacking a positive or a
// negative bag are skipped and reported on the model. Word training is
// independent, so `config.threads` may fan out without changing results.
MilModel train_mil(const std::vector<RegionBag>& train,
                   std::shared_ptr<const Vocabulary> vocab, const MilConfig& config);

struct CalibrationPoint {
  double threshold = 0.0;
  double precision = 0.0;
};

class CalibrationTable {
 public:
  double tau = 0.5;
  std::map<int, std::vector<CalibrationPoint>> curves;  // word id -> points by threshold

  // Precision of the detector when operated at score threshold `score`:
  // the recorded point with the smallest threshold >= score. Queries above
  // the top threshold extend the last point; empty curves yield nullopt.
  std::optional<double> precision_at(int word, double score) const;
};

// Sweeps thresholds over the image probabilities observed on held-out bags
// and records precision per word. Held-out bags must be disjoint from
// training bags.
CalibrationTable calibrate(const MilModel& model, const std::vector<RegionBag>& heldout,
                           const std::vector<std::string>& training_ids, double tau);

struct Detection {
  int word_id = -1;
  std::string word;
  double image_prob = 0.0;  // noisy-OR over the bag
  double raw_score = 0.0;   // max instance probability
};

struct DetectedWordSet {
  std::string image_id;
  std::vector<Detection> entries;  // closed-class words removed
};

DetectedWordSet detect_words(const MilModel& model, const CalibrationTable& calibration,
                             const RegionBag& bag, const CorpusStats& stats);

// Builds MIL bags from dataset entries; positive words are exact vocabulary
// matches ( <unk> never trains a detector).
std::vector<RegionBag> make_bags(const Dataset& ds, const std::vector<int>& indices,
                                 const Vocabulary& vocab);

}  // namespace capgen

#endif  // CAPGEN_MIL_H_
