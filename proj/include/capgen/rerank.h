#ifndef CAPGEN_RERANK_H_
#define CAPGEN_RERANK_H_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "capgen/metrics.h"

namespace capgen {

inline constexpr int kNumSentenceFeatures = 16;

using FeatureVector = std::array<double, kNumSentenceFeatures>;
using MertWeights = std::array<double, kNumSentenceFeatures>;

const std::array<std::string, kNumSentenceFeatures>& sentence_feature_names();

// Sentence-level features: log-likelihood, length, log-probability per word,
// log of the 1-based rank, eleven mention-count indicators (counts above 10
// clamp to the last), and the DMSM score.
FeatureVector sentence_features(double log_likelihood, int length, int rank, int mentions,
                                double dmsm_score);

double linear_score(const MertWeights& weights, const FeatureVector& features);

// Index of the best-scoring candidate; ties keep the earlier (better-ranked)
// entry. Errors on an empty list.
int rerank_select(const std::vector<FeatureVector>& candidates, const MertWeights& weights);

struct MertCandidate {
  FeatureVector features{};
  NgramStats bleu;  // precomputed against this image's references
};

struct MertProblem {
  std::vector<std::vector<MertCandidate>> lists;  // one candidate list per image
};

struct MertConfig {
  int restarts = 8;
  int max_sweeps = 30;
  double min_gain = 1e-6;
  uint64_t seed = 0;
};

// Corpus BLEU of the per-image argmax selection under `weights`.
double problem_bleu(const MertProblem& problem, const MertWeights& weights);

// Coordinate-wise exact line search (upper envelope of per-candidate score
// lines), swept until a full pass gains less than min_gain, restarted from
// random points. Never returns weights scoring below the initialization.
MertWeights mert_optimize(const MertProblem& problem, const MertWeights& init,
                          const MertConfig& config);

}  // namespace capgen

#endif  // CAPGEN_RERANK_H_
