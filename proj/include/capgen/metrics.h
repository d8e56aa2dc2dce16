#ifndef CAPGEN_METRICS_H_
#define CAPGEN_METRICS_H_

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace capgen {

using Tokens = std::vector<std::string>;
using RefSet = std::vector<Tokens>;

// Sufficient statistics for corpus BLEU: clipped n-gram matches, hypothesis
// n-gram totals, hypothesis length and closest reference length.
struct NgramStats {
  std::array<int64_t, 4> matches{};
  std::array<int64_t, 4> totals{};
  int64_t hyp_len = 0;
  int64_t ref_len = 0;

  NgramStats& operator+=(const NgramStats& o);
};

NgramStats ngram_stats(const Tokens& hyp, const RefSet& refs, int max_n = 4);

// Geometric mean of modified n-gram precisions with +1 smoothing on orders
// n >= 2, times the brevity penalty against the closest reference length.
double corpus_bleu(const NgramStats& agg, int max_n = 4);

double bleu(const std::vector<Tokens>& hyps, const std::vector<RefSet>& refs, int max_n = 4);

// Simplified METEOR: exact + suffix-stemmed unigram alignment, harmonic F
// with recall weight 9, fragmentation penalty 0.5*((chunks-1)/matches)^3.
// Not comparable to official METEOR scores (no WordNet synonymy).
double meteor_lite(const Tokens& hyp, const RefSet& refs);

std::string stem_lite(const std::string& word);

struct EvalReport {
  std::array<double, 4> bleu_n{};  // cumulative BLEU-1..BLEU-4
  double meteor = 0.0;
  std::optional<double> pplx;
  int reference_count = 0;
  std::vector<std::string> image_ids;
  std::vector<double> sentence_bleu;
  std::vector<double> sentence_meteor;
};

EvalReport evaluate_corpus(const std::vector<std::string>& image_ids,
                           const std::vector<Tokens>& hyps,
                           const std::vector<RefSet>& refs);

}  // namespace capgen

#endif  // CAPGEN_METRICS_H_
