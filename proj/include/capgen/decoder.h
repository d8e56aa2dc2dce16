#ifndef CAPGEN_DECODER_H_
#define CAPGEN_DECODER_H_

#include <string>
#include <vector>

#include "capgen/melm.h"

namespace capgen {

struct DecoderConfig {
  int beam_width = 200;
  int max_length = 19;
  int m_best = 500;
  int t_cap = 10;            // coverage target starts at min(|detections|, t_cap)
  bool exact_scores = false; // exact softmax instead of unnormalized scores
};

struct Hypothesis {
  LmState state;
  double log_score = 0.0;
  bool complete = false;

  std::vector<int> tokens() const {  // body tokens, start symbol dropped
    return std::vector<int>(state.history.begin() + 1, state.history.end());
  }
};

struct CompletedSentence {
  std::vector<int> tokens;
  double log_score = 0.0;
  int coverage = 0;  // detected words consumed
};

// Candidate extensions: </s>, the most frequent words, the unused detected
// words, and everything observed to follow the last token. Sorted ids,
// deduplicated; the <unk> slot never extends a hypothesis.
std::vector<int> extensions(const Hypothesis& hyp, const CorpusStats& stats,
                            const MelmModel& model);

// Left-to-right stack search: per-length stacks pruned to the top
// `beam_width` partials, paths that emit </s> set aside as completed.
// Completed sentences have at most `max_length` body tokens; partials that
// would exceed that are discarded.
std::vector<CompletedSentence> beam_search(const std::vector<RemainingWord>& detections,
                                           const MelmModel& model, const CorpusStats& stats,
                                           const DecoderConfig& config);

struct MBestEntry {
  std::vector<int> tokens;
  double log_score = 0.0;
  int coverage = 0;
  int rank = 0;  // 1-based position within the list
};

struct MBestList {
  std::vector<MBestEntry> entries;  // descending log_score
  int achieved_t = 0;
  int requested_m = 0;
};

// Keeps sentences covering at least T detected words, relaxing T toward 0
// until at least M qualify, then sorts by log score and truncates to M.
MBestList m_best(const std::vector<CompletedSentence>& completed, int m, int t_init,
                 const Vocabulary& vocab);

std::string sentence_string(const std::vector<int>& tokens, const Vocabulary& vocab);

}  // namespace capgen

#endif  // CAPGEN_DECODER_H_
