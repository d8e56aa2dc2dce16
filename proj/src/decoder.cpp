#include "capgen/decoder.h"

#include <algorithm>
#include <set>

#include "capgen/error.h"

namespace capgen {

namespace {

// Lexicographic order on the word strings of two token sequences.
bool lex_less(const std::vector<int>& a, const std::vector<int>& b, const Vocabulary& vocab) {
  size_t n = std::min(a.size(), b.size());
  for (size_t i = 0; i < n; ++i) {
    if (a[i] == b[i]) continue;
    return vocab.word(a[i]) < vocab.word(b[i]);
  }
  return a.size() < b.size();
}

}  // namespace

std::string sentence_string(const std::vector<int>& tokens, const Vocabulary& vocab) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += vocab.word(tokens[i]);
  }
  return out;
}

std::vector<int> extensions(const Hypothesis& hyp, const CorpusStats& stats,
                            const MelmModel& model) {
  const Vocabulary& vocab = model.vocab();
  std::set<int> cands;
  cands.insert(model.end_id());
  for (int id : stats.frequent_words) cands.insert(id);
  for (const auto& w : hyp.state.remaining) cands.insert(w.id);
  for (int id : stats.successors(hyp.state.history.back())) cands.insert(id);
  std::vector<int> out;
  out.reserve(cands.size());
  for (int id : cands) {
    if (id != model.end_id() && vocab.is_unk(id)) continue;
    out.push_back(id);
  }
  return out;
}

std::vector<CompletedSentence> beam_search(const std::vector<RemainingWord>& detections,
                                           const MelmModel& model, const CorpusStats& stats,
                                           const DecoderConfig& config) {
  if (config.beam_width < 1) throw ConfigError("beam_width must be >= 1");
  if (config.max_length < 1) throw ConfigError("max_length must be >= 1");

  const int total_detections = static_cast<int>(detections.size());
  const Vocabulary& vocab = model.vocab();

  std::vector<CompletedSentence> completed;
  std::vector<Hypothesis> stack;
  {
    Hypothesis root;
    root.state = LmState::initial(detections);
    stack.push_back(std::move(root));
  }

  for (int length = 0; length <= config.max_length && !stack.empty(); ++length) {
    std::vector<Hypothesis> next;
    for (const Hypothesis& hyp : stack) {
      std::vector<int> cands = extensions(hyp, stats, model);
      std::vector<double> log_probs;
      if (config.exact_scores) log_probs = model.candidate_log_probs(hyp.state);
      for (int cand : cands) {
        double step = config.exact_scores ? log_probs[static_cast<size_t>(cand)]
                                          : model.unnormalized_score(hyp.state, cand);
        if (cand == model.end_id()) {
          CompletedSentence s;
          s.tokens = hyp.tokens();
          s.log_score = hyp.log_score + step;
          s.coverage = total_detections - static_cast<int>(hyp.state.remaining.size());
          completed.push_back(std::move(s));
          continue;
        }
        if (length + 1 > config.max_length) continue;  // would exceed L, discard
        Hypothesis ext;
        ext.state = advance(hyp.state, cand);
        ext.log_score = hyp.log_score + step;
        next.push_back(std::move(ext));
      }
    }
    if (static_cast<int>(next.size()) > config.beam_width) {
      std::sort(next.begin(), next.end(), [&](const Hypothesis& a, const Hypothesis& b) {
        if (a.log_score != b.log_score) return a.log_score > b.log_score;
        return lex_less(a.tokens(), b.tokens(), vocab);
      });
      next.resize(static_cast<size_t>(config.beam_width));
    }
    stack = std::move(next);
  }
  return completed;
}

MBestList m_best(const std::vector<CompletedSentence>& completed, int m, int t_init,
                 const Vocabulary& vocab) {
  if (t_init < 0) throw ConfigError("m_best: T must be >= 0");
  MBestList out;
  out.requested_m = m;
  if (completed.empty()) {
    out.achieved_t = 0;
    return out;
  }

  int t = t_init;
  auto count_qualifying = [&](int target) {
    int n = 0;
    for (const auto& s : completed) {
      if (s.coverage >= target) ++n;
    }
    return n;
  };
  while (t > 0 && count_qualifying(t) < m) --t;
  out.achieved_t = t;

  std::vector<const CompletedSentence*> selected;
  for (const auto& s : completed) {
    if (s.coverage >= t) selected.push_back(&s);
  }
  std::sort(selected.begin(), selected.end(),
            [&](const CompletedSentence* a, const CompletedSentence* b) {
              if (a->log_score != b->log_score) return a->log_score > b->log_score;
              return lex_less(a->tokens, b->tokens, vocab);
            });
  if (static_cast<int>(selected.size()) > m) selected.resize(static_cast<size_t>(m));
  for (size_t i = 0; i < selected.size(); ++i) {
    MBestEntry e;
    e.tokens = selected[i]->tokens;
    e.log_score = selected[i]->log_score;
    e.coverage = selected[i]->coverage;
    e.rank = static_cast<int>(i) + 1;
    out.entries.push_back(std::move(e));
  }
  return out;
}

}  // namespace capgen
