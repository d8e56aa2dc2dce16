#include "capgen/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>

#include "capgen/error.h"

namespace capgen {

NgramStats& NgramStats::operator+=(const NgramStats& o) {
  for (int n = 0; n < 4; ++n) {
    matches[static_cast<size_t>(n)] += o.matches[static_cast<size_t>(n)];
    totals[static_cast<size_t>(n)] += o.totals[static_cast<size_t>(n)];
  }
  hyp_len += o.hyp_len;
  ref_len += o.ref_len;
  return *this;
}

namespace {

std::map<std::string, int64_t> count_ngrams(const Tokens& toks, int n) {
  std::map<std::string, int64_t> counts;
  if (static_cast<int>(toks.size()) < n) return counts;
  for (size_t i = 0; i + static_cast<size_t>(n) <= toks.size(); ++i) {
    std::string key;
    for (int j = 0; j < n; ++j) {
      if (j) key.push_back('\x1f');
      key += toks[i + static_cast<size_t>(j)];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace

NgramStats ngram_stats(const Tokens& hyp, const RefSet& refs, int max_n) {
  if (refs.empty()) throw DataError("ngram_stats: no references");
  NgramStats st;
  st.hyp_len = static_cast<int64_t>(hyp.size());

  // Closest reference length; ties go to the shorter reference.
  int64_t best_len = static_cast<int64_t>(refs[0].size());
  for (const auto& r : refs) {
    int64_t len = static_cast<int64_t>(r.size());
    int64_t d_new = std::llabs(len - st.hyp_len);
    int64_t d_old = std::llabs(best_len - st.hyp_len);
    if (d_new < d_old || (d_new == d_old && len < best_len)) best_len = len;
  }
  st.ref_len = best_len;

  for (int n = 1; n <= max_n; ++n) {
    auto hyp_counts = count_ngrams(hyp, n);
    std::map<std::string, int64_t> ref_max;
    for (const auto& r : refs) {
      for (const auto& [key, c] : count_ngrams(r, n)) {
        auto& m = ref_max[key];
        m = std::max(m, c);
      }
    }
    int64_t total = 0;
    int64_t matched = 0;
    for (const auto& [key, c] : hyp_counts) {
      total += c;
      auto it = ref_max.find(key);
      if (it != ref_max.end()) matched += std::min(c, it->second);
    }
    st.totals[static_cast<size_t>(n - 1)] = total;
    st.matches[static_cast<size_t>(n - 1)] = matched;
  }
  return st;
}

double corpus_bleu(const NgramStats& agg, int max_n) {
  double log_prec_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    double m = static_cast<double>(agg.matches[static_cast<size_t>(n - 1)]);
    double t = static_cast<double>(agg.totals[static_cast<size_t>(n - 1)]);
    double p;
    if (n == 1) {
      if (t <= 0.0) return 0.0;
      if (m <= 0.0) return 0.0;
      p = m / t;
    } else {
      p = (m + 1.0) / (t + 1.0);
    }
    log_prec_sum += std::log(p);
  }
  double bp = 1.0;
  if (agg.hyp_len < agg.ref_len && agg.hyp_len > 0) {
    bp = std::exp(1.0 - static_cast<double>(agg.ref_len) / static_cast<double>(agg.hyp_len));
  }
  return bp * std::exp(log_prec_sum / static_cast<double>(max_n));
}

double bleu(const std::vector<Tokens>& hyps, const std::vector<RefSet>& refs, int max_n) {
  if (hyps.empty()) throw DataError("bleu: empty hypothesis set");
  if (hyps.size() != refs.size()) throw DataError("bleu: hypothesis/reference count mismatch");
  NgramStats agg;
  for (size_t i = 0; i < hyps.size(); ++i) agg += ngram_stats(hyps[i], refs[i], max_n);
  return corpus_bleu(agg, max_n);
}

std::string stem_lite(const std::string& word) {
  auto ends_with = [&](const char* suf) {
    size_t n = std::char_traits<char>::length(suf);
    return word.size() >= n && word.compare(word.size() - n, n, suf) == 0;
  };
  std::string stem = word;
  bool stripped_vc = false;  // stripped a suffix that can leave a doubled consonant
  if (ends_with("ing") && word.size() > 5) {
    stem = word.substr(0, word.size() - 3);
    stripped_vc = true;
  } else if (ends_with("ed") && word.size() > 4) {
    stem = word.substr(0, word.size() - 2);
    stripped_vc = true;
  } else if (ends_with("es") && word.size() > 4) {
    stem = word.substr(0, word.size() - 2);
  } else if (ends_with("s") && !ends_with("ss") && word.size() > 3) {
    stem = word.substr(0, word.size() - 1);
  }
  if (stripped_vc && stem.size() >= 2 && stem[stem.size() - 1] == stem[stem.size() - 2]) {
    stem.pop_back();  // running -> runn -> run
  }
  return stem;
}

namespace {

struct Alignment {
  int matches = 0;
  int chunks = 0;
};

// Exact matches first, then stem matches, each greedy left to right.
Alignment align_unigrams(const Tokens& hyp, const Tokens& ref) {
  std::vector<int> hyp_to_ref(hyp.size(), -1);
  std::vector<bool> ref_used(ref.size(), false);
  for (size_t i = 0; i < hyp.size(); ++i) {
    for (size_t j = 0; j < ref.size(); ++j) {
      if (!ref_used[j] && hyp[i] == ref[j]) {
        hyp_to_ref[i] = static_cast<int>(j);
        ref_used[j] = true;
        break;
      }
    }
  }
  for (size_t i = 0; i < hyp.size(); ++i) {
    if (hyp_to_ref[i] >= 0) continue;
    std::string hs = stem_lite(hyp[i]);
    for (size_t j = 0; j < ref.size(); ++j) {
      if (!ref_used[j] && hs == stem_lite(ref[j])) {
        hyp_to_ref[i] = static_cast<int>(j);
        ref_used[j] = true;
        break;
      }
    }
  }
  Alignment out;
  int prev_ref = -2;
  for (size_t i = 0; i < hyp.size(); ++i) {
    if (hyp_to_ref[i] < 0) continue;
    ++out.matches;
    if (hyp_to_ref[i] != prev_ref + 1) ++out.chunks;
    prev_ref = hyp_to_ref[i];
  }
  return out;
}

}  // namespace

double meteor_lite(const Tokens& hyp, const RefSet& refs) {
  if (refs.empty()) throw DataError("meteor_lite: no references");
  double best = 0.0;
  for (const auto& ref : refs) {
    Alignment a = align_unigrams(hyp, ref);
    if (a.matches == 0 || hyp.empty() || ref.empty()) continue;
    double p = static_cast<double>(a.matches) / static_cast<double>(hyp.size());
    double r = static_cast<double>(a.matches) / static_cast<double>(ref.size());
    double f = 10.0 * p * r / (r + 9.0 * p);
    double frag = static_cast<double>(a.chunks - 1) / static_cast<double>(a.matches);
    double penalty = 0.5 * frag * frag * frag;
    best = std::max(best, f * (1.0 - penalty));
  }
  return best;
}

EvalReport evaluate_corpus(const std::vector<std::string>& image_ids,
                           const std::vector<Tokens>& hyps,
                           const std::vector<RefSet>& refs) {
  if (hyps.empty()) throw DataError("evaluate_corpus: empty hypothesis set");
  if (hyps.size() != refs.size() || hyps.size() != image_ids.size()) {
    throw DataError("evaluate_corpus: id/hypothesis/reference count mismatch");
  }
  EvalReport rep;
  NgramStats agg;
  int max_refs = 0;
  double meteor_sum = 0.0;
  for (size_t i = 0; i < hyps.size(); ++i) {
    NgramStats st = ngram_stats(hyps[i], refs[i]);
    agg += st;
    max_refs = std::max(max_refs, static_cast<int>(refs[i].size()));
    double sb = corpus_bleu(st);
    double sm = meteor_lite(hyps[i], refs[i]);
    meteor_sum += sm;
    rep.image_ids.push_back(image_ids[i]);
    rep.sentence_bleu.push_back(sb);
    rep.sentence_meteor.push_back(sm);
  }
  for (int k = 1; k <= 4; ++k) rep.bleu_n[static_cast<size_t>(k - 1)] = corpus_bleu(agg, k);
  rep.meteor = meteor_sum / static_cast<double>(hyps.size());
  rep.reference_count = max_refs;
  return rep;
}

}  // namespace capgen
