#include "capgen/rerank.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "capgen/error.h"
#include "capgen/rng.h"

namespace capgen {

const std::array<std::string, kNumSentenceFeatures>& sentence_feature_names() {
  static const std::array<std::string, kNumSentenceFeatures> kNames = {
      "log_likelihood", "length", "log_prob_per_word", "log_rank",
      "mentions_0", "mentions_1", "mentions_2", "mentions_3", "mentions_4", "mentions_5",
      "mentions_6", "mentions_7", "mentions_8", "mentions_9", "mentions_10",
      "dmsm_score"};
  return kNames;
}

FeatureVector sentence_features(double log_likelihood, int length, int rank, int mentions,
                                double dmsm_score) {
  if (length <= 0) throw DataError("sentence_features: zero-length sentence");
  if (rank < 1) throw DataError("sentence_features: rank must be >= 1");
  FeatureVector f{};
  f[0] = log_likelihood;
  f[1] = static_cast<double>(length);
  f[2] = log_likelihood / static_cast<double>(length);
  f[3] = std::log(static_cast<double>(rank));
  int m = std::clamp(mentions, 0, 10);
  f[static_cast<size_t>(4 + m)] = 1.0;
  f[15] = dmsm_score;
  return f;
}

double linear_score(const MertWeights& weights, const FeatureVector& features) {
  double s = 0.0;
  for (int i = 0; i < kNumSentenceFeatures; ++i) {
    s += weights[static_cast<size_t>(i)] * features[static_cast<size_t>(i)];
  }
  return s;
}

int rerank_select(const std::vector<FeatureVector>& candidates, const MertWeights& weights) {
  if (candidates.empty()) throw DataError("rerank: empty candidate list");
  int best = 0;
  double best_score = linear_score(weights, candidates[0]);
  for (int i = 1; i < static_cast<int>(candidates.size()); ++i) {
    double s = linear_score(weights, candidates[static_cast<size_t>(i)]);
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return best;
}

double problem_bleu(const MertProblem& problem, const MertWeights& weights) {
  NgramStats agg;
  for (const auto& list : problem.lists) {
    if (list.empty()) throw DataError("mert: empty candidate list");
    int best = 0;
    double best_score = linear_score(weights, list[0].features);
    for (int i = 1; i < static_cast<int>(list.size()); ++i) {
      double s = linear_score(weights, list[static_cast<size_t>(i)].features);
      if (s > best_score) {
        best_score = s;
        best = i;
      }
    }
    agg += list[static_cast<size_t>(best)].bleu;
  }
  return corpus_bleu(agg);
}

namespace {

struct Line {
  double slope = 0.0;
  double intercept = 0.0;
  int candidate = 0;
};

// Upper envelope of per-candidate score lines along one weight dimension:
// the sequence of optimal candidates as the weight sweeps left to right,
// with the thresholds where the optimum changes.
struct Envelope {
  std::vector<int> candidates;     // candidates[0] optimal at -inf
  std::vector<double> thresholds;  // thresholds[i]: switch to candidates[i+1]
};

Envelope upper_envelope(const std::vector<MertCandidate>& list, const MertWeights& weights,
                        int dim) {
  std::vector<Line> lines;
  lines.reserve(list.size());
  for (int c = 0; c < static_cast<int>(list.size()); ++c) {
    Line ln;
    ln.slope = list[static_cast<size_t>(c)].features[static_cast<size_t>(dim)];
    ln.intercept = 0.0;
    for (int k = 0; k < kNumSentenceFeatures; ++k) {
      if (k == dim) continue;
      ln.intercept += weights[static_cast<size_t>(k)] *
                      list[static_cast<size_t>(c)].features[static_cast<size_t>(k)];
    }
    ln.candidate = c;
    lines.push_back(ln);
  }
  std::sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) {
    if (a.slope != b.slope) return a.slope < b.slope;
    if (a.intercept != b.intercept) return a.intercept > b.intercept;
    return a.candidate < b.candidate;
  });
  // Among equal slopes only the highest intercept can ever win.
  std::vector<Line> dedup;
  for (const auto& ln : lines) {
    if (!dedup.empty() && dedup.back().slope == ln.slope) continue;
    dedup.push_back(ln);
  }

  std::vector<Line> hull;
  std::vector<double> start;  // x where hull[i] becomes optimal
  for (const auto& ln : dedup) {
    double x = -std::numeric_limits<double>::infinity();
    while (!hull.empty()) {
      x = (hull.back().intercept - ln.intercept) / (ln.slope - hull.back().slope);
      if (hull.size() > 1 && x <= start.back()) {
        hull.pop_back();
        start.pop_back();
        continue;
      }
      break;
    }
    if (hull.empty()) x = -std::numeric_limits<double>::infinity();
    hull.push_back(ln);
    start.push_back(x);
  }

  Envelope env;
  for (size_t i = 0; i < hull.size(); ++i) {
    env.candidates.push_back(hull[i].candidate);
    if (i > 0) env.thresholds.push_back(start[i]);
  }
  return env;
}

struct SweepEvent {
  double x;
  int image;
  int candidate;
};

// Best value for weights[dim] with all other weights fixed, found by exact
// line search over the merged per-image thresholds. Returns false when BLEU
// is constant along this dimension.
bool line_search(const MertProblem& problem, const MertWeights& weights, int dim,
                 double* best_x, double* best_bleu) {
  std::vector<SweepEvent> events;
  NgramStats agg;
  std::vector<int> current(problem.lists.size());
  for (int img = 0; img < static_cast<int>(problem.lists.size()); ++img) {
    Envelope env = upper_envelope(problem.lists[static_cast<size_t>(img)], weights, dim);
    current[static_cast<size_t>(img)] = env.candidates[0];
    agg += problem.lists[static_cast<size_t>(img)][static_cast<size_t>(env.candidates[0])].bleu;
    for (size_t t = 0; t < env.thresholds.size(); ++t) {
      events.push_back({env.thresholds[t], img, env.candidates[t + 1]});
    }
  }
  if (events.empty()) return false;
  std::sort(events.begin(), events.end(), [](const SweepEvent& a, const SweepEvent& b) {
    if (a.x != b.x) return a.x < b.x;
    if (a.image != b.image) return a.image < b.image;
    return a.candidate < b.candidate;
  });

  *best_x = events.front().x - 1.0;  // leftmost unbounded interval
  *best_bleu = corpus_bleu(agg);

  size_t i = 0;
  while (i < events.size()) {
    double x = events[i].x;
    while (i < events.size() && events[i].x == x) {
      int img = events[i].image;
      agg += problem.lists[static_cast<size_t>(img)][static_cast<size_t>(events[i].candidate)].bleu;
      const NgramStats& old_stats =
          problem.lists[static_cast<size_t>(img)][static_cast<size_t>(current[static_cast<size_t>(img)])].bleu;
      for (int n = 0; n < 4; ++n) {
        agg.matches[static_cast<size_t>(n)] -= old_stats.matches[static_cast<size_t>(n)];
        agg.totals[static_cast<size_t>(n)] -= old_stats.totals[static_cast<size_t>(n)];
      }
      agg.hyp_len -= old_stats.hyp_len;
      agg.ref_len -= old_stats.ref_len;
      current[static_cast<size_t>(img)] = events[i].candidate;
      ++i;
    }
    double mid = i < events.size() ? 0.5 * (x + events[i].x) : x + 1.0;
    double b = corpus_bleu(agg);
    if (b > *best_bleu) {
      *best_bleu = b;
      *best_x = mid;
    }
  }
  return true;
}

}  // namespace

MertWeights mert_optimize(const MertProblem& problem, const MertWeights& init,
                          const MertConfig& config) {
  for (const auto& list : problem.lists) {
    if (list.empty()) throw DataError("mert: empty candidate list");
  }

  MertWeights best_w = init;
  double best_bleu = problem_bleu(problem, init);

  Rng rng = Rng::substream(config.seed, "mert");
  std::vector<MertWeights> starts;
  starts.push_back(init);
  for (int r = 0; r < config.restarts; ++r) {
    MertWeights w{};
    for (auto& v : w) v = rng.next_range(-1.0, 1.0);
    starts.push_back(w);
  }

  for (const auto& start : starts) {
    MertWeights w = start;
    double cur = problem_bleu(problem, w);
    for (int sweep = 0; sweep < config.max_sweeps; ++sweep) {
      double gain = 0.0;
      for (int dim = 0; dim < kNumSentenceFeatures; ++dim) {
        double x = 0.0, predicted = 0.0;
        if (!line_search(problem, w, dim, &x, &predicted)) continue;
        MertWeights candidate = w;
        candidate[static_cast<size_t>(dim)] = x;
        // The envelope predicts the gain; the update is accepted against the
        // actual selection rule so the no-regression contract is exact.
        double actual = problem_bleu(problem, candidate);
        if (actual > cur) {
          gain += actual - cur;
          cur = actual;
          w = candidate;
        }
      }
      if (gain < config.min_gain) break;
    }
    if (cur > best_bleu) {
      best_bleu = cur;
      best_w = w;
    }
  }
  return best_w;
}

}  // namespace capgen
