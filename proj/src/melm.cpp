#include "capgen/melm.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "capgen/error.h"
#include "capgen/hashing.h"
#include "capgen/rng.h"

namespace capgen {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

double log_sigmoid(double z) {
  if (z >= 0.0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

}  // namespace

uint64_t FeatureKey::hash() const {
  uint64_t h = kFnvOffset;
  for (int id : ngram) h = fnv1a64_u32(static_cast<uint32_t>(id), h);
  unsigned char tag = static_cast<unsigned char>(tmpl);
  return fnv1a64(&tag, 1, h);
}

std::string FeatureKey::to_string(const Vocabulary& vocab) const {
  std::string out;
  switch (tmpl) {
    case FeatureTemplate::kAttribute: out = "Attribute"; break;
    case FeatureTemplate::kNGramPlus: out = "NGram+"; break;
    case FeatureTemplate::kNGramMinus: out = "NGram-"; break;
    case FeatureTemplate::kEnd: out = "End"; break;
    case FeatureTemplate::kScore: out = "Score"; break;
  }
  if (!ngram.empty()) {
    out.push_back(':');
    for (size_t i = 0; i < ngram.size(); ++i) {
      if (i) out.push_back(' ');
      int id = ngram[i];
      if (id == kStartId) {
        out += kStartSymbol;
      } else if (id == vocab.size()) {
        out += kEndSymbol;
      } else {
        out += vocab.word(id);
      }
    }
  }
  return out;
}

LmState LmState::initial(std::vector<RemainingWord> detections) {
  std::sort(detections.begin(), detections.end(),
            [](const RemainingWord& a, const RemainingWord& b) { return a.id < b.id; });
  LmState s;
  s.history.push_back(kStartId);
  s.remaining = std::move(detections);
  return s;
}

bool LmState::in_remaining(int id, double* log_score) const {
  auto it = std::lower_bound(remaining.begin(), remaining.end(), id,
                             [](const RemainingWord& w, int v) { return w.id < v; });
  if (it == remaining.end() || it->id != id) return false;
  if (log_score) *log_score = it->log_score;
  return true;
}

LmState advance(const LmState& state, int token) {
  LmState next = state;
  next.history.push_back(token);
  auto it = std::lower_bound(next.remaining.begin(), next.remaining.end(), token,
                             [](const RemainingWord& w, int v) { return w.id < v; });
  if (it != next.remaining.end() && it->id == token) next.remaining.erase(it);
  return next;
}

std::vector<RemainingWord> to_remaining(const DetectedWordSet& detections, const Vocabulary& vocab,
                                        ScoreSource source) {
  std::vector<RemainingWord> out;
  for (const auto& d : detections.entries) {
    auto id = vocab.lookup(d.word);
    if (!id) continue;
    double p = source == ScoreSource::kImageProb ? d.image_prob : d.raw_score;
    double lp = p > 0.0 ? std::log(p) : kScoreFloorLog;
    out.push_back({*id, std::max(lp, kScoreFloorLog)});
  }
  std::sort(out.begin(), out.end(),
            [](const RemainingWord& a, const RemainingWord& b) { return a.id < b.id; });
  return out;
}

LmExample make_lm_example(const Caption& caption, const DetectedWordSet& detections,
                          const Vocabulary& vocab, ScoreSource source) {
  LmExample ex;
  for (const auto& tok : caption.tokens) {
    auto id = vocab.lookup_or_unk(tok);
    if (!id) {
      throw DataError("make_lm_example: token \"" + tok + "\" is out of vocabulary and no " +
                      kUnkSymbol + " slot exists");
    }
    ex.tokens.push_back(*id);
  }
  ex.detections = to_remaining(detections, vocab, source);
  return ex;
}

MelmModel::MelmModel(std::shared_ptr<const Vocabulary> vocab, MelmConfig config)
    : vocab_(std::move(vocab)), config_(config) {
  if (config_.hash_bits < 4 || config_.hash_bits > 30) {
    throw ConfigError("melm hash_bits out of range [4, 30]");
  }
  weights_.assign(size_t{1} << config_.hash_bits, 0.0);
}

std::string MelmModel::token_string(int id) const {
  if (id == kStartId) return kStartSymbol;
  if (id == end_id()) return kEndSymbol;
  return vocab_->word(id);
}

std::vector<Feature> MelmModel::extract_features(const LmState& state, int candidate) const {
  std::vector<Feature> feats;
  double log_score = 0.0;
  const bool in_attr = state.in_remaining(candidate, &log_score);

  if (in_attr) feats.push_back({{FeatureTemplate::kAttribute, {}}, 1.0});

  const int hist = static_cast<int>(state.history.size());
  for (int n = 1; n <= config_.n_max; ++n) {
    if (n - 1 > hist) break;
    FeatureKey key;
    key.tmpl = in_attr ? FeatureTemplate::kNGramPlus : FeatureTemplate::kNGramMinus;
    key.ngram.reserve(static_cast<size_t>(n));
    for (int j = hist - (n - 1); j < hist; ++j) key.ngram.push_back(state.history[static_cast<size_t>(j)]);
    key.ngram.push_back(candidate);
    feats.push_back({std::move(key), 1.0});
  }

  if (state.remaining.empty()) {
    feats.push_back({{FeatureTemplate::kEnd, {candidate}}, 1.0});
  }
  if (in_attr && config_.use_score_feature) {
    feats.push_back({{FeatureTemplate::kScore, {}}, log_score});
  }
  return feats;
}

uint32_t MelmModel::slot_of(const FeatureKey& key) const {
  return static_cast<uint32_t>(key.hash() & ((uint64_t{1} << config_.hash_bits) - 1));
}

double MelmModel::weight(const FeatureKey& key) const { return weights_[slot_of(key)]; }

void MelmModel::set_weight(const FeatureKey& key, double w) { weights_[slot_of(key)] = w; }

double MelmModel::unnormalized_score(const LmState& state, int candidate) const {
  double score = 0.0;
  for (const auto& f : extract_features(state, candidate)) {
    score += weights_[slot_of(f.key)] * f.value;
  }
  return score;
}

std::vector<double> MelmModel::candidate_log_probs(const LmState& state) const {
  const int n = candidate_count();
  std::vector<double> scores(static_cast<size_t>(n));
  double max_score = -std::numeric_limits<double>::infinity();
  for (int v = 0; v < n; ++v) {
    scores[static_cast<size_t>(v)] = unnormalized_score(state, v);
    max_score = std::max(max_score, scores[static_cast<size_t>(v)]);
  }
  double z = 0.0;
  for (int v = 0; v < n; ++v) z += std::exp(scores[static_cast<size_t>(v)] - max_score);
  double log_z = max_score + std::log(z);
  if (!std::isfinite(log_z)) throw NumericError("melm: non-finite normalizer");
  for (auto& s : scores) s -= log_z;
  return scores;
}

double MelmModel::word_prob_exact(const LmState& state, int candidate) const {
  return std::exp(candidate_log_probs(state)[static_cast<size_t>(candidate)]);
}

void MelmModel::build_noise(const std::vector<LmExample>& examples) {
  const size_t n = static_cast<size_t>(candidate_count());
  std::vector<int64_t> counts(n, 0);
  int64_t total = 0;
  for (const auto& ex : examples) {
    for (int t : ex.tokens) {
      ++counts[static_cast<size_t>(t)];
      ++total;
    }
    ++counts[static_cast<size_t>(end_id())];
    ++total;
  }
  // Add-one smoothing keeps q strictly positive over the whole candidate set.
  noise_log_prob_.resize(n);
  noise_cdf_.resize(n);
  double denom = static_cast<double>(total) + static_cast<double>(n);
  double cum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double q = (static_cast<double>(counts[i]) + 1.0) / denom;
    noise_log_prob_[i] = std::log(q);
    cum += q;
    noise_cdf_[i] = cum;
  }
  noise_cdf_.back() = 1.0;
}

double MelmModel::noise_log_prob(int candidate) const {
  return noise_log_prob_.at(static_cast<size_t>(candidate));
}

int MelmModel::sample_noise(Rng& rng) const {
  double u = rng.next_double();
  auto it = std::lower_bound(noise_cdf_.begin(), noise_cdf_.end(), u);
  if (it == noise_cdf_.end()) --it;
  return static_cast<int>(it - noise_cdf_.begin());
}

namespace {

struct SlotValue {
  uint32_t slot;
  double value;
};

}  // namespace

double MelmModel::nce_position_objective(const LmState& state, int gold,
                                         const std::vector<int>& noise) const {
  const double log_k = std::log(static_cast<double>(noise.size()));
  double obj = log_sigmoid(unnormalized_score(state, gold) - log_k - noise_log_prob(gold));
  for (int v : noise) {
    obj += log_sigmoid(-(unnormalized_score(state, v) - log_k - noise_log_prob(v)));
  }
  return obj;
}

std::unordered_map<uint32_t, double> MelmModel::nce_position_gradient(
    const LmState& state, int gold, const std::vector<int>& noise) const {
  const double log_k = std::log(static_cast<double>(noise.size()));
  std::unordered_map<uint32_t, double> grad;
  auto accumulate = [&](int candidate, bool is_data) {
    double score = 0.0;
    std::vector<SlotValue> sv;
    for (const auto& f : extract_features(state, candidate)) {
      uint32_t slot = slot_of(f.key);
      score += weights_[slot] * f.value;
      sv.push_back({slot, f.value});
    }
    double delta = score - log_k - noise_log_prob(candidate);
    double g = is_data ? sigmoid(-delta) : -sigmoid(delta);
    for (const auto& [slot, value] : sv) grad[slot] += g * value;
  };
  accumulate(gold, true);
  for (int v : noise) accumulate(v, false);
  return grad;
}

NceTrainReport MelmModel::train_nce(const std::vector<LmExample>& examples, uint64_t seed) {
  NceTrainReport report;
  if (examples.empty() || config_.epochs <= 0) return report;

  build_noise(examples);
  Rng rng = Rng::substream(seed, "nce");

  std::unordered_set<uint64_t> keys_seen;
  std::unordered_set<uint32_t> slots_seen;
  std::vector<int> noise(static_cast<size_t>(config_.nce_samples));

  for (int epoch = 1; epoch <= config_.epochs; ++epoch) {
    const double lr = config_.learning_rate / std::sqrt(static_cast<double>(epoch));
    double objective = 0.0;
    for (const auto& ex : examples) {
      LmState state = LmState::initial(ex.detections);
      std::vector<int> sentence = ex.tokens;
      sentence.push_back(end_id());
      for (int gold : sentence) {
        for (auto& v : noise) v = sample_noise(rng);
        if (epoch == 1) {
          auto track = [&](int candidate) {
            for (const auto& f : extract_features(state, candidate)) {
              uint64_t h = f.key.hash();
              keys_seen.insert(h);
              slots_seen.insert(static_cast<uint32_t>(h & ((uint64_t{1} << config_.hash_bits) - 1)));
            }
          };
          track(gold);
          for (int v : noise) track(v);
        }
        objective += nce_position_objective(state, gold, noise);
        for (const auto& [slot, g] : nce_position_gradient(state, gold, noise)) {
          double w = weights_[slot] + lr * g;
          if (!std::isfinite(w)) {
            throw NumericError("train_nce: non-finite update at slot " + std::to_string(slot));
          }
          weights_[slot] = w;
        }
        state = advance(state, gold);
      }
    }
    report.epoch_objectives.push_back(objective);
  }

  report.distinct_keys = static_cast<int64_t>(keys_seen.size());
  report.used_slots = static_cast<int64_t>(slots_seen.size());
  report.collision_rate =
      keys_seen.empty()
          ? 0.0
          : 1.0 - static_cast<double>(slots_seen.size()) / static_cast<double>(keys_seen.size());
  return report;
}

double MelmModel::perplexity(const std::vector<LmExample>& examples) const {
  double sum_log2 = 0.0;
  int64_t tokens = 0;
  for (const auto& ex : examples) {
    LmState state = LmState::initial(ex.detections);
    std::vector<int> sentence = ex.tokens;
    sentence.push_back(end_id());
    for (int gold : sentence) {
      std::vector<double> log_probs = candidate_log_probs(state);
      double lp = log_probs[static_cast<size_t>(gold)];
      if (!std::isfinite(lp)) throw NumericError("perplexity: zero-probability event");
      sum_log2 += lp / std::log(2.0);
      ++tokens;
      state = advance(state, gold);
    }
  }
  if (tokens == 0) throw DataError("perplexity: no tokens");
  return std::exp2(-sum_log2 / static_cast<double>(tokens));
}

}  // namespace capgen
