#include "capgen/mil.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>
#include <thread>

#include "capgen/error.h"
#include "capgen/rng.h"

namespace capgen {

namespace {

constexpr double kFloor = 1e-12;

double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

bool RegionBag::is_positive(int word) const {
  return std::binary_search(positive_words.begin(), positive_words.end(), word);
}

MilModel::MilModel(std::shared_ptr<const Vocabulary> vocab, int dim)
    : vocab_(std::move(vocab)), dim_(dim) {
  detectors_.resize(static_cast<size_t>(vocab_->size()));
  for (auto& d : detectors_) d.v = Eigen::VectorXd::Zero(dim_);
}

double MilModel::bag_prob(int word, const Eigen::MatrixXd& regions) const {
  const WordDetector& det = detectors_.at(static_cast<size_t>(word));
  std::vector<double> probs;
  probs.reserve(static_cast<size_t>(regions.rows()));
  for (Eigen::Index r = 0; r < regions.rows(); ++r) {
    probs.push_back(instance_prob(regions.row(r).transpose(), det.v, det.u));
  }
  return noisy_or(probs);
}

double MilModel::max_instance_prob(int word, const Eigen::MatrixXd& regions) const {
  const WordDetector& det = detectors_.at(static_cast<size_t>(word));
  double best = 0.0;
  for (Eigen::Index r = 0; r < regions.rows(); ++r) {
    best = std::max(best, instance_prob(regions.row(r).transpose(), det.v, det.u));
  }
  return best;
}

double instance_prob(const Eigen::VectorXd& features, const Eigen::VectorXd& v, double u) {
  if (features.size() != v.size()) throw DataError("instance_prob: dimension mismatch");
  if (!features.allFinite() || !v.allFinite() || !std::isfinite(u)) {
    throw NumericError("instance_prob: non-finite input");
  }
  return sigmoid(v.dot(features) + u);
}

double noisy_or(const std::vector<double>& instance_probs) {
  if (instance_probs.empty()) throw DataError("noisy_or: empty bag");
  double prod = 1.0;
  for (double p : instance_probs) {
    if (p < 0.0 || p > 1.0 || !std::isfinite(p)) {
      throw NumericError("noisy_or: probability outside [0,1]");
    }
    prod *= (1.0 - p);
  }
  return 1.0 - prod;
}

double mil_bag_loss(const WordDetector& det, const RegionBag& bag, bool positive) {
  double prod = 1.0;
  for (Eigen::Index r = 0; r < bag.regions.rows(); ++r) {
    double p = instance_prob(bag.regions.row(r).transpose(), det.v, det.u);
    prod *= std::max(1.0 - p, kFloor);
  }
  double bag_p = 1.0 - prod;
  if (positive) return -std::log(std::max(bag_p, kFloor));
  return -std::log(std::max(prod, kFloor));
}

void mil_bag_gradient(const WordDetector& det, const RegionBag& bag, bool positive,
                      Eigen::VectorXd* grad_v, double* grad_u) {
  const Eigen::Index n = bag.regions.rows();
  std::vector<double> probs(static_cast<size_t>(n));
  double prod = 1.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    probs[static_cast<size_t>(r)] = instance_prob(bag.regions.row(r).transpose(), det.v, det.u);
    prod *= std::max(1.0 - probs[static_cast<size_t>(r)], kFloor);
  }
  double bag_p = 1.0 - prod;

  grad_v->setZero(det.v.size());
  *grad_u = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    double p = probs[static_cast<size_t>(r)];
    // d loss / d z_r via the noisy-OR chain rule; z_r is the pre-sigmoid
    // activation of region r.
    double dz = positive ? -p * prod / std::max(bag_p, kFloor) : p;
    grad_v->noalias() += dz * bag.regions.row(r).transpose();
    *grad_u += dz;
  }
}

namespace {

struct WordTrainResult {
  WordDetector detector;
  std::vector<double> epoch_losses;
  bool skipped = false;
};

WordTrainResult train_word(int word, const std::vector<RegionBag>& bags,
                           int dim, const MilConfig& config) {
  WordTrainResult out;
  out.detector.v = Eigen::VectorXd::Zero(dim);

  int positives = 0;
  for (const auto& b : bags) {
    if (b.is_positive(word)) ++positives;
  }
  int negatives = static_cast<int>(bags.size()) - positives;
  if (positives == 0 || negatives == 0) {
    out.skipped = true;
    return out;
  }

  // Start at the base-rate predictor.
  double rate = static_cast<double>(positives) / static_cast<double>(bags.size());
  out.detector.u = std::log(rate / (1.0 - rate));

  Rng rng = Rng::substream(config.seed, "mil-word-" + std::to_string(word));
  std::vector<int> order(bags.size());
  for (size_t i = 0; i < bags.size(); ++i) order[i] = static_cast<int>(i);

  Eigen::VectorXd grad_v(dim);
  double grad_u = 0.0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (size_t step = 0; step < order.size(); ++step) {
      const RegionBag& bag = bags[static_cast<size_t>(order[step])];
      bool positive = bag.is_positive(word);
      double loss = mil_bag_loss(out.detector, bag, positive);
      if (!std::isfinite(loss)) {
        throw NumericError("train_mil: divergent loss for word id " + std::to_string(word) +
                           " at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
      }
      epoch_loss += loss;
      mil_bag_gradient(out.detector, bag, positive, &grad_v, &grad_u);
      out.detector.v.noalias() -= config.learning_rate * grad_v;
      out.detector.u -= config.learning_rate * grad_u;
    }
    out.epoch_losses.push_back(epoch_loss);
  }
  out.detector.trained = true;
  return out;
}

}  // namespace

MilModel train_mil(const std::vector<RegionBag>& train,
                   std::shared_ptr<const Vocabulary> vocab, const MilConfig& config) {
  if (train.empty()) throw DataError("train_mil: no training bags");
  const int dim = static_cast<int>(train.front().regions.cols());
  for (const auto& b : train) {
    if (b.regions.cols() != dim) {
      throw DataError("train_mil: inconsistent region dimensionality in bag " + b.image_id);
    }
    if (b.regions.rows() == 0) throw DataError("train_mil: empty bag " + b.image_id);
  }

  MilModel model(vocab, dim);
  const int n_words = model.word_count();
  std::vector<WordTrainResult> results(static_cast<size_t>(n_words));

  auto run_range = [&](std::atomic<int>& cursor) {
    for (;;) {
      int w = cursor.fetch_add(1);
      if (w >= n_words) break;
      if (vocab->is_unk(w)) {
        results[static_cast<size_t>(w)].skipped = true;
        results[static_cast<size_t>(w)].detector.v = Eigen::VectorXd::Zero(dim);
        continue;
      }
      results[static_cast<size_t>(w)] = train_word(w, train, dim, config);
    }
  };

  std::atomic<int> cursor{0};
  int threads = std::max(1, config.threads);
  if (threads == 1) {
    run_range(cursor);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back([&] { run_range(cursor); });
    for (auto& th : pool) th.join();
  }

  model.epoch_losses.assign(static_cast<size_t>(config.epochs), 0.0);
  for (int w = 0; w < n_words; ++w) {
    auto& r = results[static_cast<size_t>(w)];
    if (r.skipped) {
      if (!vocab->is_unk(w)) model.skipped_words.push_back(vocab->word(w));
      continue;
    }
    model.detector(w) = std::move(r.detector);
    for (size_t e = 0; e < r.epoch_losses.size(); ++e) model.epoch_losses[e] += r.epoch_losses[e];
  }
  model.trained_epochs = config.epochs;
  return model;
}

std::optional<double> CalibrationTable::precision_at(int word, double score) const {
  auto it = curves.find(word);
  if (it == curves.end() || it->second.empty()) return std::nullopt;
  const auto& pts = it->second;
  auto pos = std::lower_bound(pts.begin(), pts.end(), score,
                              [](const CalibrationPoint& p, double s) { return p.threshold < s; });
  if (pos == pts.end()) return pts.back().precision;
  return pos->precision;
}

CalibrationTable calibrate(const MilModel& model, const std::vector<RegionBag>& heldout,
                           const std::vector<std::string>& training_ids, double tau) {
  std::set<std::string> train_set(training_ids.begin(), training_ids.end());
  for (const auto& b : heldout) {
    if (train_set.count(b.image_id)) {
      throw DataError("calibrate: held-out bag " + b.image_id + " overlaps the training set");
    }
  }
  CalibrationTable table;
  table.tau = tau;
  for (int w = 0; w < model.word_count(); ++w) {
    if (!model.detector(w).trained) continue;
    std::vector<std::pair<double, bool>> scored;  // (image prob, label)
    for (const auto& b : heldout) {
      scored.emplace_back(model.bag_prob(w, b.regions), b.is_positive(w));
    }
    std::set<double> thresholds;
    for (const auto& [p, label] : scored) {
      if (p > 0.0) thresholds.insert(p);
    }
    std::vector<CalibrationPoint> curve;
    for (double t : thresholds) {
      int64_t kept = 0, correct = 0;
      for (const auto& [p, label] : scored) {
        if (p >= t) {
          ++kept;
          if (label) ++correct;
        }
      }
      if (kept == 0) continue;  // threshold above every observed probability
      curve.push_back({t, static_cast<double>(correct) / static_cast<double>(kept)});
    }
    table.curves.emplace(w, std::move(curve));
  }
  return table;
}

DetectedWordSet detect_words(const MilModel& model, const CalibrationTable& calibration,
                             const RegionBag& bag, const CorpusStats& stats) {
  DetectedWordSet out;
  out.image_id = bag.image_id;
  for (int w = 0; w < model.word_count(); ++w) {
    if (!model.detector(w).trained) continue;
    const std::string& word = model.vocab().word(w);
    if (stats.is_closed_class(word)) continue;
    double image_prob = model.bag_prob(w, bag.regions);
    auto precision = calibration.precision_at(w, image_prob);
    if (!precision || *precision < calibration.tau) continue;
    Detection d;
    d.word_id = w;
    d.word = word;
    d.image_prob = image_prob;
    d.raw_score = model.max_instance_prob(w, bag.regions);
    out.entries.push_back(std::move(d));
  }
  std::sort(out.entries.begin(), out.entries.end(), [](const Detection& a, const Detection& b) {
    if (a.image_prob != b.image_prob) return a.image_prob > b.image_prob;
    return a.word < b.word;
  });
  return out;
}

std::vector<RegionBag> make_bags(const Dataset& ds, const std::vector<int>& indices,
                                 const Vocabulary& vocab) {
  std::vector<RegionBag> bags;
  bags.reserve(indices.size());
  for (int i : indices) {
    const DatasetEntry& e = ds.entries.at(static_cast<size_t>(i));
    RegionBag bag;
    bag.image_id = e.image_id;
    bag.regions = e.regions;
    std::set<int> pos;
    for (const auto& cap : e.captions) {
      for (const auto& tok : cap.tokens) {
        auto id = vocab.lookup(tok);
        if (id && !vocab.is_unk(*id)) pos.insert(*id);
      }
    }
    bag.positive_words.assign(pos.begin(), pos.end());
    bags.push_back(std::move(bag));
  }
  return bags;
}

}  // namespace capgen
