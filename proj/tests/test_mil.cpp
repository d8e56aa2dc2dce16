#include <doctest.h>

#include <cmath>
#include <memory>

#include "capgen/error.h"
#include "capgen/mil.h"
#include "capgen/rng.h"

using namespace capgen;

namespace {

Eigen::VectorXd random_vec(int dim, Rng& rng, double scale = 1.0) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = scale * rng.next_range(-1.0, 1.0);
  return v;
}

RegionBag bag_of(std::vector<Eigen::VectorXd> rows, std::vector<int> positives,
                 const std::string& id = "b") {
  RegionBag bag;
  bag.image_id = id;
  bag.regions.resize(static_cast<Eigen::Index>(rows.size()), rows.at(0).size());
  for (size_t r = 0; r < rows.size(); ++r) bag.regions.row(static_cast<Eigen::Index>(r)) = rows[r];
  bag.positive_words = std::move(positives);
  return bag;
}

}  // namespace

TEST_CASE("instance_prob closed forms") {
  Eigen::VectorXd zero2 = Eigen::VectorXd::Zero(2);
  CHECK(instance_prob(Eigen::VectorXd::Random(2), zero2, 0.0) == doctest::Approx(0.5));

  Eigen::VectorXd v(2);
  v << 1.0, 0.0;
  Eigen::VectorXd phi(2);
  phi << std::log(3.0), 7.0;
  CHECK(instance_prob(phi, v, 0.0) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("instance_prob matches the scalar sigmoid oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    int dim = 1 + static_cast<int>(rng.next_below(6));
    Eigen::VectorXd v = random_vec(dim, rng, 2.0);
    Eigen::VectorXd phi = random_vec(dim, rng, 2.0);
    double u = rng.next_range(-2.0, 2.0);
    double z = u;
    for (int i = 0; i < dim; ++i) z += v[i] * phi[i];
    double oracle = 1.0 / (1.0 + std::exp(-z));
    CHECK(instance_prob(phi, v, u) == doctest::Approx(oracle).epsilon(1e-12));
  }
}

TEST_CASE("instance_prob is monotone in the activation") {
  Rng rng(2);
  Eigen::VectorXd v = random_vec(3, rng);
  double prev = -1.0;
  for (double a = -5.0; a <= 5.0; a += 0.25) {
    Eigen::VectorXd phi = v * a / v.squaredNorm();  // v.phi == a
    double p = instance_prob(phi, v, 0.0);
    CHECK(p > prev);
    prev = p;
  }
}

TEST_CASE("instance_prob rejects non-finite input") {
  Eigen::VectorXd v(1), phi(1);
  v << 1.0;
  phi << std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(instance_prob(phi, v, 0.0), NumericError);
}

TEST_CASE("noisy_or closed forms") {
  CHECK(noisy_or({0.0, 0.0, 0.0}) == doctest::Approx(0.0));
  CHECK(noisy_or({0.5, 0.5}) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK_THROWS_AS(noisy_or({}), DataError);
}

TEST_CASE("noisy_or matches the direct product oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    size_t n = 1 + rng.next_below(6);
    std::vector<double> probs;
    double off = 1.0;
    for (size_t i = 0; i < n; ++i) {
      probs.push_back(rng.next_double());
      off *= 1.0 - probs.back();
    }
    CHECK(noisy_or(probs) == doctest::Approx(1.0 - off).epsilon(1e-14));
  }
}

TEST_CASE("noisy_or bounds and edge behaviour") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    size_t n = 1 + rng.next_below(5);
    std::vector<double> probs;
    for (size_t i = 0; i < n; ++i) probs.push_back(rng.next_double());
    double p = noisy_or(probs);
    double max_p = *std::max_element(probs.begin(), probs.end());
    CHECK(p >= max_p - 1e-15);
    CHECK(p <= 1.0);

    std::vector<double> shuffled = probs;
    rng.shuffle(shuffled);
    CHECK(noisy_or(shuffled) == doctest::Approx(p).epsilon(1e-12));

    std::vector<double> with_zero = probs;
    with_zero.push_back(0.0);
    CHECK(noisy_or(with_zero) == doctest::Approx(p).epsilon(1e-12));

    std::vector<double> with_one = probs;
    with_one.push_back(1.0);
    CHECK(noisy_or(with_one) == doctest::Approx(1.0));
  }
  CHECK(noisy_or({0.37}) == doctest::Approx(0.37));
}

TEST_CASE("training gradient matches central finite differences") {
  Rng rng(5);
  const int dim = 4;
  std::vector<RegionBag> bags;
  for (int b = 0; b < 4; ++b) {
    std::vector<Eigen::VectorXd> rows;
    size_t n = 1 + rng.next_below(4);
    for (size_t r = 0; r < n; ++r) rows.push_back(random_vec(dim, rng));
    bags.push_back(bag_of(rows, b % 2 == 0 ? std::vector<int>{0} : std::vector<int>{}, "b" + std::to_string(b)));
  }

  const double h = 1e-6;
  for (int point = 0; point < 20; ++point) {
    WordDetector det;
    det.v = random_vec(dim, rng);
    det.u = rng.next_range(-1.0, 1.0);
    const RegionBag& bag = bags[point % bags.size()];
    bool positive = bag.is_positive(0);

    Eigen::VectorXd grad_v;
    double grad_u = 0.0;
    mil_bag_gradient(det, bag, positive, &grad_v, &grad_u);

    for (int i = 0; i <= dim; ++i) {
      WordDetector plus = det, minus = det;
      if (i < dim) {
        plus.v[i] += h;
        minus.v[i] -= h;
      } else {
        plus.u += h;
        minus.u -= h;
      }
      double fd = (mil_bag_loss(plus, bag, positive) - mil_bag_loss(minus, bag, positive)) / (2 * h);
      double an = i < dim ? grad_v[i] : grad_u;
      double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      CHECK(std::abs(fd - an) / denom <= 1e-4);
    }
  }
}

TEST_CASE("training separates a separable two-bag toy") {
  Eigen::VectorXd pos(2), neg(2);
  pos << 1.0, 0.0;
  neg << -1.0, 0.0;
  std::vector<RegionBag> bags = {bag_of({pos}, {0}, "p"), bag_of({neg}, {}, "n")};
  auto vocab = std::make_shared<Vocabulary>(std::vector<std::string>{"cat"});
  MilConfig cfg;
  cfg.epochs = 200;
  cfg.learning_rate = 0.5;
  MilModel model = train_mil(bags, vocab, cfg);
  CHECK(model.bag_prob(0, bags[0].regions) >= 0.9);
  CHECK(model.bag_prob(0, bags[1].regions) <= 0.1);
  CHECK(model.epoch_losses.size() == 200);
  CHECK(model.epoch_losses.front() > model.epoch_losses.back());
}

TEST_CASE("words without both labels are skipped and reported") {
  Eigen::VectorXd x(2);
  x << 1.0, 0.0;
  std::vector<RegionBag> bags = {bag_of({x}, {0}, "a"), bag_of({x}, {0}, "b")};
  auto vocab = std::make_shared<Vocabulary>(std::vector<std::string>{"cat", "dog"});
  MilModel model = train_mil(bags, vocab, {});
  // "cat" is positive everywhere, "dog" negative everywhere: both skipped.
  CHECK(model.skipped_words == std::vector<std::string>{"cat", "dog"});
  CHECK_FALSE(model.detector(0).trained);
}

TEST_CASE("parallel word training matches serial") {
  Rng rng(6);
  const int dim = 5;
  std::vector<RegionBag> bags;
  for (int b = 0; b < 10; ++b) {
    std::vector<Eigen::VectorXd> rows;
    for (int r = 0; r < 3; ++r) rows.push_back(random_vec(dim, rng));
    std::vector<int> pos;
    for (int w = 0; w < 3; ++w) {
      if (rng.next_double() < 0.5) pos.push_back(w);
    }
    bags.push_back(bag_of(rows, pos, "b" + std::to_string(b)));
  }
  auto vocab = std::make_shared<Vocabulary>(std::vector<std::string>{"cat", "dog", "bird"});
  MilConfig serial;
  serial.seed = 17;
  MilConfig parallel = serial;
  parallel.threads = 4;
  MilModel a = train_mil(bags, vocab, serial);
  MilModel b = train_mil(bags, vocab, parallel);
  for (int w = 0; w < 3; ++w) {
    if (!a.detector(w).trained) continue;
    CHECK(a.detector(w).v == b.detector(w).v);
    CHECK(a.detector(w).u == b.detector(w).u);
  }
}

namespace {

// One single-region bag whose image probability is exactly p.
RegionBag prob_bag(double p, bool positive, const std::string& id) {
  Eigen::VectorXd x(1);
  x << std::log(p / (1.0 - p));
  return bag_of({x}, positive ? std::vector<int>{0} : std::vector<int>{}, id);
}

MilModel identity_model() {
  auto vocab = std::make_shared<Vocabulary>(std::vector<std::string>{"cat"});
  MilModel model(vocab, 1);
  model.detector(0).v = Eigen::VectorXd::Ones(1);
  model.detector(0).u = 0.0;
  model.detector(0).trained = true;
  return model;
}

}  // namespace

TEST_CASE("calibration sweeps observed probabilities") {
  MilModel model = identity_model();
  std::vector<RegionBag> heldout = {prob_bag(0.9, true, "h1"), prob_bag(0.8, true, "h2"),
                                    prob_bag(0.7, false, "h3"), prob_bag(0.6, true, "h4")};
  CalibrationTable table = calibrate(model, heldout, {"t1"}, 0.5);
  REQUIRE(table.curves.count(0) == 1);
  CHECK(table.curves.at(0).size() == 4);
  CHECK(*table.precision_at(0, 0.75) == doctest::Approx(1.0));
  CHECK(*table.precision_at(0, 0.55) == doctest::Approx(0.75));
  // Queries above every observed probability extend the top point.
  CHECK(*table.precision_at(0, 0.99) == doctest::Approx(1.0));
}

TEST_CASE("perfect detector calibrates to precision 1 everywhere") {
  MilModel model = identity_model();
  std::vector<RegionBag> heldout = {prob_bag(0.9, true, "h1"), prob_bag(0.8, true, "h2"),
                                    prob_bag(0.1, false, "h3")};
  CalibrationTable table = calibrate(model, heldout, {}, 0.5);
  for (const auto& pt : table.curves.at(0)) {
    if (pt.threshold > 0.5) CHECK(pt.precision == doctest::Approx(1.0));
  }
}

TEST_CASE("calibration requires disjoint held-out bags") {
  MilModel model = identity_model();
  std::vector<RegionBag> heldout = {prob_bag(0.9, true, "shared")};
  CHECK_THROWS_AS(calibrate(model, heldout, {"shared"}, 0.5), DataError);
}

TEST_CASE("detect_words thresholds calibrated precision and drops closed-class words") {
  auto vocab = std::make_shared<Vocabulary>(std::vector<std::string>{"the", "cat"});
  MilModel model(vocab, 1);
  for (int w = 0; w < 2; ++w) {
    model.detector(w).v = Eigen::VectorXd::Ones(1);
    model.detector(w).u = 0.0;
    model.detector(w).trained = true;
  }
  CorpusStats stats = build_stats({}, *vocab);

  CalibrationTable table;
  table.tau = 0.5;
  table.curves[0] = {{0.5, 1.0}};
  table.curves[1] = {{0.5, 1.0}};

  RegionBag bag = prob_bag(0.9, true, "x");
  DetectedWordSet dets = detect_words(model, table, bag, stats);
  // Both detectors fire at precision 1.0, but "the" is closed-class.
  REQUIRE(dets.entries.size() == 1);
  CHECK(dets.entries[0].word == "cat");
  CHECK(dets.entries[0].image_prob == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(dets.entries[0].raw_score <= dets.entries[0].image_prob);

  SUBCASE("precision below tau suppresses the word") {
    table.curves[1] = {{0.5, 0.4}};
    CHECK(detect_words(model, table, bag, stats).entries.empty());
  }
  SUBCASE("empty calibration curve suppresses the word") {
    table.curves[1].clear();
    CHECK(detect_words(model, table, bag, stats).entries.empty());
  }
}

TEST_CASE("detected entries keep raw <= image probability") {
  Rng rng(7);
  auto vocab = std::make_shared<Vocabulary>(std::vector<std::string>{"cat"});
  MilModel model(vocab, 3);
  model.detector(0).v = random_vec(3, rng);
  model.detector(0).u = 0.2;
  model.detector(0).trained = true;
  CalibrationTable table;
  table.tau = 0.0;
  table.curves[0] = {{0.0, 1.0}};
  CorpusStats stats = build_stats({}, *vocab);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Eigen::VectorXd> rows;
    size_t n = 1 + rng.next_below(5);
    for (size_t r = 0; r < n; ++r) rows.push_back(random_vec(3, rng, 2.0));
    DetectedWordSet dets = detect_words(model, table, bag_of(rows, {}, "t"), stats);
    REQUIRE(dets.entries.size() == 1);
    CHECK(dets.entries[0].raw_score <= dets.entries[0].image_prob + 1e-15);
  }
}
