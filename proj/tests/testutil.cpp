#include "testutil.h"

#include <algorithm>
#include <filesystem>

#include "capgen/rng.h"

namespace capgen {
namespace testutil {

const std::vector<std::string>& concept_words() {
  static const std::vector<std::string> kWords = {
      "cat",  "dog",   "ball",  "tree",  "car",   "bird",  "boat",  "chair",
      "horse", "bear", "truck", "kite",  "plate", "clock", "bench", "zebra"};
  return kWords;
}

namespace {

std::string fill_template(const std::string& tmpl, const std::vector<std::string>& attrs) {
  std::string out;
  for (size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl[i] == '{' && i + 2 < tmpl.size() && tmpl[i + 2] == '}') {
      out += attrs.at(static_cast<size_t>(tmpl[i + 1] - '0'));
      i += 2;
    } else {
      out.push_back(tmpl[i]);
    }
  }
  return out;
}

const std::vector<std::string>& templates_for(int attr_count) {
  static const std::vector<std::string> kTwo = {
      "a {0} and a {1}",
      "a {0} with a {1}",
      "the {0} is on the {1}",
      "a {0} next to a {1}",
  };
  static const std::vector<std::string> kThree = {
      "a {0} and a {1} with a {2}",
      "the {0} is on the {1} with a {2}",
      "a {0} next to a {1} and a {2}",
  };
  return attr_count >= 3 ? kThree : kTwo;
}

}  // namespace

Dataset make_planted_dataset(const PlantedOptions& opt) {
  Rng rng = Rng::substream(opt.seed, "planted");
  const auto& words = concept_words();
  const int dim = opt.concepts + opt.noise_dims;

  Dataset ds;
  ds.region_dim = dim;
  ds.image_dim = dim;

  for (int img = 0; img < opt.images; ++img) {
    DatasetEntry entry;
    entry.image_id = "img" + std::to_string(img);

    int attr_count = opt.attrs_min +
                     static_cast<int>(rng.next_below(
                         static_cast<uint64_t>(opt.attrs_max - opt.attrs_min + 1)));
    std::vector<int> pool(static_cast<size_t>(opt.concepts));
    for (int c = 0; c < opt.concepts; ++c) pool[static_cast<size_t>(c)] = c;
    rng.shuffle(pool);
    std::vector<int> attrs(pool.begin(), pool.begin() + attr_count);

    std::vector<Eigen::VectorXd> regions;
    for (int a : attrs) {
      Eigen::VectorXd r(dim);
      for (int d = 0; d < dim; ++d) r[d] = opt.region_noise * rng.next_normal();
      r[a] += rng.next_range(0.9, 1.3);
      regions.push_back(std::move(r));
    }
    for (int w = 0; w < opt.weak_regions; ++w) {
      int other = attrs[0];
      while (std::find(attrs.begin(), attrs.end(), other) != attrs.end()) {
        other = static_cast<int>(rng.next_below(static_cast<uint64_t>(opt.concepts)));
      }
      Eigen::VectorXd r(dim);
      for (int d = 0; d < dim; ++d) r[d] = opt.region_noise * rng.next_normal();
      r[other] += rng.next_range(0.25, opt.weak_strength);
      regions.push_back(std::move(r));
    }
    {
      Eigen::VectorXd r(dim);
      for (int d = 0; d < dim; ++d) r[d] = opt.region_noise * rng.next_normal();
      regions.push_back(std::move(r));
    }
    entry.regions.resize(static_cast<Eigen::Index>(regions.size()), dim);
    for (size_t r = 0; r < regions.size(); ++r) entry.regions.row(static_cast<Eigen::Index>(r)) = regions[r];

    entry.image_feature.resize(dim);
    for (int d = 0; d < dim; ++d) entry.image_feature[d] = 0.1 * rng.next_normal();
    for (int a : attrs) entry.image_feature[a] += 1.0;

    for (int c = 0; c < opt.captions_per_image; ++c) {
      std::vector<int> order = attrs;
      rng.shuffle(order);
      std::vector<std::string> names;
      for (int a : order) names.push_back(words.at(static_cast<size_t>(a)));
      const auto& tmpls = templates_for(attr_count);
      const std::string& tmpl = tmpls[static_cast<size_t>(rng.next_below(tmpls.size()))];
      Caption cap;
      cap.image_id = entry.image_id;
      cap.raw = fill_template(tmpl, names);
      cap.tokens = tokenize(cap.raw);
      entry.captions.push_back(std::move(cap));
    }
    ds.entries.push_back(std::move(entry));
  }
  return ds;
}

TwoClusterData make_two_cluster(const TwoClusterOptions& opt) {
  static const std::vector<std::string> kClusterA = {"red", "square", "warm", "sun", "fire"};
  static const std::vector<std::string> kClusterB = {"blue", "circle", "cold", "moon", "ice"};

  Rng rng = Rng::substream(opt.seed, "two-cluster");
  TwoClusterData out;
  const int dim = 2 * opt.dims_per_cluster;

  std::vector<std::string> vocab_words = kClusterA;
  vocab_words.insert(vocab_words.end(), kClusterB.begin(), kClusterB.end());
  std::sort(vocab_words.begin(), vocab_words.end());
  out.vocab = Vocabulary(vocab_words);

  for (int i = 0; i < opt.pairs; ++i) {
    int cluster = i % 2;
    DmsmPair pair;
    pair.image.resize(dim);
    for (int d = 0; d < dim; ++d) pair.image[d] = opt.noise * rng.next_normal();
    int base = cluster * opt.dims_per_cluster;
    for (int d = 0; d < opt.dims_per_cluster; ++d) pair.image[base + d] += 1.0;

    const auto& pool = cluster == 0 ? kClusterA : kClusterB;
    for (int t = 0; t < opt.caption_len; ++t) {
      pair.caption.push_back(pool[static_cast<size_t>(rng.next_below(pool.size()))]);
    }
    out.pairs.push_back(std::move(pair));
    out.cluster.push_back(cluster);
  }
  return out;
}

std::string temp_dir(const std::string& tag) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / ("capgen_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

}  // namespace testutil
}  // namespace capgen
