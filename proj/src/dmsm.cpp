#include "capgen/dmsm.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "capgen/error.h"
#include "capgen/hashing.h"

namespace capgen {

std::map<std::string, int> letter_trigram_counts(const std::string& word) {
  if (word.empty()) throw DataError("letter_trigram_counts: empty word");
  std::string padded = "#" + word + "#";
  std::map<std::string, int> counts;
  if (padded.size() < 3) {
    // Single-character words reduce to the lone boundary trigram #c#.
    counts[padded] = 1;
    return counts;
  }
  for (size_t i = 0; i + 3 <= padded.size(); ++i) ++counts[padded.substr(i, 3)];
  return counts;
}

TrigramIndex::TrigramIndex(const Vocabulary& vocab, int overflow_slots)
    : overflow_(overflow_slots) {
  std::set<std::string> seen;
  for (const auto& w : vocab.words()) {
    for (const auto& [tri, c] : letter_trigram_counts(w)) seen.insert(tri);
  }
  trigrams_.assign(seen.begin(), seen.end());
  for (int i = 0; i < static_cast<int>(trigrams_.size()); ++i) index_[trigrams_[static_cast<size_t>(i)]] = i;
}

TrigramIndex::TrigramIndex(std::vector<std::string> trigrams, int overflow_slots)
    : trigrams_(std::move(trigrams)), overflow_(overflow_slots) {
  for (int i = 0; i < static_cast<int>(trigrams_.size()); ++i) index_[trigrams_[static_cast<size_t>(i)]] = i;
}

int TrigramIndex::slot(const std::string& trigram) const {
  auto it = index_.find(trigram);
  if (it != index_.end()) return it->second;
  if (overflow_ == 0) return -1;
  uint64_t h = fnv1a64(trigram);
  return static_cast<int>(trigrams_.size()) + static_cast<int>(h % static_cast<uint64_t>(overflow_));
}

std::vector<std::pair<int, double>> TrigramIndex::word_vector(const std::string& word) const {
  std::map<int, double> acc;
  for (const auto& [tri, c] : letter_trigram_counts(word)) {
    int s = slot(tri);
    if (s >= 0) acc[s] += static_cast<double>(c);
  }
  return std::vector<std::pair<int, double>>(acc.begin(), acc.end());
}

double relevance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw DataError("relevance: dimension mismatch");
  double na = a.norm();
  double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw NumericError("relevance: zero vector");
  return a.dot(b) / (na * nb);
}

double posterior_from_relevances(double gamma, double r_pos, const std::vector<double>& r_neg) {
  double max_r = gamma * r_pos;
  for (double r : r_neg) max_r = std::max(max_r, gamma * r);
  double z = std::exp(gamma * r_pos - max_r);
  double num = z;
  for (double r : r_neg) z += std::exp(gamma * r - max_r);
  return num / z;
}

namespace {

DenseLayer init_layer(int rows, int cols, Rng& rng) {
  DenseLayer layer;
  double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  layer.W.resize(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) layer.W(r, c) = rng.next_range(-bound, bound);
  }
  layer.b = Eigen::VectorXd::Zero(rows);
  return layer;
}

}  // namespace

DmsmModel::DmsmModel(const Vocabulary& vocab, int image_dim_in, DmsmConfig config, uint64_t seed)
    : trigrams(vocab, config.trigram_overflow), cfg(config), image_dim(image_dim_in) {
  if (cfg.d_sem < 1) throw ConfigError("dmsm d_sem must be >= 1");
  if (cfg.gamma <= 0.0) throw ConfigError("dmsm gamma must be > 0");
  if (cfg.negatives < 1) throw ConfigError("dmsm negatives must be >= 1");
  int conv_dim = cfg.conv_dim > 0 ? cfg.conv_dim : cfg.d_sem;
  int hidden = cfg.hidden_dim > 0 ? cfg.hidden_dim : cfg.d_sem;

  Rng rng = Rng::substream(seed, "dmsm-init");
  conv = init_layer(conv_dim, 3 * trigrams.dim(), rng);
  text_dense.push_back(init_layer(hidden, conv_dim, rng));
  text_dense.push_back(init_layer(cfg.d_sem, hidden, rng));
  image_layers.push_back(init_layer(hidden, image_dim, rng));
  image_layers.push_back(init_layer(hidden, hidden, rng));
  image_layers.push_back(init_layer(cfg.d_sem, hidden, rng));
}

struct DmsmModel::TextForward {
  std::vector<std::vector<std::pair<int, double>>> windows;  // sparse 3T vectors per position
  Eigen::MatrixXd conv_out;                                  // conv_dim x positions, tanh applied
  std::vector<int> argmax;                                   // winning position per coordinate
  Eigen::VectorXd pooled;
  std::vector<Eigen::VectorXd> dense_out;                    // output of each dense layer
};

struct DmsmModel::ImageForward {
  std::vector<Eigen::VectorXd> acts;  // input followed by each layer output
};

DmsmModel::TextForward DmsmModel::text_forward(const std::vector<std::string>& tokens) const {
  if (tokens.empty()) throw DataError("embed_text: empty token list");
  const int T = trigrams.dim();
  const int n = static_cast<int>(tokens.size());

  std::vector<std::vector<std::pair<int, double>>> word_vecs;
  word_vecs.reserve(static_cast<size_t>(n));
  for (const auto& tok : tokens) word_vecs.push_back(trigrams.word_vector(tok));

  TextForward fwd;
  fwd.windows.resize(static_cast<size_t>(n));
  for (int p = 0; p < n; ++p) {
    auto& win = fwd.windows[static_cast<size_t>(p)];
    for (int off = -1; off <= 1; ++off) {
      int idx = p + off;
      if (idx < 0 || idx >= n) continue;  // boundary positions zero-padded
      int base = (off + 1) * T;
      for (const auto& [s, c] : word_vecs[static_cast<size_t>(idx)]) win.emplace_back(base + s, c);
    }
  }

  const int C = static_cast<int>(conv.W.rows());
  fwd.conv_out.resize(C, n);
  for (int p = 0; p < n; ++p) {
    Eigen::VectorXd z = conv.b;
    for (const auto& [col, val] : fwd.windows[static_cast<size_t>(p)]) z.noalias() += conv.W.col(col) * val;
    fwd.conv_out.col(p) = z.array().tanh();
  }

  fwd.pooled.resize(C);
  fwd.argmax.assign(static_cast<size_t>(C), 0);
  for (int r = 0; r < C; ++r) {
    int best = 0;
    double best_v = fwd.conv_out(r, 0);
    for (int p = 1; p < n; ++p) {
      if (fwd.conv_out(r, p) > best_v) {
        best_v = fwd.conv_out(r, p);
        best = p;
      }
    }
    fwd.pooled[r] = best_v;
    fwd.argmax[static_cast<size_t>(r)] = best;
  }

  Eigen::VectorXd x = fwd.pooled;
  for (const auto& layer : text_dense) {
    x = (layer.W * x + layer.b).array().tanh();
    fwd.dense_out.push_back(x);
  }
  return fwd;
}

DmsmModel::ImageForward DmsmModel::image_forward(const Eigen::VectorXd& feature) const {
  if (feature.size() != image_dim) throw DataError("embed_image: feature dimension mismatch");
  ImageForward fwd;
  fwd.acts.push_back(feature);
  Eigen::VectorXd x = feature;
  for (const auto& layer : image_layers) {
    x = (layer.W * x + layer.b).array().tanh();
    fwd.acts.push_back(x);
  }
  return fwd;
}

Eigen::VectorXd DmsmModel::embed_text(const std::vector<std::string>& tokens) const {
  return text_forward(tokens).dense_out.back();
}

std::vector<Eigen::VectorXd> DmsmModel::embed_text_batch(
    const std::vector<std::vector<std::string>>& captions) const {
  std::vector<Eigen::VectorXd> out;
  out.reserve(captions.size());
  for (const auto& c : captions) out.push_back(embed_text(c));
  return out;
}

Eigen::VectorXd DmsmModel::embed_image(const Eigen::VectorXd& feature) const {
  return image_forward(feature).acts.back();
}

double DmsmModel::score(const Eigen::VectorXd& image_feature,
                        const std::vector<std::string>& tokens) const {
  return relevance(embed_image(image_feature), embed_text(tokens));
}

double DmsmModel::posterior(const Eigen::VectorXd& image, const std::vector<std::string>& positive,
                            const std::vector<std::vector<std::string>>& negatives) const {
  Eigen::VectorXd q = embed_image(image);
  double r_pos = relevance(q, embed_text(positive));
  std::vector<double> r_neg;
  r_neg.reserve(negatives.size());
  for (const auto& neg : negatives) r_neg.push_back(relevance(q, embed_text(neg)));
  return posterior_from_relevances(cfg.gamma, r_pos, r_neg);
}

DmsmGradients DmsmModel::zero_gradients() const {
  DmsmGradients g;
  g.conv_W = Eigen::MatrixXd::Zero(conv.W.rows(), conv.W.cols());
  g.conv_b = Eigen::VectorXd::Zero(conv.b.size());
  for (const auto& l : text_dense) {
    g.text_dense.push_back({Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()),
                            Eigen::VectorXd::Zero(l.b.size())});
  }
  for (const auto& l : image_layers) {
    g.image_layers.push_back({Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()),
                              Eigen::VectorXd::Zero(l.b.size())});
  }
  return g;
}

namespace {

// d cosine / d a for r = cos(a, b).
Eigen::VectorXd cosine_grad(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double r) {
  double na = a.norm();
  double nb = b.norm();
  return b / (na * nb) - r * a / (na * na);
}

}  // namespace

void DmsmModel::pair_gradient(const DmsmPair& pair, const std::vector<const DmsmPair*>& negs,
                              DmsmGradients* grads, double* loss) const {
  ImageForward img = image_forward(pair.image);
  const Eigen::VectorXd& q = img.acts.back();

  std::vector<TextForward> texts;
  texts.reserve(negs.size() + 1);
  texts.push_back(text_forward(pair.caption));
  for (const auto* n : negs) texts.push_back(text_forward(n->caption));

  const int m = static_cast<int>(texts.size());
  std::vector<double> rel(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    rel[static_cast<size_t>(i)] = relevance(q, texts[static_cast<size_t>(i)].dense_out.back());
  }

  // Softmax over gamma-scaled relevances; the matching caption is entry 0.
  double max_r = *std::max_element(rel.begin(), rel.end());
  std::vector<double> p(static_cast<size_t>(m));
  double z = 0.0;
  for (int i = 0; i < m; ++i) {
    p[static_cast<size_t>(i)] = std::exp(cfg.gamma * (rel[static_cast<size_t>(i)] - max_r));
    z += p[static_cast<size_t>(i)];
  }
  for (auto& v : p) v /= z;
  *loss += -std::log(std::max(p[0], 1e-300));

  Eigen::VectorXd dq = Eigen::VectorXd::Zero(q.size());
  for (int i = 0; i < m; ++i) {
    double dr = cfg.gamma * (p[static_cast<size_t>(i)] - (i == 0 ? 1.0 : 0.0));
    const Eigen::VectorXd& d = texts[static_cast<size_t>(i)].dense_out.back();
    dq.noalias() += dr * cosine_grad(q, d, rel[static_cast<size_t>(i)]);
    Eigen::VectorXd dd = dr * cosine_grad(d, q, rel[static_cast<size_t>(i)]);

    // Text tower backward: dense layers, then max pool, then convolution.
    const TextForward& tf = texts[static_cast<size_t>(i)];
    Eigen::VectorXd dy = dd;
    for (int l = static_cast<int>(text_dense.size()) - 1; l >= 0; --l) {
      const Eigen::VectorXd& out = tf.dense_out[static_cast<size_t>(l)];
      Eigen::VectorXd dz = dy.array() * (1.0 - out.array().square());
      const Eigen::VectorXd& in = l == 0 ? tf.pooled : tf.dense_out[static_cast<size_t>(l - 1)];
      grads->text_dense[static_cast<size_t>(l)].W.noalias() += dz * in.transpose();
      grads->text_dense[static_cast<size_t>(l)].b += dz;
      dy = text_dense[static_cast<size_t>(l)].W.transpose() * dz;
    }
    // Pool routes each coordinate's gradient to its winning position.
    const int C = static_cast<int>(conv.W.rows());
    const int n_pos = static_cast<int>(tf.conv_out.cols());
    Eigen::MatrixXd dconv = Eigen::MatrixXd::Zero(C, n_pos);
    for (int r = 0; r < C; ++r) dconv(r, tf.argmax[static_cast<size_t>(r)]) = dy[r];
    for (int pos = 0; pos < n_pos; ++pos) {
      Eigen::VectorXd dz = dconv.col(pos).array() * (1.0 - tf.conv_out.col(pos).array().square());
      if (dz.isZero(0.0)) continue;
      for (const auto& [col, val] : tf.windows[static_cast<size_t>(pos)]) {
        grads->conv_W.col(col).noalias() += dz * val;
      }
      grads->conv_b += dz;
    }
  }

  // Image tower backward.
  Eigen::VectorXd dy = dq;
  for (int l = static_cast<int>(image_layers.size()) - 1; l >= 0; --l) {
    const Eigen::VectorXd& out = img.acts[static_cast<size_t>(l + 1)];
    Eigen::VectorXd dz = dy.array() * (1.0 - out.array().square());
    grads->image_layers[static_cast<size_t>(l)].W.noalias() += dz * img.acts[static_cast<size_t>(l)].transpose();
    grads->image_layers[static_cast<size_t>(l)].b += dz;
    dy = image_layers[static_cast<size_t>(l)].W.transpose() * dz;
  }
}

double DmsmModel::batch_loss(const std::vector<DmsmPair>& pairs,
                             const std::vector<std::vector<int>>& negatives) const {
  double loss = 0.0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    Eigen::VectorXd q = embed_image(pairs[i].image);
    double r_pos = relevance(q, embed_text(pairs[i].caption));
    std::vector<double> r_neg;
    for (int j : negatives[i]) {
      r_neg.push_back(relevance(q, embed_text(pairs[static_cast<size_t>(j)].caption)));
    }
    loss += -std::log(std::max(posterior_from_relevances(cfg.gamma, r_pos, r_neg), 1e-300));
  }
  return loss;
}

DmsmGradients DmsmModel::batch_gradient(const std::vector<DmsmPair>& pairs,
                                        const std::vector<std::vector<int>>& negatives) const {
  DmsmGradients grads = zero_gradients();
  double loss = 0.0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    std::vector<const DmsmPair*> negs;
    for (int j : negatives[i]) negs.push_back(&pairs[static_cast<size_t>(j)]);
    pair_gradient(pairs[i], negs, &grads, &loss);
  }
  return grads;
}

std::vector<double> DmsmModel::train(const std::vector<DmsmPair>& pairs, uint64_t seed) {
  const int n = static_cast<int>(pairs.size());
  if (n < cfg.negatives + 1) {
    throw DataError("train_dmsm: need at least N+1 pairs for negative sampling");
  }
  Rng rng = Rng::substream(seed, "dmsm");
  epoch_losses.clear();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fresh uniform negatives for every pair each epoch.
    std::vector<std::vector<int>> negatives(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      std::set<int> chosen;
      while (static_cast<int>(chosen.size()) < cfg.negatives) {
        int j = static_cast<int>(rng.next_below(static_cast<uint64_t>(n)));
        if (j != i) chosen.insert(j);
      }
      negatives[static_cast<size_t>(i)].assign(chosen.begin(), chosen.end());
    }

    double epoch_loss = 0.0;
    for (int i = 0; i < n; ++i) {
      DmsmGradients grads = zero_gradients();
      double loss = 0.0;
      std::vector<const DmsmPair*> negs;
      for (int j : negatives[static_cast<size_t>(i)]) negs.push_back(&pairs[static_cast<size_t>(j)]);
      pair_gradient(pairs[static_cast<size_t>(i)], negs, &grads, &loss);
      if (!std::isfinite(loss)) throw NumericError("train_dmsm: non-finite loss");
      epoch_loss += loss;

      const double lr = cfg.learning_rate;
      conv.W.noalias() -= lr * grads.conv_W;
      conv.b -= lr * grads.conv_b;
      for (size_t l = 0; l < text_dense.size(); ++l) {
        text_dense[l].W.noalias() -= lr * grads.text_dense[l].W;
        text_dense[l].b -= lr * grads.text_dense[l].b;
      }
      for (size_t l = 0; l < image_layers.size(); ++l) {
        image_layers[l].W.noalias() -= lr * grads.image_layers[l].W;
        image_layers[l].b -= lr * grads.image_layers[l].b;
      }
    }
    epoch_losses.push_back(epoch_loss);
  }
  return epoch_losses;
}

namespace {

void append(std::vector<double>* out, const Eigen::MatrixXd& m) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) out->push_back(m(r, c));
  }
}

void append(std::vector<double>* out, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) out->push_back(v[i]);
}

size_t read_into(Eigen::MatrixXd* m, const std::vector<double>& flat, size_t pos) {
  for (Eigen::Index c = 0; c < m->cols(); ++c) {
    for (Eigen::Index r = 0; r < m->rows(); ++r) (*m)(r, c) = flat[pos++];
  }
  return pos;
}

size_t read_into(Eigen::VectorXd* v, const std::vector<double>& flat, size_t pos) {
  for (Eigen::Index i = 0; i < v->size(); ++i) (*v)[i] = flat[pos++];
  return pos;
}

}  // namespace

std::vector<double> DmsmModel::flatten_params() const {
  std::vector<double> out;
  append(&out, conv.W);
  append(&out, conv.b);
  for (const auto& l : text_dense) {
    append(&out, l.W);
    append(&out, l.b);
  }
  for (const auto& l : image_layers) {
    append(&out, l.W);
    append(&out, l.b);
  }
  return out;
}

void DmsmModel::set_params(const std::vector<double>& flat) {
  size_t pos = 0;
  pos = read_into(&conv.W, flat, pos);
  pos = read_into(&conv.b, flat, pos);
  for (auto& l : text_dense) {
    pos = read_into(&l.W, flat, pos);
    pos = read_into(&l.b, flat, pos);
  }
  for (auto& l : image_layers) {
    pos = read_into(&l.W, flat, pos);
    pos = read_into(&l.b, flat, pos);
  }
  if (pos != flat.size()) throw DataError("set_params: size mismatch");
}

std::vector<double> DmsmModel::flatten_gradients(const DmsmGradients& g) {
  std::vector<double> out;
  append(&out, g.conv_W);
  append(&out, g.conv_b);
  for (const auto& l : g.text_dense) {
    append(&out, l.W);
    append(&out, l.b);
  }
  for (const auto& l : g.image_layers) {
    append(&out, l.W);
    append(&out, l.b);
  }
  return out;
}

}  // namespace capgen
