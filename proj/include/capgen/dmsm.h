#ifndef CAPGEN_DMSM_H_
#define CAPGEN_DMSM_H_

#include <Eigen/Core>
#include <map>
#include <string>
#include <vector>

#include "capgen/corpus.h"
#include "capgen/rng.h"

namespace capgen {

// Counts of consecutive letter triples of the boundary-padded word #word#.
std::map<std::string, int> letter_trigram_counts(const std::string& word);

// Fixed enumeration of the trigrams observed in the training vocabulary;
// unseen trigrams hash into an overflow band at the end of the index.
class TrigramIndex {
 public:
  TrigramIndex() = default;
  TrigramIndex(const Vocabulary& vocab, int overflow_slots);
  TrigramIndex(std::vector<std::string> trigrams, int overflow_slots);

  int dim() const { return static_cast<int>(trigrams_.size()) + overflow_; }
  int overflow_slots() const { return overflow_; }
  const std::vector<std::string>& trigrams() const { return trigrams_; }
  int slot(const std::string& trigram) const;
  // Sparse trigram-count vector of one word: sorted (index, count) pairs.
  std::vector<std::pair<int, double>> word_vector(const std::string& word) const;

 private:
  std::vector<std::string> trigrams_;
  std::map<std::string, int> index_;
  int overflow_ = 0;
};

struct DenseLayer {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
};

struct DmsmConfig {
  int d_sem = 300;     // shared semantic dimension (tests run much smaller)
  int conv_dim = 0;    // 0 defaults to d_sem
  int hidden_dim = 0;  // 0 defaults to d_sem
  double gamma = 10.0;
  int negatives = 50;
  double learning_rate = 0.01;
  int epochs = 20;
  int trigram_overflow = 32;
};

struct DmsmPair {
  Eigen::VectorXd image;
  std::vector<std::string> caption;
};

struct DmsmGradients {
  Eigen::MatrixXd conv_W;
  Eigen::VectorXd conv_b;
  std::vector<DenseLayer> text_dense;
  std::vector<DenseLayer> image_layers;
};

// cosine(a, b); errors on a zero vector.
double relevance(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// exp(gamma r_pos) / sum over the positive and all negatives.
double posterior_from_relevances(double gamma, double r_pos, const std::vector<double>& r_neg);

// Two-tower similarity model: a text tower (letter-trigram vectors, window-3
// convolution, max pooling, two tanh dense layers) and an image tower (three
// tanh dense layers over the ingested image feature), both ending in the
// shared semantic space.
class DmsmModel {
 public:
  DmsmModel() = default;
  DmsmModel(const Vocabulary& vocab, int image_dim, DmsmConfig config, uint64_t seed);

  TrigramIndex trigrams;
  DenseLayer conv;                      // over concatenated 3-word windows
  std::vector<DenseLayer> text_dense;   // two layers
  std::vector<DenseLayer> image_layers; // three layers
  DmsmConfig cfg;
  int image_dim = 0;
  std::vector<double> epoch_losses;

  Eigen::VectorXd embed_text(const std::vector<std::string>& tokens) const;
  std::vector<Eigen::VectorXd> embed_text_batch(const std::vector<std::vector<std::string>>& captions) const;
  Eigen::VectorXd embed_image(const Eigen::VectorXd& feature) const;
  double score(const Eigen::VectorXd& image_feature, const std::vector<std::string>& tokens) const;
  double posterior(const Eigen::VectorXd& image, const std::vector<std::string>& positive,
                   const std::vector<std::vector<std::string>>& negatives) const;

  // -log posterior of the matching caption for each pair, with the given
  // negative caption indices (into `pairs`).
  double batch_loss(const std::vector<DmsmPair>& pairs,
                    const std::vector<std::vector<int>>& negatives) const;
  DmsmGradients batch_gradient(const std::vector<DmsmPair>& pairs,
                               const std::vector<std::vector<int>>& negatives) const;

  // Per-pair SGD with negatives resampled uniformly each epoch. Returns the
  // recorded per-epoch losses.
  std::vector<double> train(const std::vector<DmsmPair>& pairs, uint64_t seed);

  std::vector<double> flatten_params() const;
  void set_params(const std::vector<double>& flat);
  static std::vector<double> flatten_gradients(const DmsmGradients& g);

 private:
  struct TextForward;
  struct ImageForward;
  TextForward text_forward(const std::vector<std::string>& tokens) const;
  ImageForward image_forward(const Eigen::VectorXd& feature) const;
  void pair_gradient(const DmsmPair& pair, const std::vector<const DmsmPair*>& negs,
                     DmsmGradients* grads, double* loss) const;
  DmsmGradients zero_gradients() const;
};

}  // namespace capgen

#endif  // CAPGEN_DMSM_H_
