#ifndef CAPGEN_SERIALIZE_H_
#define CAPGEN_SERIALIZE_H_

#include <memory>
#include <string>
#include <vector>

#include "capgen/corpus.h"
#include "capgen/decoder.h"
#include "capgen/dmsm.h"
#include "capgen/melm.h"
#include "capgen/mil.h"
#include "capgen/rerank.h"

namespace capgen {

// Versioned JSON artifacts. Loads check the format tag and, for models, that
// the vocabulary fingerprint matches the vocabulary they are paired with.

void save_vocab(const VocabBuild& build, const std::string& path);
VocabBuild load_vocab(const std::string& path);

void save_stats(const CorpusStats& stats, const std::string& path);
CorpusStats load_stats(const std::string& path, const Vocabulary& vocab);

void save_split(const Dataset& ds, const std::string& path);
void load_split(Dataset* ds, const std::string& path);

struct MilArtifact {
  MilModel model;
  CalibrationTable calibration;
};

void save_mil(const MilModel& model, const CalibrationTable& calibration, const std::string& path);
MilArtifact load_mil(const std::string& path, std::shared_ptr<const Vocabulary> vocab);

void save_melm(const MelmModel& model, const std::string& path);
MelmModel load_melm(const std::string& path, std::shared_ptr<const Vocabulary> vocab);

void save_dmsm(const DmsmModel& model, const std::string& path);
DmsmModel load_dmsm(const std::string& path);

void save_mert_weights(const MertWeights& weights, const std::string& path);
MertWeights load_mert_weights(const std::string& path);

void save_detections(const std::vector<DetectedWordSet>& detections, const std::string& path);
std::vector<DetectedWordSet> load_detections(const std::string& path);

struct ImageMBest {
  std::string image_id;
  MBestList list;
};

void save_mbest(const std::vector<ImageMBest>& lists, const Vocabulary& vocab,
                const std::string& path);
std::vector<ImageMBest> load_mbest(const std::string& path, const Vocabulary& vocab);

}  // namespace capgen

#endif  // CAPGEN_SERIALIZE_H_
