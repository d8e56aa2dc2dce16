#ifndef CAPGEN_PIPELINE_H_
#define CAPGEN_PIPELINE_H_

#include <string>

#include "capgen/config.h"

namespace capgen {
namespace pipeline {

// Stage commands in Figure-1 order. Each reads and writes only its declared
// artifacts under model_dir / report_dir; `caption` chains detection, beam
// search and re-ranking in memory. Throws ConfigError / DataError /
// NumericError; the CLI maps those to exit codes.
void prepare(const PipelineConfig& cfg);
void train_mil(const PipelineConfig& cfg);
void detect(const PipelineConfig& cfg);
void train_lm(const PipelineConfig& cfg);
void train_dmsm(const PipelineConfig& cfg);
void decode(const PipelineConfig& cfg);
void mert(const PipelineConfig& cfg);
void caption(const PipelineConfig& cfg);
void evaluate(const PipelineConfig& cfg);

void run(const std::string& command, const PipelineConfig& cfg);

}  // namespace pipeline
}  // namespace capgen

#endif  // CAPGEN_PIPELINE_H_
