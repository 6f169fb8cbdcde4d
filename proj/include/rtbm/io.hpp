#pragma once

// Artifact plumbing: CSV ingestion, JSON model/report round trips and
// density-grid export. JSON keeps every double at round-trip precision, so
// save/load reproduces models bit-exactly.

#include <string>

#include "rtbm/core.hpp"
#include "rtbm/mixture.hpp"
#include "rtbm/tnn.hpp"
#include "rtbm/training.hpp"
#include "rtbm/types.hpp"

namespace rtbm {

// One sample per CSV row; samples come back as columns. An optional header
// row is skipped. Non-numeric or non-finite fields raise ParseError with
// their row and column; rows with any |x| >= clip are dropped and counted.
struct CsvData {
  Matrix samples;
  Index dropped = 0;
};

CsvData ingest_csv(const std::string& path,
                   double clip = std::numeric_limits<double>::infinity());

// Whole-file text IO; writes go to a temp file in the same directory and
// are renamed into place.
std::string load_text(const std::string& path);
void save_text(const std::string& path, const std::string& content);

// Model JSON carries a "kind" tag so a single loader entry point can
// dispatch; parses validate before returning.
enum class ModelKind { Rtbm, Mixture, Tnn, Pipeline };

std::string model_to_json(const RtbmParams& params);
std::string model_to_json(const MixtureModel& model);
std::string model_to_json(const TnnNetwork& net);
std::string model_to_json(const FeaturePipeline& pipeline);
std::string report_to_json(const TrainReport& report);

ModelKind peek_model_kind(const std::string& text);
RtbmParams rtbm_from_json(const std::string& text);
MixtureModel mixture_from_json(const std::string& text);
TnnNetwork tnn_from_json(const std::string& text);
FeaturePipeline pipeline_from_json(const std::string& text);

// Density curves for plotting: 1-D emits "v,p" rows over a uniform grid,
// 2-D emits "v1,v2,p" over the grid square (points^2 rows); 17 significant
// digits. UnsupportedDim beyond two visible dimensions.
std::string density_grid_csv(const RtbmParams& params, double lo, double hi,
                             Index points);
std::string density_grid_csv(const MixtureModel& model, double lo, double hi,
                             Index points);

}  // namespace rtbm
