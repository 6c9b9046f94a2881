#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "spmim/image_io.hpp"

namespace spmim {

// Bounds on the four quality proxies, all on the [0, 1] intensity scale.
struct QualityThresholds {
  double min_blur = 1e-4;          // variance of the 3x3 Laplacian response
  double min_contrast = 0.05;      // std of luminance
  double min_illumination = 0.1;   // mean luminance, lower bound
  double max_illumination = 0.9;   // mean luminance, upper bound
  double max_artifacts = 0.05;     // fraction of saturated pixels
};

struct QualityReport {
  double blur_score = 0.0;
  double contrast_score = 0.0;
  double illumination_score = 0.0;
  double artifact_score = 0.0;
  bool pass = false;
  std::vector<std::string> failed_checks;  // subset of blur, contrast, illumination, artifacts

  nlohmann::json to_json() const;
};

// Pure; never throws for a valid [3,H,W] image.
QualityReport quality_check(const ImageRecord& record, const QualityThresholds& thresholds = {});

}  // namespace spmim
