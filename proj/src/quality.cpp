#include "spmim/quality.hpp"

#include <cmath>

namespace spmim {

nlohmann::json QualityReport::to_json() const {
  return {{"blur_score", blur_score},
          {"contrast_score", contrast_score},
          {"illumination_score", illumination_score},
          {"artifact_score", artifact_score},
          {"pass", pass},
          {"failed_checks", failed_checks}};
}

QualityReport quality_check(const ImageRecord& record, const QualityThresholds& t) {
  const Tensor lum = luminance(record.pixels);
  const int h = lum.dim(0), w = lum.dim(1);
  const double n = static_cast<double>(lum.numel());

  QualityReport r;
  r.illumination_score = lum.sum() / n;
  double var = 0.0;
  std::size_t saturated = 0;
  for (double v : lum.data()) {
    var += (v - r.illumination_score) * (v - r.illumination_score);
    if (v >= 1.0 - 0.5 / 255.0) ++saturated;
  }
  r.contrast_score = std::sqrt(var / n);
  r.artifact_score = static_cast<double>(saturated) / n;

  if (h >= 3 && w >= 3) {
    std::vector<double> resp;
    resp.reserve(static_cast<std::size_t>(h - 2) * (w - 2));
    for (int y = 1; y < h - 1; ++y)
      for (int x = 1; x < w - 1; ++x) {
        auto at = [&](int yy, int xx) { return lum[static_cast<std::size_t>(yy) * w + xx]; };
        resp.push_back(at(y - 1, x) + at(y + 1, x) + at(y, x - 1) + at(y, x + 1) - 4.0 * at(y, x));
      }
    double mean = 0.0;
    for (double v : resp) mean += v;
    mean /= static_cast<double>(resp.size());
    double acc = 0.0;
    for (double v : resp) acc += (v - mean) * (v - mean);
    r.blur_score = acc / static_cast<double>(resp.size());
  }

  if (!(r.blur_score >= t.min_blur)) r.failed_checks.push_back("blur");
  if (!(r.contrast_score >= t.min_contrast)) r.failed_checks.push_back("contrast");
  if (!(r.illumination_score >= t.min_illumination && r.illumination_score <= t.max_illumination)) {
    r.failed_checks.push_back("illumination");
  }
  if (!(r.artifact_score <= t.max_artifacts)) r.failed_checks.push_back("artifacts");
  r.pass = r.failed_checks.empty();
  return r;
}

}  // namespace spmim
