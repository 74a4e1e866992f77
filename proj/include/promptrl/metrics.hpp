#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptrl/core_types.hpp"

namespace promptrl {

using BinaryMask = Array2<std::uint8_t>;

inline constexpr double kMaskThreshold = 0.5;
inline constexpr double kDefaultBetaSq = 0.3;

// p >= 0.5 -> 1.
BinaryMask binarize(const MaskProb& prob, double threshold = kMaskThreshold);

// |P & G| / |P | G|; 1 when both are empty.
double iou(const BinaryMask& pred, const BinaryMask& gt);

// Mean |p - g| on raw probabilities.
double mae(const MaskProb& pred, const BinaryMask& gt);

// Balanced error rate in percent: 100 (1 - (TPR + TNR) / 2). A class missing
// from the ground truth contributes a rate of 1 (and logs a warning).
double ber(const BinaryMask& pred, const BinaryMask& gt);

// (1 + b2) P R / (b2 P + R), 0 when the denominator vanishes.
double f_measure(const BinaryMask& pred, const BinaryMask& gt, double beta_sq = kDefaultBetaSq);

// Enhanced-alignment measure. Both maps are mean-centred, the alignment
// 2 a_g a_p / (a_g^2 + a_p^2 + eps) is mapped through (1 + x)^2 / 4 and
// averaged over pixels. Degenerate ground truths follow the reference
// implementation: all-background scores mean(1 - pred), all-foreground
// scores mean(pred). The average divides by the pixel count (the reference
// divides by count - 1, which lets a perfect prediction exceed 1).
double e_measure(const BinaryMask& pred, const BinaryMask& gt);

// Fraction of points landing on foreground over a horizon of T steps.
double foreground_rate(std::span<const Pixel> points, const BinaryMask& gt, int T);

struct ImageMetrics {
  double iou = 0.0;
  double mae = 0.0;
  double ber = 0.0;
  double f_beta = 0.0;
  double e_phi = 0.0;
};

ImageMetrics evaluate_mask(const MaskProb& pred, const BinaryMask& gt);

// Metrics of one evaluation episode: per_step[t-1] is the mask after t agent steps.
struct ImageReport {
  std::string scene;
  std::vector<ImageMetrics> per_step;
  double fr = 0.0;
};

struct MetricsReport {
  std::string run_id;
  std::string policy;
  std::string label_source;
  int T = 0;
  std::vector<ImageReport> images;

  // Mean over images of the metrics after t steps (t = 1..T).
  std::vector<ImageMetrics> mean_curve() const;
  ImageMetrics mean_final() const;
  double mean_fr() const;
};

nlohmann::json to_json(const ImageMetrics& m);
ImageMetrics image_metrics_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);

// One JSON object per (scene, t) plus one per scene carrying FR.
void write_records(const MetricsReport& r, std::ostream& out);
// Human-readable aggregate table.
void write_text_report(const MetricsReport& r, std::ostream& out);

}  // namespace promptrl
