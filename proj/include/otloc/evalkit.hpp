#pragma once

#include <string>
#include <vector>

#include "otloc/representation.hpp"

namespace otloc {

// Temporal IoU of [a0, a1] and [b0, b1]; 0 for disjoint intervals and when
// both have zero length.
double iou_1d(double a0, double a1, double b0, double b1);

// One scored prediction, tagged with its video so matching stays per-video.
struct Detection {
  std::string video_id;
  double start = 0.0;
  double end = 0.0;
  int class_id = 0;
  double score = 0.0;
};

struct ApResult {
  double ap = 0.0;
  bool defined = true;  // false when the class has no ground truth
  int num_gt = 0;
  int num_pred = 0;
};

// Greedy detection-style AP for one class at one tIoU threshold: predictions
// in descending score order each grab the unmatched same-video GT of highest
// IoU (>= threshold). AP is the area under the uninterpolated PR step curve.
ApResult average_precision(std::vector<Detection> predictions,
                           const std::vector<Detection>& ground_truths,
                           double iou_threshold);

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<double> map_per_threshold;
  double average_map = 0.0;
  std::vector<std::vector<ApResult>> class_ap;  // [threshold][class]
  int num_classes = 0;
  int num_predictions = 0;
  int num_ground_truths = 0;
};

// mAP(theta) = mean AP over classes with at least one ground truth segment.
// Prediction class ids outside [0, num_classes) raise DataError.
EvalReport evaluate(const std::vector<Detection>& predictions,
                    const std::vector<FeatureSequence>& corpus,
                    const std::vector<double>& thresholds, int num_classes);

std::string report_to_json(const EvalReport& report);
std::string report_to_csv(const EvalReport& report);

}  // namespace otloc
