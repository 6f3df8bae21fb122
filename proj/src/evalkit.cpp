#include "otloc/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"

namespace otloc {

double iou_1d(double a0, double a1, double b0, double b1) {
  double inter = std::min(a1, b1) - std::max(a0, b0);
  if (inter <= 0.0) return 0.0;
  double uni = (a1 - a0) + (b1 - b0) - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

ApResult average_precision(std::vector<Detection> predictions,
                           const std::vector<Detection>& ground_truths,
                           double iou_threshold) {
  ApResult out;
  out.num_gt = static_cast<int>(ground_truths.size());
  out.num_pred = static_cast<int>(predictions.size());
  if (ground_truths.empty()) {
    out.defined = false;
    out.ap = 0.0;
    return out;
  }
  if (predictions.empty()) {
    out.ap = 0.0;
    return out;
  }

  std::sort(predictions.begin(), predictions.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.video_id != b.video_id) return a.video_id < b.video_id;
    if (a.start != b.start) return a.start < b.start;
    return a.end < b.end;
  });

  std::vector<char> gt_matched(ground_truths.size(), 0);
  double ap = 0.0;
  int tp = 0;
  for (size_t rank = 0; rank < predictions.size(); ++rank) {
    const Detection& p = predictions[rank];
    int best = -1;
    double best_iou = 0.0;
    for (size_t g = 0; g < ground_truths.size(); ++g) {
      if (gt_matched[g] || ground_truths[g].video_id != p.video_id) continue;
      double iou = iou_1d(p.start, p.end, ground_truths[g].start, ground_truths[g].end);
      if (iou >= iou_threshold && iou > best_iou) {
        best_iou = iou;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      gt_matched[best] = 1;
      ++tp;
      double precision = static_cast<double>(tp) / static_cast<double>(rank + 1);
      ap += precision / static_cast<double>(ground_truths.size());
    }
  }
  out.ap = ap;
  return out;
}

EvalReport evaluate(const std::vector<Detection>& predictions,
                    const std::vector<FeatureSequence>& corpus,
                    const std::vector<double>& thresholds, int num_classes) {
  for (const Detection& p : predictions) {
    if (p.class_id < 0 || p.class_id >= num_classes) {
      throw DataError("evaluate: prediction in '" + p.video_id + "' has unknown class id " +
                      std::to_string(p.class_id));
    }
  }

  std::vector<std::vector<Detection>> preds_by_class(num_classes);
  for (const Detection& p : predictions) preds_by_class[p.class_id].push_back(p);

  std::vector<std::vector<Detection>> gts_by_class(num_classes);
  int total_gt = 0;
  for (const FeatureSequence& seq : corpus) {
    for (const GroundTruthSegment& g : seq.annotations) {
      if (g.class_id < 0 || g.class_id >= num_classes) {
        throw DataError("evaluate: ground truth in '" + seq.video_id +
                        "' has unknown class id " + std::to_string(g.class_id));
      }
      gts_by_class[g.class_id].push_back({seq.video_id, g.start, g.end, g.class_id, 1.0});
      ++total_gt;
    }
  }

  EvalReport rep;
  rep.thresholds = thresholds;
  rep.num_classes = num_classes;
  rep.num_predictions = static_cast<int>(predictions.size());
  rep.num_ground_truths = total_gt;
  for (double th : thresholds) {
    std::vector<ApResult> row;
    double sum = 0.0;
    int counted = 0;
    for (int c = 0; c < num_classes; ++c) {
      ApResult r = average_precision(preds_by_class[c], gts_by_class[c], th);
      if (r.defined) {
        sum += r.ap;
        ++counted;
      }
      row.push_back(r);
    }
    rep.class_ap.push_back(std::move(row));
    rep.map_per_threshold.push_back(counted > 0 ? sum / counted : 0.0);
  }
  double avg = 0.0;
  for (double m : rep.map_per_threshold) avg += m;
  rep.average_map = thresholds.empty() ? 0.0 : avg / thresholds.size();
  return rep;
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["average_map"] = report.average_map;
  j["num_classes"] = report.num_classes;
  j["num_predictions"] = report.num_predictions;
  j["num_ground_truths"] = report.num_ground_truths;
  nlohmann::json per;
  for (size_t i = 0; i < report.thresholds.size(); ++i) {
    nlohmann::json entry;
    entry["threshold"] = report.thresholds[i];
    entry["map"] = report.map_per_threshold[i];
    nlohmann::json classes = nlohmann::json::array();
    for (size_t c = 0; c < report.class_ap[i].size(); ++c) {
      const ApResult& r = report.class_ap[i][c];
      classes.push_back({{"class_id", static_cast<int>(c)},
                         {"ap", r.ap},
                         {"defined", r.defined},
                         {"num_gt", r.num_gt},
                         {"num_pred", r.num_pred}});
    }
    entry["classes"] = classes;
    per.push_back(entry);
  }
  j["per_threshold"] = per;
  return j.dump(2);
}

std::string report_to_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "threshold,class,ap\n";
  char buf[64];
  for (size_t i = 0; i < report.thresholds.size(); ++i) {
    for (size_t c = 0; c < report.class_ap[i].size(); ++c) {
      if (!report.class_ap[i][c].defined) continue;
      std::snprintf(buf, sizeof(buf), "%.4f,%zu,%.17g\n", report.thresholds[i], c,
                    report.class_ap[i][c].ap);
      os << buf;
    }
    std::snprintf(buf, sizeof(buf), "%.4f,mAP,%.17g\n", report.thresholds[i],
                  report.map_per_threshold[i]);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "average,mAP,%.17g\n", report.average_map);
  os << buf;
  return os.str();
}

}  // namespace otloc
