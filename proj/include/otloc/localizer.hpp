#pragma once

#include <vector>

#include "otloc/evalkit.hpp"
#include "otloc/otalign.hpp"
#include "otloc/representation.hpp"

namespace otloc {

// Per-level classification logits (T_l x C) and non-negative boundary offsets
// (T_l x 2, start/end, in units of the level stride).
struct LevelLogits {
  std::vector<Matrix> cls;
  std::vector<Matrix> offsets;
};

struct LevelRange {
  double lo = 0.0;
  double hi = 0.0;  // inclusive; infinity on the coarsest level
};

// ActionFormer-style regression ranges in stride units: [0,4], [2,8], [4,16],
// [8,32], [16,inf] for five levels, extended by the same doubling pattern.
std::vector<LevelRange> default_regression_ranges(int levels);

struct TargetAssignment {
  // Per level, per location: 0 = background, otherwise class_id + 1.
  std::vector<std::vector<int>> labels;
  // Per level: T_l x 2 regression targets (d_s, d_e) in stride units, valid
  // only where the location is positive.
  std::vector<Matrix> reg_targets;
  int n_pos = 0;
};

struct LossBreakdown {
  double cls = 0.0;    // summed focal term
  double reg = 0.0;    // summed DIoU term over positives
  double total = 0.0;  // (cls + lambda_reg * reg) / max(n_pos, 1)
  int n_pos = 0;
};

struct ActionInstance {
  double start = 0.0;  // seconds
  double end = 0.0;
  int class_id = 0;
  double score = 0.0;
};

// Per-location class evidence from a transport plan: the plan-weighted mean
// cost of each row, mapped to a logit (1 - mean_cost) / tau. Gradients flow
// through the cost only; the plan is a constant.
std::vector<double> score_locations(const TransportPlan& plan, const CostMatrix& cost,
                                    double tau);

// d(loss)/d(cost) for score_locations given d(loss)/d(logit) per row.
Matrix score_locations_backward(const TransportPlan& plan, double tau,
                                const std::vector<double>& d_logits);

// offsets = relu(features * w + b), T_l x 2. preact_out, when given, receives
// the pre-rectifier values for the backward pass.
Matrix regress_offsets(const Matrix& level_features, const Matrix& w, const Matrix& b,
                       Matrix* preact_out = nullptr);

// Accumulates head gradients and returns d(loss)/d(features).
Matrix regress_offsets_backward(const Matrix& level_features, const Matrix& preact,
                                const Matrix& d_offsets, GradSlot& w, GradSlot& b);

// Center-inside + range-bucket assignment. A location is positive for the
// segment containing its center time whose max offset falls in the level's
// range; among candidates the shortest segment wins.
TargetAssignment assign_targets(const FeaturePyramid& pyramid,
                                const std::vector<GroundTruthSegment>& annotations,
                                const std::vector<LevelRange>& ranges,
                                double clip_stride_seconds);

// Binary focal loss on a probability already in (0, 1); p is clamped to
// [1e-7, 1 - 1e-7] before the log.
double focal_loss(double p, int y, double alpha = 0.25, double gamma = 2.0);

// Numerically direct focal-on-sigmoid: returns loss, writes d(loss)/d(logit).
double focal_loss_from_logit(double logit, int y, double alpha, double gamma,
                             double* d_logit);

// 1D Distance-IoU: 1 - IoU + (center gap)^2 / (enclosing length)^2. Identical
// point intervals return 0.
double diou_loss(double pred_start, double pred_end, double gt_start, double gt_end);

// Same value plus subgradients w.r.t. the predicted endpoints.
double diou_loss_grad(double pred_start, double pred_end, double gt_start, double gt_end,
                      double* d_pred_start, double* d_pred_end);

// Eq-style aggregate: focal over every (location, class) plus lambda_reg *
// DIoU over positives, normalized by max(n_pos, 1). The gradient variant
// fills per-level d(loss)/d(logits) and d(loss)/d(offsets) (pre-normalized,
// i.e. already divided by max(n_pos, 1)).
LossBreakdown total_loss(const LevelLogits& logits, const TargetAssignment& targets,
                         double lambda_reg);
LossBreakdown total_loss_grad(const LevelLogits& logits, const TargetAssignment& targets,
                              double lambda_reg, std::vector<Matrix>* d_cls,
                              std::vector<Matrix>* d_offsets);

// Anchor-free decoding: every (level, location, class) above the score
// threshold becomes an instance, clamped to the video extent; empty and
// negative-length results are dropped.
std::vector<ActionInstance> decode(const LevelLogits& logits, double score_threshold,
                                   const std::vector<int>& strides,
                                   double clip_stride_seconds, double video_extent_seconds);

// Greedy per-class NMS with deterministic (score desc, start, end) ordering,
// truncated to top_k overall.
std::vector<ActionInstance> nms(std::vector<ActionInstance> instances, double iou_threshold,
                                int top_k);

}  // namespace otloc
