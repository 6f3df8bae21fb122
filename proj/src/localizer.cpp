#include "otloc/localizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace otloc {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kProbEps = 1e-7;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
}  // namespace

std::vector<LevelRange> default_regression_ranges(int levels) {
  std::vector<LevelRange> ranges;
  for (int l = 1; l <= levels; ++l) {
    LevelRange r;
    r.lo = (l == 1) ? 0.0 : std::pow(2.0, l - 1);
    r.hi = (l == levels) ? kInf : std::pow(2.0, l + 1);
    ranges.push_back(r);
  }
  return ranges;
}

std::vector<double> score_locations(const TransportPlan& plan, const CostMatrix& cost,
                                    double tau) {
  const Matrix& p = plan.coupling;
  const Matrix& c = cost.values;
  if (!p.same_shape(c)) {
    throw DimensionError("score_locations: plan " + shape_str(p) + " vs cost " +
                         shape_str(c));
  }
  if (!(tau > 0.0)) throw ConfigError("score_locations: tau must be positive");

  std::vector<double> logits(p.rows);
  for (int t = 0; t < p.rows; ++t) {
    double mass = 0.0, weighted = 0.0;
    for (int j = 0; j < p.cols; ++j) {
      mass += p(t, j);
      weighted += p(t, j) * c(t, j);
    }
    if (mass <= 0.0) {
      throw NumericError("score_locations: zero row mass in plan at row " +
                         std::to_string(t));
    }
    logits[t] = (1.0 - weighted / mass) / tau;
  }
  return logits;
}

Matrix score_locations_backward(const TransportPlan& plan, double tau,
                                const std::vector<double>& d_logits) {
  const Matrix& p = plan.coupling;
  if (static_cast<int>(d_logits.size()) != p.rows) {
    throw DimensionError("score_locations_backward: gradient length mismatch");
  }
  Matrix d_cost(p.rows, p.cols);
  for (int t = 0; t < p.rows; ++t) {
    double mass = 0.0;
    for (int j = 0; j < p.cols; ++j) mass += p(t, j);
    double scale = -d_logits[t] / (mass * tau);
    for (int j = 0; j < p.cols; ++j) {
      d_cost(t, j) = scale * p(t, j);
    }
  }
  return d_cost;
}

Matrix regress_offsets(const Matrix& level_features, const Matrix& w, const Matrix& b,
                       Matrix* preact_out) {
  Matrix pre = matmul(level_features, w);
  for (int t = 0; t < pre.rows; ++t) {
    for (int k = 0; k < pre.cols; ++k) pre(t, k) += b(0, k);
  }
  if (preact_out) *preact_out = pre;
  Matrix out = pre;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

Matrix regress_offsets_backward(const Matrix& level_features, const Matrix& preact,
                                const Matrix& d_offsets, GradSlot& w, GradSlot& b) {
  Matrix d_pre = d_offsets;
  for (size_t i = 0; i < d_pre.size(); ++i) {
    if (preact.data[i] <= 0.0) d_pre.data[i] = 0.0;
  }
  accumulate_grad(w, matmul(transpose(level_features), d_pre));
  Matrix db(1, d_pre.cols);
  for (int t = 0; t < d_pre.rows; ++t) {
    for (int k = 0; k < d_pre.cols; ++k) db(0, k) += d_pre(t, k);
  }
  accumulate_grad(b, db);
  return matmul(d_pre, transpose(w.value));
}

TargetAssignment assign_targets(const FeaturePyramid& pyramid,
                                const std::vector<GroundTruthSegment>& annotations,
                                const std::vector<LevelRange>& ranges,
                                double clip_stride_seconds) {
  if (ranges.size() != pyramid.levels.size()) {
    throw DimensionError("assign_targets: need one regression range per level");
  }
  TargetAssignment out;
  for (size_t l = 0; l < pyramid.levels.size(); ++l) {
    int t_len = pyramid.levels[l].rows;
    double stride_sec = pyramid.strides[l] * clip_stride_seconds;
    std::vector<int> labels(t_len, 0);
    Matrix regs(t_len, 2);
    for (int t = 0; t < t_len; ++t) {
      double center = (t + 0.5) * stride_sec;
      const GroundTruthSegment* best = nullptr;
      for (const auto& g : annotations) {
        if (center < g.start || center > g.end) continue;
        double ds = (center - g.start) / stride_sec;
        double de = (g.end - center) / stride_sec;
        double m = std::max(ds, de);
        if (m < ranges[l].lo || m > ranges[l].hi) continue;
        if (!best || (g.end - g.start) < (best->end - best->start)) {
          best = &g;
        }
      }
      if (best) {
        labels[t] = best->class_id + 1;
        regs(t, 0) = (center - best->start) / stride_sec;
        regs(t, 1) = (best->end - center) / stride_sec;
        ++out.n_pos;
      }
    }
    out.labels.push_back(std::move(labels));
    out.reg_targets.push_back(std::move(regs));
  }
  return out;
}

double focal_loss(double p, int y, double alpha, double gamma) {
  p = std::min(std::max(p, kProbEps), 1.0 - kProbEps);
  double pt = y ? p : 1.0 - p;
  double at = y ? alpha : 1.0 - alpha;
  return -at * std::pow(1.0 - pt, gamma) * std::log(pt);
}

double focal_loss_from_logit(double logit, int y, double alpha, double gamma,
                             double* d_logit) {
  double p = sigmoid(logit);
  double pc = std::min(std::max(p, kProbEps), 1.0 - kProbEps);
  double pt = y ? pc : 1.0 - pc;
  double at = y ? alpha : 1.0 - alpha;
  double one_minus = 1.0 - pt;
  double loss = -at * std::pow(one_minus, gamma) * std::log(pt);
  if (d_logit) {
    // dL/dpt, then dpt/dlogit = +-p(1-p) using the clamped probability.
    double dl_dpt;
    if (gamma == 0.0) {
      dl_dpt = -at / pt;
    } else {
      dl_dpt = at * (gamma * std::pow(one_minus, gamma - 1.0) * std::log(pt) -
                     std::pow(one_minus, gamma) / pt);
    }
    double dpt_dz = pc * (1.0 - pc);
    if (!y) dpt_dz = -dpt_dz;
    *d_logit = dl_dpt * dpt_dz;
  }
  return loss;
}

double diou_loss(double ps, double pe, double gs, double ge) {
  return diou_loss_grad(ps, pe, gs, ge, nullptr, nullptr);
}

double diou_loss_grad(double ps, double pe, double gs, double ge, double* d_ps,
                      double* d_pe) {
  if (ps == gs && pe == ge && ps == pe) {
    // Both intervals collapse to the same point.
    if (d_ps) *d_ps = 0.0;
    if (d_pe) *d_pe = 0.0;
    return 0.0;
  }

  double inter = std::min(pe, ge) - std::max(ps, gs);
  bool overlap = inter > 0.0;
  if (!overlap) inter = 0.0;
  double len_p = pe - ps;
  double len_g = ge - gs;
  double uni = len_p + len_g - inter;
  double iou = uni > 0.0 ? inter / uni : 0.0;

  double dc = 0.5 * (ps + pe) - 0.5 * (gs + ge);
  double enclose = std::max(pe, ge) - std::min(ps, gs);
  double penalty = (dc * dc) / (enclose * enclose);
  double loss = 1.0 - iou + penalty;

  if (d_ps || d_pe) {
    double di_dps = overlap && ps > gs ? -1.0 : 0.0;
    double di_dpe = overlap && pe < ge ? 1.0 : 0.0;
    double du_dps = -1.0 - di_dps;
    double du_dpe = 1.0 - di_dpe;
    double diou_dps = 0.0, diou_dpe = 0.0;
    if (uni > 0.0) {
      diou_dps = (di_dps * uni - inter * du_dps) / (uni * uni);
      diou_dpe = (di_dpe * uni - inter * du_dpe) / (uni * uni);
    }
    double de_dps = ps < gs ? -1.0 : 0.0;
    double de_dpe = pe > ge ? 1.0 : 0.0;
    double dpen_dps = (dc / (enclose * enclose)) - 2.0 * penalty / enclose * de_dps;
    double dpen_dpe = (dc / (enclose * enclose)) - 2.0 * penalty / enclose * de_dpe;
    if (d_ps) *d_ps = -diou_dps + dpen_dps;
    if (d_pe) *d_pe = -diou_dpe + dpen_dpe;
  }
  return loss;
}

LossBreakdown total_loss(const LevelLogits& logits, const TargetAssignment& targets,
                         double lambda_reg) {
  return total_loss_grad(logits, targets, lambda_reg, nullptr, nullptr);
}

LossBreakdown total_loss_grad(const LevelLogits& logits, const TargetAssignment& targets,
                              double lambda_reg, std::vector<Matrix>* d_cls,
                              std::vector<Matrix>* d_offsets) {
  if (logits.cls.size() != targets.labels.size()) {
    throw DimensionError("total_loss: level count mismatch between logits and targets");
  }
  LossBreakdown out;
  out.n_pos = targets.n_pos;
  double norm = std::max(targets.n_pos, 1);

  if (d_cls) d_cls->clear();
  if (d_offsets) d_offsets->clear();

  for (size_t l = 0; l < logits.cls.size(); ++l) {
    const Matrix& z = logits.cls[l];
    const Matrix& off = logits.offsets[l];
    const std::vector<int>& labels = targets.labels[l];
    if (z.rows != static_cast<int>(labels.size())) {
      throw DimensionError("total_loss: location count mismatch at level " +
                           std::to_string(l + 1));
    }
    Matrix dz(z.rows, z.cols), doff(off.rows, off.cols);

    for (int t = 0; t < z.rows; ++t) {
      int label = labels[t];
      for (int c = 0; c < z.cols; ++c) {
        int y = (label == c + 1) ? 1 : 0;
        double g = 0.0;
        out.cls += focal_loss_from_logit(z(t, c), y, 0.25, 2.0, &g);
        dz(t, c) = g / norm;
      }
      if (label > 0) {
        double center = t + 0.5;  // stride units at this level
        double ps = center - off(t, 0);
        double pe = center + off(t, 1);
        double gs = center - targets.reg_targets[l](t, 0);
        double ge = center + targets.reg_targets[l](t, 1);
        double dps = 0.0, dpe = 0.0;
        out.reg += diou_loss_grad(ps, pe, gs, ge, &dps, &dpe);
        // ps = center - d_s, pe = center + d_e
        doff(t, 0) = -dps * lambda_reg / norm;
        doff(t, 1) = dpe * lambda_reg / norm;
      }
    }
    if (d_cls) d_cls->push_back(std::move(dz));
    if (d_offsets) d_offsets->push_back(std::move(doff));
  }
  out.total = (out.cls + lambda_reg * out.reg) / norm;
  return out;
}

std::vector<ActionInstance> decode(const LevelLogits& logits, double score_threshold,
                                   const std::vector<int>& strides,
                                   double clip_stride_seconds, double video_extent_seconds) {
  std::vector<ActionInstance> out;
  for (size_t l = 0; l < logits.cls.size(); ++l) {
    const Matrix& z = logits.cls[l];
    const Matrix& off = logits.offsets[l];
    double stride_sec = strides[l] * clip_stride_seconds;
    for (int t = 0; t < z.rows; ++t) {
      double center = (t + 0.5) * stride_sec;
      for (int c = 0; c < z.cols; ++c) {
        double score = sigmoid(z(t, c));
        if (score <= score_threshold) continue;
        double start = center - off(t, 0) * stride_sec;
        double end = center + off(t, 1) * stride_sec;
        start = std::max(0.0, start);
        end = std::min(video_extent_seconds, end);
        if (end - start <= 0.0) continue;
        out.push_back({start, end, c, score});
      }
    }
  }
  return out;
}

std::vector<ActionInstance> nms(std::vector<ActionInstance> instances, double iou_threshold,
                                int top_k) {
  std::sort(instances.begin(), instances.end(),
            [](const ActionInstance& a, const ActionInstance& b) {
              if (a.score != b.score) return a.score > b.score;
              if (a.start != b.start) return a.start < b.start;
              return a.end < b.end;
            });
  std::vector<ActionInstance> kept;
  std::vector<char> suppressed(instances.size(), 0);
  for (size_t i = 0; i < instances.size(); ++i) {
    if (suppressed[i]) continue;
    kept.push_back(instances[i]);
    for (size_t j = i + 1; j < instances.size(); ++j) {
      if (suppressed[j] || instances[j].class_id != instances[i].class_id) continue;
      double iou = iou_1d(instances[i].start, instances[i].end, instances[j].start,
                          instances[j].end);
      if (iou > iou_threshold) suppressed[j] = 1;
    }
  }
  if (top_k >= 0 && static_cast<int>(kept.size()) > top_k) kept.resize(top_k);
  return kept;
}

}  // namespace otloc
