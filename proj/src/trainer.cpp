#include "otloc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "otloc/codec.hpp"

namespace otloc {

std::string strategy_name(AlignmentStrategy s) {
  switch (s) {
    case AlignmentStrategy::kOt: return "ot";
    case AlignmentStrategy::kHungarian: return "hungarian";
    case AlignmentStrategy::kEuclidean: return "euclidean";
    case AlignmentStrategy::kMean: return "mean";
  }
  return "ot";
}

AlignmentStrategy strategy_from_name(const std::string& name) {
  if (name == "ot") return AlignmentStrategy::kOt;
  if (name == "hungarian") return AlignmentStrategy::kHungarian;
  if (name == "euclidean") return AlignmentStrategy::kEuclidean;
  if (name == "mean") return AlignmentStrategy::kMean;
  throw ConfigError("unknown alignment strategy '" + name +
                    "' (expected ot|hungarian|euclidean|mean)");
}

ModelState init_model(int num_classes, int feature_dim, const TrainConfig& cfg) {
  if (num_classes < 1) throw ConfigError("init_model: need at least one class");
  ModelState m;
  m.num_classes = num_classes;
  m.feature_dim = feature_dim;
  m.cfg = cfg;

  Rng root(cfg.seed);
  Rng bank_rng = root.fork(11);
  m.bank = init_context_bank(num_classes, cfg.num_prompts, cfg.n_ctx, cfg.d_ctx, bank_rng);
  Rng conv_rng = root.fork(12);
  m.conv = TemporalConvStack::init(cfg.conv_depth, feature_dim, conv_rng);
  Rng head_rng = root.fork(13);
  Matrix hw(feature_dim, 2);
  double scale = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  for (double& x : hw.data) x = head_rng.gaussian(0.0, scale);
  m.head_w = GradSlot(std::move(hw));
  m.head_b = GradSlot(Matrix(1, 2));

  uint64_t enc_seed = root.fork(14).seed();
  m.encoder = PseudoEncoder::make(num_classes, cfg.n_ctx, cfg.d_ctx, feature_dim, enc_seed);
  return m;
}

std::vector<GradSlot*> trainable_params(ModelState& model) {
  std::vector<GradSlot*> params;
  for (auto& block : model.bank.blocks) params.push_back(&block);
  for (auto& w : model.conv.weights) params.push_back(&w);
  for (auto& b : model.conv.biases) params.push_back(&b);
  params.push_back(&model.head_w);
  params.push_back(&model.head_b);
  return params;
}

void zero_all_grads(ModelState& model) {
  for (GradSlot* p : trainable_params(model)) zero_grad(*p);
}

OptimizerState OptimizerState::make(const std::vector<GradSlot*>& params) {
  OptimizerState opt;
  for (const GradSlot* p : params) {
    opt.moments.push_back({Matrix(p->value.rows, p->value.cols),
                           Matrix(p->value.rows, p->value.cols)});
  }
  return opt;
}

void adam_update(std::vector<GradSlot*>& params, OptimizerState& opt, double lr) {
  if (params.size() != opt.moments.size()) {
    throw DimensionError("adam_update: parameter/moment count mismatch");
  }
  ++opt.step;
  double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Matrix& val = params[i]->value;
    const Matrix& g = params[i]->grad;
    Matrix& m = opt.moments[i].m;
    Matrix& v = opt.moments[i].v;
    for (size_t k = 0; k < val.size(); ++k) {
      m.data[k] = opt.beta1 * m.data[k] + (1.0 - opt.beta1) * g.data[k];
      v.data[k] = opt.beta2 * v.data[k] + (1.0 - opt.beta2) * g.data[k] * g.data[k];
      double mhat = m.data[k] / bc1;
      double vhat = v.data[k] / bc2;
      val.data[k] -= lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
}

std::vector<FeatureSequence> sample_few_shot(const std::vector<FeatureSequence>& corpus,
                                             int shots, int num_classes, Rng& rng) {
  // (video index, annotation index) per class, in corpus order.
  std::vector<std::vector<std::pair<int, int>>> by_class(num_classes);
  for (size_t v = 0; v < corpus.size(); ++v) {
    for (size_t a = 0; a < corpus[v].annotations.size(); ++a) {
      int c = corpus[v].annotations[a].class_id;
      if (c < 0 || c >= num_classes) {
        throw DataError("sample_few_shot: annotation with unknown class id " +
                        std::to_string(c) + " in '" + corpus[v].video_id + "'");
      }
      by_class[c].emplace_back(static_cast<int>(v), static_cast<int>(a));
    }
  }

  std::vector<std::vector<char>> selected(corpus.size());
  for (size_t v = 0; v < corpus.size(); ++v) {
    selected[v].assign(corpus[v].annotations.size(), 0);
  }
  for (int c = 0; c < num_classes; ++c) {
    auto& pool = by_class[c];
    if (static_cast<int>(pool.size()) < shots) {
      throw DataError("sample_few_shot: class " + std::to_string(c) + " has only " +
                      std::to_string(pool.size()) + " instances, need " +
                      std::to_string(shots));
    }
    // Partial Fisher-Yates: the first `shots` entries become the sample.
    for (int i = 0; i < shots; ++i) {
      int j = rng.uniform_int(i, static_cast<int>(pool.size()) - 1);
      std::swap(pool[i], pool[j]);
      selected[pool[i].first][pool[i].second] = 1;
    }
  }

  std::vector<FeatureSequence> out;
  for (size_t v = 0; v < corpus.size(); ++v) {
    bool any = false;
    for (char s : selected[v]) any |= s;
    if (!any) continue;
    FeatureSequence copy = corpus[v];
    copy.annotations.clear();
    for (size_t a = 0; a < corpus[v].annotations.size(); ++a) {
      if (selected[v][a]) copy.annotations.push_back(corpus[v].annotations[a]);
    }
    out.push_back(std::move(copy));
  }
  return out;
}

namespace {

// Everything the backward pass needs from one forward evaluation.
struct Forward {
  ConvCache conv_cache;
  FeaturePyramid pyramid;
  std::vector<RowNormResult> normed;     // per level
  std::vector<Matrix> class_prompts;     // per class: G_c, N x D
  std::vector<Matrix> score_prompts;     // per class: matrix the cost is built on
  std::vector<CostMatrix> costs;         // level * C + class
  LevelLogits logits;
  std::vector<Matrix> head_preacts;      // per level
};

// Unique hard assignment of every feature row to one prompt: the one-to-one
// Hungarian matching claims min(T,N) rows, every remaining row goes to its
// cheapest prompt. Each row ends up with exactly one unit of mass.
Matrix hungarian_plan(const CostMatrix& cost) {
  HungarianResult hr = hungarian_align(cost);
  Matrix plan(cost.values.rows, cost.values.cols);
  std::vector<char> row_matched(cost.values.rows, 0);
  for (auto& [r, c] : hr.assignment) {
    plan(r, c) = 1.0;
    row_matched[r] = 1;
  }
  for (int r = 0; r < plan.rows; ++r) {
    if (row_matched[r]) continue;
    int best = 0;
    for (int c = 1; c < plan.cols; ++c) {
      if (cost.values(r, c) < cost.values(r, best)) best = c;
    }
    plan(r, best) = 1.0;
  }
  return plan;
}

Matrix strategy_plan(const CostMatrix& cost, const ModelState& model) {
  switch (model.cfg.strategy) {
    case AlignmentStrategy::kOt:
    case AlignmentStrategy::kMean: {
      Marginals mg = Marginals::uniform(cost.values.rows, cost.values.cols);
      return sinkhorn(cost, mg, model.cfg.sinkhorn).coupling;
    }
    case AlignmentStrategy::kHungarian:
      return hungarian_plan(cost);
    case AlignmentStrategy::kEuclidean: {
      // All-pairs alignment, no coupling: every prompt weighs equally.
      Matrix plan(cost.values.rows, cost.values.cols);
      std::fill(plan.data.begin(), plan.data.end(), 1.0);
      return plan;
    }
  }
  throw ConfigError("strategy_plan: unreachable");
}

// Shared forward pass. When `plans` is null the alignment is solved fresh
// (and optionally captured into plans_out); otherwise the given plans are
// used unchanged, which keeps finite-difference probes consistent with the
// envelope gradient.
Forward run_forward(const ModelState& model, const FeatureSequence& video,
                    const PlanSet* plans, PlanSet* plans_out) {
  const TrainConfig& cfg = model.cfg;
  Forward fw;

  Matrix refined = temporal_conv(video.features, model.conv, &fw.conv_cache);
  fw.pyramid = build_pyramid(refined, cfg.fpn_levels);
  int num_levels = static_cast<int>(fw.pyramid.levels.size());

  for (int l = 0; l < num_levels; ++l) {
    fw.normed.push_back(l2_normalize_rows(fw.pyramid.levels[l]));
  }

  for (int c = 0; c < model.num_classes; ++c) {
    Matrix g = encode_prompts(model.bank, model.encoder, c);
    if (cfg.strategy == AlignmentStrategy::kMean) {
      fw.score_prompts.push_back(mean_prompt_matrix(g));
    } else {
      fw.score_prompts.push_back(g);
    }
    fw.class_prompts.push_back(std::move(g));
  }

  if (plans_out) {
    plans_out->plans.clear();
    plans_out->num_levels = num_levels;
    plans_out->num_classes = model.num_classes;
  }

  for (int l = 0; l < num_levels; ++l) {
    int t_len = fw.pyramid.levels[l].rows;
    Matrix cls(t_len, model.num_classes);
    for (int c = 0; c < model.num_classes; ++c) {
      CostMatrix cost = cosine_cost(fw.normed[l].values, fw.score_prompts[c]);
      const Matrix* plan_m;
      Matrix fresh;
      if (plans) {
        plan_m = &plans->at(l, c);
      } else {
        fresh = strategy_plan(cost, model);
        plan_m = &fresh;
      }
      TransportPlan tp;
      tp.coupling = *plan_m;
      std::vector<double> col = score_locations(tp, cost, cfg.tau);
      for (int t = 0; t < t_len; ++t) cls(t, c) = col[t];
      if (plans_out) plans_out->plans.push_back(*plan_m);
      fw.costs.push_back(std::move(cost));
    }
    fw.logits.cls.push_back(std::move(cls));

    Matrix preact;
    Matrix off = regress_offsets(fw.pyramid.levels[l], model.head_w.value,
                                 model.head_b.value, &preact);
    fw.logits.offsets.push_back(std::move(off));
    fw.head_preacts.push_back(std::move(preact));
  }
  return fw;
}

// Backward through row normalization: for non-degenerate rows
// d_raw = (d_norm - normed * <normed, d_norm>) / |raw|; degenerate rows passed
// through unchanged (forward was the identity there).
void normalize_backward(const Matrix& raw, const RowNormResult& rn, const Matrix& d_norm,
                        Matrix* d_raw) {
  for (int i = 0; i < raw.rows; ++i) {
    if (rn.degenerate[i]) {
      for (int k = 0; k < raw.cols; ++k) (*d_raw)(i, k) += d_norm(i, k);
      continue;
    }
    double sq = 0.0;
    for (int k = 0; k < raw.cols; ++k) sq += raw(i, k) * raw(i, k);
    double norm = std::sqrt(sq);
    double dot = 0.0;
    for (int k = 0; k < raw.cols; ++k) dot += rn.values(i, k) * d_norm(i, k);
    for (int k = 0; k < raw.cols; ++k) {
      (*d_raw)(i, k) += (d_norm(i, k) - rn.values(i, k) * dot) / norm;
    }
  }
}

// Backward through the renormalized ensemble mean.
void mean_prompt_backward(const Matrix& prompts, const Matrix& d_mean, Matrix* d_prompts) {
  int n = prompts.rows, d = prompts.cols;
  if (n == 1) {
    for (int k = 0; k < d; ++k) (*d_prompts)(0, k) += d_mean(0, k);
    return;
  }
  Matrix mean(1, d);
  for (int k = 0; k < d; ++k) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += prompts(i, k);
    mean(0, k) = s / n;
  }
  double sq = 0.0;
  for (int k = 0; k < d; ++k) sq += mean(0, k) * mean(0, k);
  double norm = std::sqrt(sq);
  double dot = 0.0;
  for (int k = 0; k < d; ++k) dot += (mean(0, k) / norm) * d_mean(0, k);
  for (int k = 0; k < d; ++k) {
    double dm = (d_mean(0, k) - (mean(0, k) / norm) * dot) / norm;
    for (int i = 0; i < n; ++i) (*d_prompts)(i, k) += dm / n;
  }
}

// grad_target is null for a pure forward evaluation; otherwise gradients are
// accumulated into its slots. Either way the plans stay fixed.
LossBreakdown video_loss_impl(const ModelState& model, const FeatureSequence& video,
                              const PlanSet& plans, ModelState* grad_target) {
  const TrainConfig& cfg = model.cfg;

  Forward fw = run_forward(model, video, &plans, nullptr);
  std::vector<LevelRange> ranges = default_regression_ranges(cfg.fpn_levels);
  TargetAssignment targets =
      assign_targets(fw.pyramid, video.annotations, ranges, video.clip_stride_seconds);

  if (!grad_target) {
    return total_loss(fw.logits, targets, cfg.lambda_reg);
  }

  std::vector<Matrix> d_cls, d_off;
  LossBreakdown lb = total_loss_grad(fw.logits, targets, cfg.lambda_reg, &d_cls, &d_off);

  int num_levels = static_cast<int>(fw.pyramid.levels.size());
  Matrix d_base(fw.pyramid.levels[0].rows, fw.pyramid.levels[0].cols);
  std::vector<Matrix> d_prompts(model.num_classes);
  for (int c = 0; c < model.num_classes; ++c) {
    d_prompts[c] = Matrix(fw.score_prompts[c].rows, fw.score_prompts[c].cols);
  }

  for (int l = 0; l < num_levels; ++l) {
    const Matrix& raw = fw.pyramid.levels[l];
    Matrix d_level(raw.rows, raw.cols);

    // Regression branch reads the raw level features.
    Matrix d_feat = regress_offsets_backward(raw, fw.head_preacts[l], d_off[l],
                                             grad_target->head_w, grad_target->head_b);
    for (size_t i = 0; i < d_feat.size(); ++i) d_level.data[i] += d_feat.data[i];

    // Classification branch reads the normalized features via the costs.
    Matrix d_norm(raw.rows, raw.cols);
    for (int c = 0; c < model.num_classes; ++c) {
      const CostMatrix& cost = fw.costs[static_cast<size_t>(l) * model.num_classes + c];
      TransportPlan tp;
      tp.coupling = plans.at(l, c);
      std::vector<double> d_logits(raw.rows);
      for (int t = 0; t < raw.rows; ++t) d_logits[t] = d_cls[l](t, c);
      Matrix d_cost = score_locations_backward(tp, cfg.tau, d_logits);
      cost_backward(cost, fw.normed[l].values, fw.score_prompts[c], d_cost, &d_norm,
                    &d_prompts[c]);
    }
    normalize_backward(raw, fw.normed[l], d_norm, &d_level);

    pyramid_backward(fw.pyramid, l + 1, d_level, &d_base);
  }

  for (int c = 0; c < model.num_classes; ++c) {
    if (cfg.strategy == AlignmentStrategy::kMean) {
      Matrix dg(fw.class_prompts[c].rows, fw.class_prompts[c].cols);
      mean_prompt_backward(fw.class_prompts[c], d_prompts[c], &dg);
      encode_prompts_backward(grad_target->bank, grad_target->encoder, c, dg);
    } else {
      encode_prompts_backward(grad_target->bank, grad_target->encoder, c, d_prompts[c]);
    }
  }

  temporal_conv_backward(grad_target->conv, fw.conv_cache, d_base);
  return lb;
}

}  // namespace

PlanSet compute_plans(const ModelState& model, const FeatureSequence& video) {
  PlanSet plans;
  run_forward(model, video, nullptr, &plans);
  return plans;
}

LossBreakdown video_loss(const ModelState& model, const FeatureSequence& video,
                         const PlanSet& plans) {
  return video_loss_impl(model, video, plans, nullptr);
}

LossBreakdown video_loss_grad(ModelState& model, const FeatureSequence& video,
                              const PlanSet& plans) {
  return video_loss_impl(model, video, plans, &model);
}

StepLoss train_step(ModelState& model, const std::vector<const FeatureSequence*>& batch,
                    OptimizerState& opt) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  zero_all_grads(model);

  StepLoss agg;
  for (const FeatureSequence* video : batch) {
    PlanSet plans = compute_plans(model, *video);
    LossBreakdown lb = video_loss_grad(model, *video, plans);
    double norm = std::max(lb.n_pos, 1);
    agg.cls += lb.cls / norm;
    agg.reg += lb.reg / norm;
    agg.total += lb.total;
    agg.n_pos += lb.n_pos;
  }
  double inv = 1.0 / batch.size();
  agg.cls *= inv;
  agg.reg *= inv;
  agg.total *= inv;

  std::vector<GradSlot*> params = trainable_params(model);
  for (size_t i = 0; i < params.size(); ++i) {
    for (double& g : params[i]->grad.data) g *= inv;
    for (double g : params[i]->grad.data) {
      if (!std::isfinite(g)) {
        throw NumericError("train_step: non-finite gradient in parameter " +
                           std::to_string(i));
      }
    }
  }
  adam_update(params, opt, model.cfg.learning_rate);
  return agg;
}

std::vector<EpochStats> train(ModelState& model, const std::vector<FeatureSequence>& support,
                              OptimizerState& opt) {
  if (support.empty()) throw DataError("train: empty support set");
  const TrainConfig& cfg = model.cfg;
  Rng root(cfg.seed);

  std::vector<EpochStats> history;
  std::vector<int> order(support.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng = root.fork(1000 + static_cast<uint64_t>(epoch));
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      int j = shuffle_rng.uniform_int(0, i);
      std::swap(order[i], order[j]);
    }

    EpochStats stats;
    stats.epoch = epoch;
    int steps = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const FeatureSequence*> batch;
      for (size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k) {
        batch.push_back(&support[order[k]]);
      }
      StepLoss sl = train_step(model, batch, opt);
      stats.cls += sl.cls;
      stats.reg += sl.reg;
      stats.total += sl.total;
      ++steps;
    }
    stats.cls /= steps;
    stats.reg /= steps;
    stats.total /= steps;
    history.push_back(stats);
    model.epoch = epoch;
  }
  return history;
}

std::vector<ActionInstance> predict_video(const ModelState& model,
                                          const FeatureSequence& video) {
  Forward fw = run_forward(model, video, nullptr, nullptr);
  double extent = video.features.rows * video.clip_stride_seconds;
  std::vector<ActionInstance> raw =
      decode(fw.logits, model.cfg.score_threshold, fw.pyramid.strides,
             video.clip_stride_seconds, extent);
  return nms(std::move(raw), model.cfg.nms_iou, model.cfg.top_k);
}

Matrix transport_cost_table(const ModelState& model, const FeatureSequence& video,
                            int class_id) {
  if (class_id < 0 || class_id >= model.num_classes) {
    throw DataError("transport_cost_table: class id " + std::to_string(class_id) +
                    " out of range");
  }
  PlanSet plans;
  Forward fw = run_forward(model, video, nullptr, &plans);
  const CostMatrix& cost = fw.costs[class_id];  // level 1 block
  const Matrix& plan = plans.at(0, class_id);

  Matrix table(cost.values.rows, cost.values.cols);
  for (size_t i = 0; i < table.size(); ++i) {
    table.data[i] = plan.data[i] * cost.values.data[i];
  }
  for (int j = 0; j < table.cols; ++j) {
    double lo = table(0, j), hi = table(0, j);
    for (int t = 1; t < table.rows; ++t) {
      lo = std::min(lo, table(t, j));
      hi = std::max(hi, table(t, j));
    }
    for (int t = 0; t < table.rows; ++t) {
      table(t, j) = (hi > lo) ? (table(t, j) - lo) / (hi - lo) : 0.0;
    }
  }
  return table;
}

namespace {

constexpr int kModelSchemaVersion = 1;

nlohmann::json tensor_to_json(const Matrix& m) {
  return {{"rows", m.rows}, {"cols", m.cols}, {"data", doubles_to_base64(m.data)}};
}

Matrix tensor_from_json(const nlohmann::json& j, const std::string& name) {
  Matrix m(j.at("rows").get<int>(), j.at("cols").get<int>());
  std::vector<double> vals = base64_to_doubles(j.at("data").get<std::string>());
  if (vals.size() != m.size()) {
    throw DataError("model tensor '" + name + "': payload size does not match shape");
  }
  m.data = std::move(vals);
  return m;
}

nlohmann::json config_to_json(const TrainConfig& cfg) {
  return {{"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"learning_rate", cfg.learning_rate},
          {"shots", cfg.shots},
          {"lambda_reg", cfg.lambda_reg},
          {"tau", cfg.tau},
          {"seed", cfg.seed},
          {"strategy", strategy_name(cfg.strategy)},
          {"num_prompts", cfg.num_prompts},
          {"n_ctx", cfg.n_ctx},
          {"d_ctx", cfg.d_ctx},
          {"fpn_levels", cfg.fpn_levels},
          {"conv_depth", cfg.conv_depth},
          {"score_threshold", cfg.score_threshold},
          {"nms_iou", cfg.nms_iou},
          {"top_k", cfg.top_k},
          {"sinkhorn",
           {{"lambda", cfg.sinkhorn.lambda},
            {"delta", cfg.sinkhorn.delta},
            {"max_iters", cfg.sinkhorn.max_iters}}}};
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.epochs = j.at("epochs").get<int>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.shots = j.at("shots").get<int>();
  cfg.lambda_reg = j.at("lambda_reg").get<double>();
  cfg.tau = j.at("tau").get<double>();
  cfg.seed = j.at("seed").get<uint64_t>();
  cfg.strategy = strategy_from_name(j.at("strategy").get<std::string>());
  cfg.num_prompts = j.at("num_prompts").get<int>();
  cfg.n_ctx = j.at("n_ctx").get<int>();
  cfg.d_ctx = j.at("d_ctx").get<int>();
  cfg.fpn_levels = j.at("fpn_levels").get<int>();
  cfg.conv_depth = j.at("conv_depth").get<int>();
  cfg.score_threshold = j.at("score_threshold").get<double>();
  cfg.nms_iou = j.at("nms_iou").get<double>();
  cfg.top_k = j.at("top_k").get<int>();
  cfg.sinkhorn.lambda = j.at("sinkhorn").at("lambda").get<double>();
  cfg.sinkhorn.delta = j.at("sinkhorn").at("delta").get<double>();
  cfg.sinkhorn.max_iters = j.at("sinkhorn").at("max_iters").get<int>();
  return cfg;
}

}  // namespace

void save_model(const ModelState& model, const std::string& path) {
  nlohmann::json j;
  j["schema_version"] = kModelSchemaVersion;
  j["epoch"] = model.epoch;
  j["num_classes"] = model.num_classes;
  j["feature_dim"] = model.feature_dim;
  j["encoder_seed"] = model.encoder.seed;
  j["config"] = config_to_json(model.cfg);

  nlohmann::json tensors;
  for (int c = 0; c < model.num_classes; ++c) {
    for (int i = 0; i < model.bank.num_prompts; ++i) {
      std::ostringstream name;
      name << "ctx_c" << c << "_p" << i;
      tensors[name.str()] = tensor_to_json(model.bank.block(c, i).value);
    }
  }
  for (int l = 0; l < model.conv.depth; ++l) {
    tensors["conv_w" + std::to_string(l)] = tensor_to_json(model.conv.weights[l].value);
    tensors["conv_b" + std::to_string(l)] = tensor_to_json(model.conv.biases[l].value);
  }
  tensors["head_w"] = tensor_to_json(model.head_w.value);
  tensors["head_b"] = tensor_to_json(model.head_b.value);
  j["tensors"] = tensors;

  std::ofstream out(path);
  if (!out) throw DataError("save_model: cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
}

ModelState load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("load_model: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("load_model: corrupt model file '" + path + "': " + e.what());
  }

  try {
    int version = j.at("schema_version").get<int>();
    if (version != kModelSchemaVersion) {
      throw DataError("load_model: schema version " + std::to_string(version) +
                      " does not match expected " + std::to_string(kModelSchemaVersion));
    }
    TrainConfig cfg = config_from_json(j.at("config"));
    ModelState model = init_model(j.at("num_classes").get<int>(),
                                  j.at("feature_dim").get<int>(), cfg);
    model.epoch = j.at("epoch").get<int>();
    uint64_t enc_seed = j.at("encoder_seed").get<uint64_t>();
    model.encoder =
        PseudoEncoder::make(model.num_classes, cfg.n_ctx, cfg.d_ctx, model.feature_dim,
                            enc_seed);

    const nlohmann::json& tensors = j.at("tensors");
    auto load_into = [&](const std::string& name, GradSlot& slot) {
      Matrix m = tensor_from_json(tensors.at(name), name);
      if (!m.same_shape(slot.value)) {
        throw DataError("load_model: tensor '" + name + "' has shape " + shape_str(m) +
                        ", expected " + shape_str(slot.value));
      }
      slot.value = std::move(m);
      zero_grad(slot);
    };
    for (int c = 0; c < model.num_classes; ++c) {
      for (int i = 0; i < model.bank.num_prompts; ++i) {
        std::ostringstream name;
        name << "ctx_c" << c << "_p" << i;
        load_into(name.str(), model.bank.block(c, i));
      }
    }
    for (int l = 0; l < model.conv.depth; ++l) {
      load_into("conv_w" + std::to_string(l), model.conv.weights[l]);
      load_into("conv_b" + std::to_string(l), model.conv.biases[l]);
    }
    load_into("head_w", model.head_w);
    load_into("head_b", model.head_b);
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("load_model: corrupt model file '" + path + "': " + e.what());
  }
}

}  // namespace otloc
