#pragma once

#include <string>
#include <vector>

#include "otloc/localizer.hpp"
#include "otloc/otalign.hpp"
#include "otloc/representation.hpp"

namespace otloc {

enum class AlignmentStrategy { kOt, kHungarian, kEuclidean, kMean };

std::string strategy_name(AlignmentStrategy s);
AlignmentStrategy strategy_from_name(const std::string& name);  // throws ConfigError

struct TrainConfig {
  int epochs = 100;
  int batch_size = 2;
  double learning_rate = 1e-3;
  int shots = 5;  // K annotated instances per class
  SinkhornConfig sinkhorn;
  double lambda_reg = 1.0;
  double tau = 0.07;
  uint64_t seed = 0;
  AlignmentStrategy strategy = AlignmentStrategy::kOt;

  // Model shape.
  int num_prompts = 6;  // N
  int n_ctx = 16;
  int d_ctx = 32;
  int fpn_levels = 5;
  int conv_depth = 2;

  // Decoding.
  double score_threshold = 0.1;
  double nms_iou = 0.5;
  int top_k = 200;
};

// Trainable state plus the frozen pseudo-encoder (reproduced from its seed).
struct ModelState {
  int num_classes = 0;
  int feature_dim = 0;
  TrainConfig cfg;
  ContextBank bank;
  TemporalConvStack conv;
  GradSlot head_w;  // D x 2 regression head
  GradSlot head_b;  // 1 x 2
  PseudoEncoder encoder;
  int epoch = 0;
};

ModelState init_model(int num_classes, int feature_dim, const TrainConfig& cfg);

// Every trainable slot in a fixed order: context blocks, conv weights/biases,
// regression head. The pseudo-encoder is deliberately absent.
std::vector<GradSlot*> trainable_params(ModelState& model);
void zero_all_grads(ModelState& model);

struct OptimizerState {
  struct Moments {
    Matrix m;
    Matrix v;
  };
  std::vector<Moments> moments;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerState make(const std::vector<GradSlot*>& params);
};

// Standard bias-corrected Adam step over slot gradients.
void adam_update(std::vector<GradSlot*>& params, OptimizerState& opt, double lr);

// K-shot support sampling: draws K annotated instances per class without
// replacement, returns the covering videos with annotations filtered down to
// the sampled instances. Throws DataError naming any class with < K instances.
std::vector<FeatureSequence> sample_few_shot(const std::vector<FeatureSequence>& corpus,
                                             int shots, int num_classes, Rng& rng);

// Frozen per-(level, class) alignment weight matrices for one video. These are
// the inner-loop outputs; the outer loss treats them as constants.
struct PlanSet {
  std::vector<Matrix> plans;  // indexed level * num_classes + class
  int num_levels = 0;
  int num_classes = 0;

  const Matrix& at(int level, int class_id) const {
    return plans[static_cast<size_t>(level) * num_classes + class_id];
  }
};

// Inner loop: runs the forward pass up to the cost matrices and solves the
// alignment for every (level, class) under the configured strategy.
PlanSet compute_plans(const ModelState& model, const FeatureSequence& video);

// Outer-loop objective for one video with the plans held fixed. The grad
// variant additionally accumulates parameter gradients into the model slots.
LossBreakdown video_loss(const ModelState& model, const FeatureSequence& video,
                         const PlanSet& plans);
LossBreakdown video_loss_grad(ModelState& model, const FeatureSequence& video,
                              const PlanSet& plans);

// Per-step aggregate: batch means of per-video normalized loss components.
struct StepLoss {
  double cls = 0.0;
  double reg = 0.0;
  double total = 0.0;
  int n_pos = 0;
};

// One optimization step: fresh plans per video, gradients accumulated with
// plans fixed, one Adam update. Returns the pre-update loss.
StepLoss train_step(ModelState& model, const std::vector<const FeatureSequence*>& batch,
                    OptimizerState& opt);

struct EpochStats {
  int epoch = 0;
  double cls = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

// Full training loop over the support set; one epoch = one shuffled pass.
std::vector<EpochStats> train(ModelState& model, const std::vector<FeatureSequence>& support,
                              OptimizerState& opt);

// Forward-only inference: logits -> decode -> NMS.
std::vector<ActionInstance> predict_video(const ModelState& model,
                                          const FeatureSequence& video);

// Per-frame per-prompt transport cost at pyramid level 1 for one class:
// entry (t, j) = plan(t, j) * cost(t, j), columns min-max normalized to [0, 1]
// (constant columns map to 0).
Matrix transport_cost_table(const ModelState& model, const FeatureSequence& video,
                            int class_id);

// Single-JSON persistence; tensors are base64 little-endian doubles, so a
// save/load round trip reproduces forward outputs bit-exactly.
void save_model(const ModelState& model, const std::string& path);
ModelState load_model(const std::string& path);

}  // namespace otloc
