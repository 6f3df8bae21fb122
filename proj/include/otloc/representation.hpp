#pragma once

#include <string>
#include <vector>

#include "otloc/numerics.hpp"

namespace otloc {

struct GroundTruthSegment {
  double start = 0.0;  // seconds
  double end = 0.0;    // seconds, start < end
  int class_id = 0;
};

// One untrimmed video: T clip features of dimension D plus its annotations.
struct FeatureSequence {
  std::string video_id;
  Matrix features;  // T x D
  double clip_stride_seconds = 1.0;
  std::vector<GroundTruthSegment> annotations;
};

// Throws DataError when an annotation falls outside [0, T * clip_stride].
void validate_sequence(const FeatureSequence& seq);

// L temporally downsampled copies of a sequence; level 1 is the input, each
// further level halves the length with non-overlapping width-2 max pooling
// (ceil rule: an odd tail becomes its own window of size 1).
struct FeaturePyramid {
  std::vector<Matrix> levels;          // level l: T_l x D
  std::vector<int> strides;            // per level, in clips: 2^(l-1)
  // For levels >= 2: source row in the previous level chosen by the max, per
  // (t, d) entry of that level. Drives the pooling backward pass.
  std::vector<std::vector<int>> pool_src;
};

FeaturePyramid build_pyramid(const Matrix& seq, int levels);

// Routes d(loss)/d(level l features) down to level 1 through the recorded
// argmax indices. `level` is 1-based.
void pyramid_backward(const FeaturePyramid& pyramid, int level, const Matrix& d_level,
                      Matrix* d_base);

// Per class: N learnable context blocks of n_ctx x d_ctx vectors.
struct ContextBank {
  int num_classes = 0;
  int num_prompts = 0;  // N
  int n_ctx = 0;
  int d_ctx = 0;
  std::vector<GradSlot> blocks;  // size C*N, indexed class*num_prompts + prompt

  GradSlot& block(int class_id, int prompt) { return blocks[class_id * num_prompts + prompt]; }
  const GradSlot& block(int class_id, int prompt) const {
    return blocks[class_id * num_prompts + prompt];
  }
};

ContextBank init_context_bank(int num_classes, int num_prompts, int n_ctx, int d_ctx,
                              Rng& rng);

// Frozen stand-in for a pretrained text encoder: a fixed class-token table and
// a fixed linear projection, both regenerated bit-identically from the seed.
// Nothing in here ever receives gradients.
struct PseudoEncoder {
  uint64_t seed = 0;
  int num_classes = 0;
  int n_ctx = 0;
  int d_ctx = 0;
  int feature_dim = 0;
  Matrix class_tokens;  // C x d_ctx
  Matrix projection;    // ((n_ctx+1)*d_ctx) x D

  static PseudoEncoder make(int num_classes, int n_ctx, int d_ctx, int feature_dim,
                            uint64_t seed);
};

// Encodes all N prompts of one class: flatten [ctx_1..ctx_n, class_token],
// project, L2-normalize. Returns N x D with unit rows.
Matrix encode_prompts(const ContextBank& bank, const PseudoEncoder& enc, int class_id);

// Maps d(loss)/dG back through the projection and the normalization Jacobian
// into the context block gradients.
void encode_prompts_backward(ContextBank& bank, const PseudoEncoder& enc, int class_id,
                             const Matrix& d_prompts);

// Stack of kernel-3 D->D temporal convolutions with symmetric zero padding and
// a rectifier after each layer. apply_activation exists as a test hook.
struct TemporalConvStack {
  int depth = 0;
  int dim = 0;
  std::vector<GradSlot> weights;  // per layer: (3*D) x D, tap-major rows
  std::vector<GradSlot> biases;   // per layer: 1 x D
  bool apply_activation = true;

  static TemporalConvStack init(int depth, int dim, Rng& rng);
};

// Forward-pass scratch retained for the backward pass.
struct ConvCache {
  std::vector<Matrix> shifted_inputs;  // per layer: T x 3D
  std::vector<Matrix> preact;          // per layer: T x D, pre-rectifier
};

Matrix temporal_conv(const Matrix& seq, const TemporalConvStack& stack,
                     ConvCache* cache = nullptr);

// Accumulates weight/bias gradients into the stack and returns d(loss)/d(input).
Matrix temporal_conv_backward(TemporalConvStack& stack, const ConvCache& cache,
                              const Matrix& d_out);

}  // namespace otloc
