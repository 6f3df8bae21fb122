#include "otloc/representation.hpp"

#include <cmath>
#include <iostream>
#include <sstream>

namespace otloc {

void validate_sequence(const FeatureSequence& seq) {
  if (seq.features.rows < 1) {
    throw DataError("sequence '" + seq.video_id + "': empty feature matrix");
  }
  if (!(seq.clip_stride_seconds > 0.0)) {
    throw DataError("sequence '" + seq.video_id + "': clip stride must be positive");
  }
  double extent = seq.features.rows * seq.clip_stride_seconds;
  for (const auto& g : seq.annotations) {
    if (!(g.start >= 0.0 && g.start < g.end && g.end <= extent)) {
      std::ostringstream os;
      os << "sequence '" << seq.video_id << "': annotation [" << g.start << ", " << g.end
         << ") outside [0, " << extent << ")";
      throw DataError(os.str());
    }
  }
}

FeaturePyramid build_pyramid(const Matrix& seq, int levels) {
  if (levels < 1) throw DimensionError("build_pyramid: levels must be >= 1");
  if (seq.rows < 1) throw DimensionError("build_pyramid: empty sequence");

  FeaturePyramid py;
  py.levels.push_back(seq);
  py.strides.push_back(1);
  bool warned = false;
  for (int l = 2; l <= levels; ++l) {
    const Matrix& prev = py.levels.back();
    if (prev.rows == 1 && !warned) {
      std::cerr << "build_pyramid: level " << l
                << " requested beyond a length-1 level; clamping\n";
      warned = true;
    }
    int t_out = (prev.rows + 1) / 2;
    Matrix cur(t_out, prev.cols);
    std::vector<int> src(static_cast<size_t>(t_out) * prev.cols);
    for (int k = 0; k < t_out; ++k) {
      int i0 = 2 * k;
      int i1 = std::min(2 * k + 1, prev.rows - 1);
      for (int d = 0; d < prev.cols; ++d) {
        double v0 = prev(i0, d);
        double v1 = prev(i1, d);
        // Ties keep the earlier clip.
        if (v0 >= v1) {
          cur(k, d) = v0;
          src[static_cast<size_t>(k) * prev.cols + d] = i0;
        } else {
          cur(k, d) = v1;
          src[static_cast<size_t>(k) * prev.cols + d] = i1;
        }
      }
    }
    py.levels.push_back(std::move(cur));
    py.strides.push_back(py.strides.back() * 2);
    py.pool_src.push_back(std::move(src));
  }
  return py;
}

void pyramid_backward(const FeaturePyramid& pyramid, int level, const Matrix& d_level,
                      Matrix* d_base) {
  if (level < 1 || level > static_cast<int>(pyramid.levels.size())) {
    throw DimensionError("pyramid_backward: level out of range");
  }
  Matrix grad = d_level;
  for (int l = level; l >= 2; --l) {
    const Matrix& prev = pyramid.levels[l - 2];
    const std::vector<int>& src = pyramid.pool_src[l - 2];
    Matrix down(prev.rows, prev.cols);
    for (int k = 0; k < grad.rows; ++k) {
      for (int d = 0; d < grad.cols; ++d) {
        down(src[static_cast<size_t>(k) * prev.cols + d], d) += grad(k, d);
      }
    }
    grad = std::move(down);
  }
  for (size_t i = 0; i < grad.size(); ++i) d_base->data[i] += grad.data[i];
}

ContextBank init_context_bank(int num_classes, int num_prompts, int n_ctx, int d_ctx,
                              Rng& rng) {
  if (num_classes < 1 || num_prompts < 1 || n_ctx < 1 || d_ctx < 1) {
    throw ConfigError("init_context_bank: all counts must be >= 1");
  }
  ContextBank bank;
  bank.num_classes = num_classes;
  bank.num_prompts = num_prompts;
  bank.n_ctx = n_ctx;
  bank.d_ctx = d_ctx;
  bank.blocks.reserve(static_cast<size_t>(num_classes) * num_prompts);
  for (int c = 0; c < num_classes; ++c) {
    for (int i = 0; i < num_prompts; ++i) {
      Matrix block(n_ctx, d_ctx);
      for (double& x : block.data) x = rng.gaussian(0.0, 0.02);
      bank.blocks.emplace_back(std::move(block));
    }
  }
  return bank;
}

PseudoEncoder PseudoEncoder::make(int num_classes, int n_ctx, int d_ctx, int feature_dim,
                                  uint64_t seed) {
  PseudoEncoder enc;
  enc.seed = seed;
  enc.num_classes = num_classes;
  enc.n_ctx = n_ctx;
  enc.d_ctx = d_ctx;
  enc.feature_dim = feature_dim;

  Rng root(seed);
  Rng tok_rng = root.fork(1);
  enc.class_tokens = Matrix(num_classes, d_ctx);
  for (double& x : enc.class_tokens.data) x = tok_rng.gaussian();

  int in_dim = (n_ctx + 1) * d_ctx;
  Rng proj_rng = root.fork(2);
  enc.projection = Matrix(in_dim, feature_dim);
  double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (double& x : enc.projection.data) x = proj_rng.gaussian(0.0, scale);
  return enc;
}

namespace {

// Flattened [ctx_1 .. ctx_n, class_token] input row for one prompt.
Matrix prompt_input(const ContextBank& bank, const PseudoEncoder& enc, int class_id,
                    int prompt) {
  int in_dim = (bank.n_ctx + 1) * bank.d_ctx;
  Matrix v(1, in_dim);
  const Matrix& block = bank.block(class_id, prompt).value;
  for (int t = 0; t < bank.n_ctx; ++t) {
    for (int d = 0; d < bank.d_ctx; ++d) {
      v(0, t * bank.d_ctx + d) = block(t, d);
    }
  }
  for (int d = 0; d < bank.d_ctx; ++d) {
    v(0, bank.n_ctx * bank.d_ctx + d) = enc.class_tokens(class_id, d);
  }
  return v;
}

}  // namespace

Matrix encode_prompts(const ContextBank& bank, const PseudoEncoder& enc, int class_id) {
  if (class_id < 0 || class_id >= bank.num_classes) {
    throw ConfigError("encode_prompts: class_id out of range");
  }
  if (bank.n_ctx != enc.n_ctx || bank.d_ctx != enc.d_ctx ||
      bank.num_classes != enc.num_classes) {
    throw DimensionError("encode_prompts: context bank and encoder disagree on shapes");
  }
  Matrix out(bank.num_prompts, enc.feature_dim);
  for (int i = 0; i < bank.num_prompts; ++i) {
    Matrix v = prompt_input(bank, enc, class_id, i);
    Matrix h = matmul(v, enc.projection);  // 1 x D
    double sq = 0.0;
    for (int k = 0; k < h.cols; ++k) sq += h(0, k) * h(0, k);
    double norm = std::sqrt(sq);
    if (norm < 1e-12) {
      throw NumericError("encode_prompts: pre-normalization vector is degenerate");
    }
    for (int k = 0; k < h.cols; ++k) out(i, k) = h(0, k) / norm;
  }
  return out;
}

void encode_prompts_backward(ContextBank& bank, const PseudoEncoder& enc, int class_id,
                             const Matrix& d_prompts) {
  if (d_prompts.rows != bank.num_prompts || d_prompts.cols != enc.feature_dim) {
    throw DimensionError("encode_prompts_backward: gradient is " + shape_str(d_prompts));
  }
  for (int i = 0; i < bank.num_prompts; ++i) {
    Matrix v = prompt_input(bank, enc, class_id, i);
    Matrix h = matmul(v, enc.projection);
    double sq = 0.0;
    for (int k = 0; k < h.cols; ++k) sq += h(0, k) * h(0, k);
    double norm = std::sqrt(sq);

    // g = h / |h|  =>  dh = (dg - g <g, dg>) / |h|
    double gdot = 0.0;
    for (int k = 0; k < h.cols; ++k) gdot += (h(0, k) / norm) * d_prompts(i, k);
    Matrix dh(1, h.cols);
    for (int k = 0; k < h.cols; ++k) {
      dh(0, k) = (d_prompts(i, k) - (h(0, k) / norm) * gdot) / norm;
    }

    Matrix dv = matmul(dh, transpose(enc.projection));  // 1 x (n_ctx+1)*d_ctx
    Matrix dblock(bank.n_ctx, bank.d_ctx);
    for (int t = 0; t < bank.n_ctx; ++t) {
      for (int d = 0; d < bank.d_ctx; ++d) {
        dblock(t, d) = dv(0, t * bank.d_ctx + d);
      }
    }
    accumulate_grad(bank.block(class_id, i), dblock);
    // The class-token tail of dv is dropped: the encoder is frozen.
  }
}

TemporalConvStack TemporalConvStack::init(int depth, int dim, Rng& rng) {
  TemporalConvStack stack;
  stack.depth = depth;
  stack.dim = dim;
  double std_dev = std::sqrt(2.0 / (3.0 * dim));
  for (int l = 0; l < depth; ++l) {
    Matrix w(3 * dim, dim);
    for (double& x : w.data) x = rng.gaussian(0.0, std_dev);
    stack.weights.emplace_back(std::move(w));
    stack.biases.emplace_back(Matrix(1, dim));
  }
  return stack;
}

namespace {

// T x 3D matrix whose row t is [x_{t-1}, x_t, x_{t+1}] with zero padding.
Matrix shift_concat(const Matrix& x) {
  int t_len = x.rows, d = x.cols;
  Matrix out(t_len, 3 * d);
  for (int t = 0; t < t_len; ++t) {
    for (int tap = -1; tap <= 1; ++tap) {
      int src = t + tap;
      if (src < 0 || src >= t_len) continue;
      for (int k = 0; k < d; ++k) {
        out(t, (tap + 1) * d + k) = x(src, k);
      }
    }
  }
  return out;
}

}  // namespace

Matrix temporal_conv(const Matrix& seq, const TemporalConvStack& stack, ConvCache* cache) {
  if (seq.cols != stack.dim) {
    throw DimensionError("temporal_conv: sequence dim " + shape_str(seq) +
                         " vs stack dim " + std::to_string(stack.dim));
  }
  Matrix x = seq;
  for (int l = 0; l < stack.depth; ++l) {
    Matrix shifted = shift_concat(x);
    Matrix pre = matmul(shifted, stack.weights[l].value);
    const Matrix& bias = stack.biases[l].value;
    for (int t = 0; t < pre.rows; ++t) {
      for (int k = 0; k < pre.cols; ++k) pre(t, k) += bias(0, k);
    }
    if (cache) {
      cache->shifted_inputs.push_back(std::move(shifted));
      cache->preact.push_back(pre);
    }
    if (stack.apply_activation) {
      for (double& v : pre.data) v = v > 0.0 ? v : 0.0;
    }
    x = std::move(pre);
  }
  return x;
}

Matrix temporal_conv_backward(TemporalConvStack& stack, const ConvCache& cache,
                              const Matrix& d_out) {
  Matrix grad = d_out;
  for (int l = stack.depth - 1; l >= 0; --l) {
    const Matrix& pre = cache.preact[l];
    if (stack.apply_activation) {
      for (size_t i = 0; i < grad.size(); ++i) {
        if (pre.data[i] <= 0.0) grad.data[i] = 0.0;
      }
    }
    const Matrix& shifted = cache.shifted_inputs[l];
    accumulate_grad(stack.weights[l], matmul(transpose(shifted), grad));
    Matrix db(1, stack.dim);
    for (int t = 0; t < grad.rows; ++t) {
      for (int k = 0; k < grad.cols; ++k) db(0, k) += grad(t, k);
    }
    accumulate_grad(stack.biases[l], db);

    Matrix d_shifted = matmul(grad, transpose(stack.weights[l].value));
    int t_len = grad.rows, d = stack.dim;
    Matrix dx(t_len, d);
    for (int t = 0; t < t_len; ++t) {
      for (int tap = -1; tap <= 1; ++tap) {
        int src = t + tap;
        if (src < 0 || src >= t_len) continue;
        for (int k = 0; k < d; ++k) {
          dx(src, k) += d_shifted(t, (tap + 1) * d + k);
        }
      }
    }
    grad = std::move(dx);
  }
  return grad;
}

}  // namespace otloc
