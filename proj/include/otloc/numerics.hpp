#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "otloc/errors.hpp"

namespace otloc {

// Dense row-major matrix of 64-bit floats. The whole pipeline runs in double
// precision: the Sinkhorn kernel exp(-C/lambda) at lambda=0.1 and costs near 2
// sits around 2e-9, which is already uncomfortable in 32-bit.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;  // rows * cols, row-major

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

std::string shape_str(const Matrix& m);

// Throws NumericError if any entry is NaN or Inf.
void ensure_finite(const Matrix& m, const char* what);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

struct RowNormResult {
  Matrix values;
  std::vector<char> degenerate;  // per row: 1 if norm < eps and row left unchanged
};

// Scales each row to unit Euclidean norm. Rows with norm < eps are returned
// unchanged and flagged instead of divided.
RowNormResult l2_normalize_rows(const Matrix& m, double eps = 1e-12);

// Value plus an additively accumulated gradient of the same shape.
struct GradSlot {
  Matrix value;
  Matrix grad;

  GradSlot() = default;
  explicit GradSlot(Matrix v) : value(std::move(v)), grad(value.rows, value.cols) {}
};

void accumulate_grad(GradSlot& slot, const Matrix& delta);
void zero_grad(GradSlot& slot);

// SplitMix64 generator (Steele, Lea & Flood 2014). Pure 64-bit integer
// arithmetic, so the raw stream is identical on every platform for a given
// seed. Gaussian draws go through Box-Muller on top and are bit-stable for a
// fixed libm. Sub-streams are derived from the original seed, not the current
// state, so fork order does not depend on how much was drawn.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), state_(seed) {}

  uint64_t next_u64();
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  int uniform_int(int lo, int hi);        // inclusive both ends
  double gaussian();                      // standard normal
  double gaussian(double mean, double stddev);

  // Independent deterministic sub-stream keyed by id.
  Rng fork(uint64_t stream_id) const;

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  uint64_t state_;
  bool has_cached_gaussian_ = false;
  double cached_gaussian_ = 0.0;
};

}  // namespace otloc
