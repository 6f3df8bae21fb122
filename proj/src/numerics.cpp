#include "otloc/numerics.hpp"

#include <cmath>
#include <sstream>

namespace otloc {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows << "x" << m.cols;
  return os.str();
}

void ensure_finite(const Matrix& m, const char* what) {
  for (double x : m.data) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(what) + ": non-finite entry in " + shape_str(m) +
                         " matrix");
    }
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a) + " * " +
                         shape_str(b));
  }
  Matrix out(a.rows, b.cols);
  // i-k-j order keeps the b row hot in cache.
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = &a.data[static_cast<size_t>(i) * a.cols];
    double* orow = &out.data[static_cast<size_t>(i) * out.cols];
    for (int k = 0; k < a.cols; ++k) {
      double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = &b.data[static_cast<size_t>(k) * b.cols];
      for (int j = 0; j < b.cols; ++j) {
        orow[j] += aik * brow[j];
      }
    }
  }
  ensure_finite(out, "matmul");
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols, m.rows);
  for (int i = 0; i < m.rows; ++i) {
    for (int j = 0; j < m.cols; ++j) {
      out(j, i) = m(i, j);
    }
  }
  return out;
}

RowNormResult l2_normalize_rows(const Matrix& m, double eps) {
  RowNormResult out;
  out.values = m;
  out.degenerate.assign(m.rows, 0);
  for (int i = 0; i < m.rows; ++i) {
    double sq = 0.0;
    for (int j = 0; j < m.cols; ++j) {
      double v = m(i, j);
      sq += v * v;
    }
    double norm = std::sqrt(sq);
    if (norm < eps) {
      out.degenerate[i] = 1;
      continue;
    }
    for (int j = 0; j < m.cols; ++j) {
      out.values(i, j) = m(i, j) / norm;
    }
  }
  ensure_finite(out.values, "l2_normalize_rows");
  return out;
}

void accumulate_grad(GradSlot& slot, const Matrix& delta) {
  if (!slot.grad.same_shape(delta)) {
    throw DimensionError("accumulate_grad: slot is " + shape_str(slot.grad) +
                         ", delta is " + shape_str(delta));
  }
  for (size_t i = 0; i < delta.size(); ++i) {
    slot.grad.data[i] += delta.data[i];
  }
}

void zero_grad(GradSlot& slot) {
  std::fill(slot.grad.data.begin(), slot.grad.data.end(), 0.0);
}

namespace {

// SplitMix64 output mix.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform() {
  // 53 high bits -> double in [0, 1).
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int lo, int hi) {
  uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(next_u64() % span);
}

double Rng::gaussian() {
  if (has_cached_gaussian_) {
    has_cached_gaussian_ = false;
    return cached_gaussian_;
  }
  // Box-Muller; u1 kept away from zero so log() stays finite.
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * 3.14159265358979323846 * u2;
  cached_gaussian_ = r * std::sin(theta);
  has_cached_gaussian_ = true;
  return r * std::cos(theta);
}

double Rng::gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

Rng Rng::fork(uint64_t stream_id) const {
  uint64_t s = seed_ ^ (stream_id * 0xd1b54a32d192ed03ull + 0x8cb92ba72f3d8dd7ull);
  uint64_t tmp = s;
  return Rng(splitmix64(tmp));
}

}  // namespace otloc
