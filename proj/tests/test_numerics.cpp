#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>

#include "otloc/codec.hpp"
#include "otloc/numerics.hpp"

using namespace otloc;

namespace {

Matrix from_rows(const std::vector<std::vector<double>>& rows) {
  Matrix m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    for (size_t j = 0; j < rows[i].size(); ++j) m(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
  }
  return m;
}

// Independent oracle: plain triple loop, no shared code with matmul.
Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    for (int j = 0; j < b.cols; ++j) {
      double s = 0.0;
      for (int k = 0; k < a.cols; ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  }
  return out;
}

Matrix random_matrix(int r, int c, Rng& rng) {
  Matrix m(r, c);
  for (double& x : m.data) x = rng.uniform(-1.0, 1.0);
  return m;
}

}  // namespace

TEST_CASE("matmul identity and hand dot product") {
  Matrix id = from_rows({{1, 0}, {0, 1}});
  Matrix v = from_rows({{3}, {4}});
  Matrix out = matmul(id, v);
  CHECK(out(0, 0) == 3.0);
  CHECK(out(1, 0) == 4.0);

  Matrix a = from_rows({{1, 2}});
  Matrix out2 = matmul(a, v);
  CHECK(out2.rows == 1);
  CHECK(out2.cols == 1);
  CHECK(out2(0, 0) == 11.0);
}

TEST_CASE("matmul matches the naive triple-loop oracle") {
  Rng rng(42);
  Matrix a = random_matrix(3, 4, rng);
  Matrix b = random_matrix(4, 2, rng);
  Matrix fast = matmul(a, b);
  Matrix slow = naive_matmul(a, b);
  for (size_t i = 0; i < fast.size(); ++i) {
    CHECK(std::abs(fast.data[i] - slow.data[i]) < 1e-12);
  }
}

TEST_CASE("matmul rejects mismatched shapes with both shapes named") {
  Matrix a(2, 3), b(2, 2);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("2x3"), DimensionError);
}

TEST_CASE("matmul associativity within 1e-9 relative") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix a = random_matrix(4, 5, rng);
    Matrix b = random_matrix(5, 3, rng);
    Matrix c = random_matrix(3, 6, rng);
    Matrix left = matmul(matmul(a, b), c);
    Matrix right = matmul(a, matmul(b, c));
    for (size_t i = 0; i < left.size(); ++i) {
      double denom = std::max({1.0, std::abs(left.data[i]), std::abs(right.data[i])});
      CHECK(std::abs(left.data[i] - right.data[i]) / denom < 1e-9);
    }
  }
}

TEST_CASE("l2_normalize_rows on a 3-4-5 triangle") {
  Matrix m = from_rows({{3, 4}});
  RowNormResult rn = l2_normalize_rows(m);
  CHECK(rn.values(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(rn.values(0, 1) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(rn.degenerate[0] == 0);
}

TEST_CASE("l2_normalize_rows flags zero rows and leaves them unchanged") {
  Matrix m = from_rows({{0, 0}});
  RowNormResult rn = l2_normalize_rows(m, 1e-12);
  CHECK(rn.values(0, 0) == 0.0);
  CHECK(rn.values(0, 1) == 0.0);
  CHECK(rn.degenerate[0] == 1);
}

TEST_CASE("l2_normalize_rows leaves unit rows unit") {
  Matrix m = from_rows({{1, 0, 0}});
  RowNormResult rn = l2_normalize_rows(m);
  CHECK(rn.values(0, 0) == 1.0);
  CHECK(rn.values(0, 1) == 0.0);
}

TEST_CASE("l2_normalize_rows is idempotent") {
  Rng rng(3);
  Matrix m = random_matrix(6, 5, rng);
  Matrix once = l2_normalize_rows(m).values;
  Matrix twice = l2_normalize_rows(once).values;
  for (size_t i = 0; i < once.size(); ++i) {
    CHECK(std::abs(once.data[i] - twice.data[i]) <= 1e-15);
  }
}

TEST_CASE("accumulate_grad adds and zero_grad clears") {
  GradSlot slot(Matrix(2, 2));
  Matrix delta = from_rows({{1, 2}, {3, 4}});
  accumulate_grad(slot, delta);
  CHECK(slot.grad(1, 1) == 4.0);
  accumulate_grad(slot, delta);
  CHECK(slot.grad(0, 0) == 2.0);
  CHECK(slot.grad(1, 1) == 8.0);
  zero_grad(slot);
  for (double g : slot.grad.data) CHECK(g == 0.0);
}

TEST_CASE("accumulate_grad rejects shape mismatch") {
  GradSlot slot(Matrix(2, 2));
  CHECK_THROWS_AS(accumulate_grad(slot, Matrix(2, 3)), DimensionError);
}

TEST_CASE("rng determinism over 1e4 draws") {
  Rng a(123456), b(123456);
  for (int i = 0; i < 10000; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
  Rng c(123456), d(123456);
  for (int i = 0; i < 10000; ++i) {
    CHECK(c.gaussian() == d.gaussian());
  }
}

TEST_CASE("rng forks are independent of draw position") {
  Rng a(9);
  Rng b(9);
  (void)b.next_u64();
  (void)b.next_u64();
  CHECK(a.fork(5).next_u64() == b.fork(5).next_u64());
  CHECK(a.fork(5).next_u64() != a.fork(6).next_u64());
}

TEST_CASE("rng uniform_int covers both endpoints") {
  Rng rng(17);
  bool saw_lo = false, saw_hi = false;
  for (int i = 0; i < 1000; ++i) {
    int v = rng.uniform_int(2, 5);
    CHECK(v >= 2);
    CHECK(v <= 5);
    saw_lo |= (v == 2);
    saw_hi |= (v == 5);
  }
  CHECK(saw_lo);
  CHECK(saw_hi);
}

TEST_CASE("base64 round trip is exact, including specials") {
  std::vector<double> values = {0.0, -0.0, 1.0, -1.5, 3.141592653589793, 1e-300, 1e300};
  std::string b64 = doubles_to_base64(values);
  std::vector<double> back = base64_to_doubles(b64);
  REQUIRE(back.size() == values.size());
  for (size_t i = 0; i < values.size(); ++i) {
    CHECK(std::memcmp(&back[i], &values[i], 8) == 0);
  }
}

TEST_CASE("base64 reports corrupt payloads") {
  CHECK_THROWS_AS(base64_decode("abc"), DataError);
  CHECK_THROWS_AS(base64_decode("a!=="), DataError);
  CHECK_THROWS_AS(base64_decode("=abc"), DataError);
}
