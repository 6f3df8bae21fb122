#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "otloc/otalign.hpp"

using namespace otloc;

namespace {

Matrix from_rows(const std::vector<std::vector<double>>& rows) {
  Matrix m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    for (size_t j = 0; j < rows[i].size(); ++j) {
      m(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
    }
  }
  return m;
}

CostMatrix cost_from(const std::vector<std::vector<double>>& rows) {
  CostMatrix c;
  c.values = from_rows(rows);
  return c;
}

Matrix random_cost(int r, int c, Rng& rng) {
  Matrix m(r, c);
  for (double& x : m.data) x = rng.uniform(0.0, 2.0);
  return m;
}

// Exact OT under uniform marginals on an n x n cost: the optimum over the
// Birkhoff polytope is attained at a permutation coupling, so enumerate all
// permutations and take min sum / n.
double brute_force_ot(const Matrix& c) {
  std::vector<int> perm(c.rows);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (int i = 0; i < c.rows; ++i) s += c(i, perm[i]);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / c.rows;
}

// Brute-force min-cost matching of the smaller side into the larger.
double brute_force_assignment(const Matrix& c) {
  bool transposed = c.rows > c.cols;
  Matrix a = transposed ? transpose(c) : c;
  std::vector<int> cols(a.cols);
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (int i = 0; i < a.rows; ++i) s += a(i, cols[i]);
    best = std::min(best, s);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

// Literal kernel-domain scaling iteration, written independently of the
// library: b starts at v, then a = u./(K b), b = v./(K^T a), stopping on the
// row-sum residual.
Matrix reference_sinkhorn(const Matrix& c, const Marginals& mg, const SinkhornConfig& cfg) {
  int t = c.rows, n = c.cols;
  std::vector<std::vector<double>> k(t, std::vector<double>(n));
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < n; ++j) k[i][j] = std::exp(-c(i, j) / cfg.lambda);
  }
  std::vector<double> a(t, 0.0), b(mg.v);
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    for (int i = 0; i < t; ++i) {
      double kb = 0.0;
      for (int j = 0; j < n; ++j) kb += k[i][j] * b[j];
      a[i] = mg.u[i] / kb;
    }
    for (int j = 0; j < n; ++j) {
      double ka = 0.0;
      for (int i = 0; i < t; ++i) ka += k[i][j] * a[i];
      b[j] = mg.v[j] / ka;
    }
    double res = 0.0;
    for (int i = 0; i < t; ++i) {
      double row = 0.0;
      for (int j = 0; j < n; ++j) row += a[i] * k[i][j] * b[j];
      res = std::max(res, std::abs(row - mg.u[i]));
    }
    if (res < cfg.delta) break;
  }
  Matrix plan(t, n);
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < n; ++j) plan(i, j) = a[i] * k[i][j] * b[j];
  }
  return plan;
}

}  // namespace

TEST_CASE("cosine_cost on identical, orthogonal, antipodal unit vectors") {
  Matrix f = from_rows({{1, 0}});
  CHECK(cosine_cost(f, from_rows({{1, 0}})).values(0, 0) == doctest::Approx(0.0));
  CHECK(cosine_cost(f, from_rows({{0, 1}})).values(0, 0) == doctest::Approx(1.0));
  CHECK(cosine_cost(f, from_rows({{-1, 0}})).values(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("cosine_cost rejects dimension mismatch") {
  CHECK_THROWS_AS(cosine_cost(Matrix(2, 3), Matrix(2, 4)), DimensionError);
}

TEST_CASE("sinkhorn 1x1 moves all mass") {
  CostMatrix c = cost_from({{0.5}});
  Marginals mg = Marginals::uniform(1, 1);
  TransportPlan plan = sinkhorn(c, mg, {});
  CHECK(plan.coupling(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ot_distance(plan, c) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(plan.converged);
}

TEST_CASE("sinkhorn constant cost gives the product coupling") {
  CostMatrix c;
  c.values = Matrix(3, 2);
  std::fill(c.values.data.begin(), c.values.data.end(), 0.7);
  Marginals mg = Marginals::uniform(3, 2);
  TransportPlan plan = sinkhorn(c, mg, {});
  for (double x : plan.coupling.data) {
    CHECK(x == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  }
  CHECK(ot_distance(plan, c) == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("sinkhorn sharpens to the permutation optimum at small lambda") {
  CostMatrix c = cost_from({{0, 1}, {1, 0}});
  Marginals mg = Marginals::uniform(2, 2);
  SinkhornConfig cfg;
  cfg.lambda = 0.01;
  cfg.delta = 1e-9;
  cfg.max_iters = 1000;
  TransportPlan plan = sinkhorn(c, mg, cfg);
  CHECK(std::abs(plan.coupling(0, 0) - 0.5) < 1e-6);
  CHECK(std::abs(plan.coupling(0, 1)) < 1e-6);
  CHECK(std::abs(plan.coupling(1, 0)) < 1e-6);
  CHECK(std::abs(plan.coupling(1, 1) - 0.5) < 1e-6);

  // Exact value from enumerating both 2x2 permutation couplings.
  double exact = brute_force_ot(c.values);
  CHECK(exact == 0.0);
  CHECK(std::abs(ot_distance(plan, c) - exact) < 1e-6);
}

TEST_CASE("sinkhorn raises a structured underflow error on an all-zero kernel") {
  CostMatrix c = cost_from({{800.0}});
  Marginals mg = Marginals::uniform(1, 1);
  SinkhornConfig cfg;
  cfg.lambda = 1.0;
  CHECK_THROWS_WITH_AS(sinkhorn(c, mg, cfg), doctest::Contains("increase lambda"),
                       NumericError);
}

TEST_CASE("sinkhorn rejects non-positive lambda and bad marginals") {
  CostMatrix c = cost_from({{0.1, 0.2}});
  SinkhornConfig cfg;
  cfg.lambda = 0.0;
  CHECK_THROWS_AS(sinkhorn(c, Marginals::uniform(1, 2), cfg), NumericError);
  Marginals bad;
  bad.u = {0.5, 0.5};
  bad.v = {0.7, 0.7};
  CHECK_THROWS_AS(sinkhorn(cost_from({{0.1, 0.2}, {0.3, 0.4}}), bad, {}), NumericError);
}

TEST_CASE("sinkhorn marginal feasibility on random instances up to 64x8") {
  Rng rng(2024);
  int tight_converged = 0;
  for (int trial = 0; trial < 40; ++trial) {
    int t = rng.uniform_int(2, 64);
    int n = rng.uniform_int(2, 8);
    CostMatrix c;
    c.values = random_cost(t, n, rng);
    Marginals mg = Marginals::uniform(t, n);

    TransportPlan loose = sinkhorn(c, mg, {});
    if (loose.converged) {
      for (int i = 0; i < t; ++i) {
        double row = 0.0;
        for (int j = 0; j < n; ++j) row += loose.coupling(i, j);
        CHECK(std::abs(row - mg.u[i]) < 0.01);
      }
      for (int j = 0; j < n; ++j) {
        double col = 0.0;
        for (int i = 0; i < t; ++i) col += loose.coupling(i, j);
        CHECK(std::abs(col - mg.v[j]) < 0.01);
      }
    }

    SinkhornConfig tight;
    tight.delta = 1e-6;
    tight.max_iters = 1000;
    TransportPlan plan = sinkhorn(c, mg, tight);
    if (plan.converged) ++tight_converged;
    for (int i = 0; i < t; ++i) {
      double row = 0.0;
      for (int j = 0; j < n; ++j) {
        CHECK(plan.coupling(i, j) >= 0.0);
        row += plan.coupling(i, j);
      }
      if (plan.converged) CHECK(std::abs(row - mg.u[i]) < 1e-6);
    }
    if (plan.converged) {
      for (int j = 0; j < n; ++j) {
        double col = 0.0;
        for (int i = 0; i < t; ++i) col += plan.coupling(i, j);
        CHECK(std::abs(col - mg.v[j]) < 1e-6);
      }
    }
  }
  // A rare tail of random instances legitimately needs more than 1000
  // iterations at this tolerance; the flag must report that honestly, but the
  // bulk has to converge.
  CHECK(tight_converged >= 36);
}

TEST_CASE("sinkhorn approaches exact OT on 4x4 problems at lambda=0.001") {
  Rng rng(555);
  for (int trial = 0; trial < 20; ++trial) {
    CostMatrix c;
    c.values = random_cost(4, 4, rng);
    Marginals mg = Marginals::uniform(4, 4);
    SinkhornConfig cfg;
    cfg.lambda = 0.001;
    cfg.delta = 1e-9;
    cfg.max_iters = 20000;
    TransportPlan plan = sinkhorn(c, mg, cfg);
    double exact = brute_force_ot(c.values);
    CHECK(std::abs(ot_distance(plan, c) - exact) < 1e-2);
  }
}

TEST_CASE("sinkhorn transported cost is monotone in lambda") {
  Rng rng(77);
  std::vector<double> lambdas = {0.001, 0.01, 0.1, 1.0};
  for (int trial = 0; trial < 5; ++trial) {
    CostMatrix c;
    c.values = random_cost(5, 4, rng);
    Marginals mg = Marginals::uniform(5, 4);
    double prev = -std::numeric_limits<double>::infinity();
    for (double lambda : lambdas) {
      SinkhornConfig cfg;
      cfg.lambda = lambda;
      cfg.delta = 1e-10;
      cfg.max_iters = 50000;
      TransportPlan plan = sinkhorn(c, mg, cfg);
      double cost = ot_distance(plan, c);
      CHECK(cost >= prev - 1e-9);
      prev = cost;
    }
  }
}

TEST_CASE("sinkhorn is permutation-equivariant in cost rows") {
  Rng rng(31);
  CostMatrix c;
  c.values = random_cost(6, 4, rng);
  Marginals mg = Marginals::uniform(6, 4);
  SinkhornConfig cfg;
  cfg.delta = 1e-8;
  cfg.max_iters = 2000;
  TransportPlan base = sinkhorn(c, mg, cfg);

  std::vector<int> perm = {3, 0, 5, 1, 4, 2};
  CostMatrix pc;
  pc.values = Matrix(6, 4);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 4; ++j) pc.values(i, j) = c.values(perm[i], j);
  }
  TransportPlan permuted = sinkhorn(pc, mg, cfg);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 4; ++j) {
      CHECK(permuted.coupling(i, j) ==
            doctest::Approx(base.coupling(perm[i], j)).epsilon(1e-12));
    }
  }
}

TEST_CASE("sinkhorn matches an independent literal-iteration oracle") {
  Rng rng(91);
  for (int trial = 0; trial < 10; ++trial) {
    int t = rng.uniform_int(2, 12);
    int n = rng.uniform_int(2, 6);
    CostMatrix c;
    c.values = random_cost(t, n, rng);
    Marginals mg = Marginals::uniform(t, n);
    SinkhornConfig cfg;  // defaults: lambda 0.1, delta 0.01, 100 iters
    TransportPlan plan = sinkhorn(c, mg, cfg);
    Matrix ref = reference_sinkhorn(c.values, mg, cfg);
    for (size_t i = 0; i < ref.size(); ++i) {
      CHECK(std::abs(plan.coupling.data[i] - ref.data[i]) < 1e-12);
    }
  }
}

TEST_CASE("kernel-domain and log-domain paths agree through a constant cost shift") {
  // Adding a constant to every cost leaves the plan unchanged mathematically,
  // but pushes max(C)/lambda over the switch point so the log path runs.
  Rng rng(13);
  CostMatrix c;
  c.values = random_cost(5, 3, rng);
  Marginals mg = Marginals::uniform(5, 3);
  SinkhornConfig cfg;
  cfg.lambda = 0.01;
  cfg.delta = 1e-9;
  cfg.max_iters = 5000;

  CostMatrix shifted;
  shifted.values = c.values;
  for (double& x : shifted.values.data) x += 6.0;  // max/lambda = 800 -> log path

  TransportPlan kernel_plan = sinkhorn(c, mg, cfg);
  TransportPlan log_plan = sinkhorn(shifted, mg, cfg);
  for (size_t i = 0; i < kernel_plan.coupling.size(); ++i) {
    CHECK(std::abs(kernel_plan.coupling.data[i] - log_plan.coupling.data[i]) < 1e-9);
  }
}

TEST_CASE("ot_distance trivial and oracle cases") {
  TransportPlan unit;
  unit.coupling = from_rows({{1.0}});
  CHECK(ot_distance(unit, cost_from({{0.5}})) == 0.5);

  TransportPlan uni;
  uni.coupling = from_rows({{0.25, 0.25}, {0.25, 0.25}});
  CHECK(ot_distance(uni, cost_from({{0, 1}, {1, 0}})) == doctest::Approx(0.5));

  Rng rng(8);
  TransportPlan p;
  p.coupling = random_cost(4, 3, rng);
  CostMatrix c;
  c.values = random_cost(4, 3, rng);
  double expected = 0.0;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 3; ++j) expected += p.coupling(i, j) * c.values(i, j);
  }
  CHECK(std::abs(ot_distance(p, c) - expected) < 1e-12);

  CHECK_THROWS_AS(ot_distance(p, cost_from({{1.0}})), DimensionError);
}

TEST_CASE("hungarian_align trivial cases") {
  HungarianResult r = hungarian_align(cost_from({{0, 1}, {1, 0}}));
  REQUIRE(r.assignment.size() == 2);
  CHECK(r.assignment[0] == std::pair<int, int>(0, 0));
  CHECK(r.assignment[1] == std::pair<int, int>(1, 1));
  CHECK(r.total_cost == 0.0);

  HungarianResult single = hungarian_align(cost_from({{0.3}}));
  CHECK(single.total_cost == doctest::Approx(0.3));
}

TEST_CASE("hungarian_align matches brute force on square and rectangular inputs") {
  Rng rng(19);
  for (int trial = 0; trial < 30; ++trial) {
    int r = rng.uniform_int(1, 6);
    int c = rng.uniform_int(1, 6);
    CostMatrix cost;
    cost.values = random_cost(r, c, rng);
    HungarianResult hr = hungarian_align(cost);
    CHECK(static_cast<int>(hr.assignment.size()) == std::min(r, c));
    CHECK(hr.total_cost == doctest::Approx(brute_force_assignment(cost.values)).epsilon(1e-10));

    // One-to-one on both sides.
    std::vector<char> rows(r, 0), cols(c, 0);
    for (auto& [i, j] : hr.assignment) {
      CHECK(!rows[i]);
      CHECK(!cols[j]);
      rows[i] = cols[j] = 1;
    }
  }
}

TEST_CASE("hungarian_align assignment is invariant to positive cost scaling") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    CostMatrix cost;
    cost.values = random_cost(5, 5, rng);
    HungarianResult base = hungarian_align(cost);
    for (double k : {0.5, 2.0, 13.0}) {
      CostMatrix scaled;
      scaled.values = cost.values;
      for (double& x : scaled.values.data) x *= k;
      HungarianResult s = hungarian_align(scaled);
      CHECK(s.assignment == base.assignment);
      CHECK(s.total_cost == doctest::Approx(k * base.total_cost).epsilon(1e-10));
    }
  }
}

TEST_CASE("euclidean_align trivial and oracle cases") {
  Matrix f = from_rows({{1, 2}});
  CHECK(euclidean_align(f, f) == 0.0);
  CHECK(euclidean_align(from_rows({{0, 0}}), from_rows({{3, 4}})) == doctest::Approx(25.0));

  Rng rng(4);
  Matrix feats(3, 2), prompts(2, 2);
  for (double& x : feats.data) x = rng.uniform(-2.0, 2.0);
  for (double& x : prompts.data) x = rng.uniform(-2.0, 2.0);
  double expected = 0.0;
  for (int t = 0; t < 3; ++t) {
    for (int i = 0; i < 2; ++i) {
      double dx = feats(t, 0) - prompts(i, 0);
      double dy = feats(t, 1) - prompts(i, 1);
      expected += dx * dx + dy * dy;
    }
  }
  CHECK(euclidean_align(feats, prompts) == doctest::Approx(expected).epsilon(1e-12));
  CHECK_THROWS_AS(euclidean_align(Matrix(2, 3), Matrix(2, 4)), DimensionError);
}

TEST_CASE("mean_prompt_align with one prompt equals plain cosine similarity") {
  Matrix prompts = from_rows({{0.6, 0.8}});
  Matrix feats = from_rows({{1, 0}, {0, 1}});
  std::vector<double> sims = mean_prompt_align(feats, prompts);
  CHECK(sims[0] == doctest::Approx(0.6));
  CHECK(sims[1] == doctest::Approx(0.8));
}

TEST_CASE("mean_prompt_align rejects an antipodal (degenerate) ensemble") {
  Matrix prompts = from_rows({{1, 0}, {-1, 0}});
  Matrix feats = from_rows({{1, 0}});
  CHECK_THROWS_AS(mean_prompt_align(feats, prompts), NumericError);
}

TEST_CASE("mean_prompt_align matches an explicit mean-then-cosine oracle") {
  Rng rng(6);
  Matrix prompts = l2_normalize_rows(random_cost(4, 5, rng)).values;
  Matrix feats = l2_normalize_rows(random_cost(3, 5, rng)).values;
  std::vector<double> sims = mean_prompt_align(feats, prompts);

  std::vector<double> mean(5, 0.0);
  for (int j = 0; j < 4; ++j) {
    for (int k = 0; k < 5; ++k) mean[k] += prompts(j, k) / 4.0;
  }
  double norm = 0.0;
  for (double x : mean) norm += x * x;
  norm = std::sqrt(norm);
  for (int t = 0; t < 3; ++t) {
    double dot = 0.0;
    for (int k = 0; k < 5; ++k) dot += feats(t, k) * mean[k] / norm;
    CHECK(sims[t] == doctest::Approx(dot).epsilon(1e-12));
  }
}

TEST_CASE("cost_backward matches finite differences for both metrics") {
  Rng rng(101);
  Matrix feats = l2_normalize_rows(random_cost(3, 4, rng)).values;
  Matrix prompts = l2_normalize_rows(random_cost(2, 4, rng)).values;
  Matrix d_cost(3, 2);
  for (double& x : d_cost.data) x = rng.uniform(-1.0, 1.0);

  for (CostMetric metric : {CostMetric::kCosine, CostMetric::kSquaredEuclidean}) {
    auto build = [&](const Matrix& f, const Matrix& g) {
      return metric == CostMetric::kCosine ? cosine_cost(f, g)
                                           : squared_euclidean_cost(f, g);
    };
    CostMatrix cost = build(feats, prompts);
    Matrix df(3, 4), dg(2, 4);
    cost_backward(cost, feats, prompts, d_cost, &df, &dg);

    double h = 1e-6;
    for (int i = 0; i < 3; ++i) {
      for (int k = 0; k < 4; ++k) {
        Matrix fp = feats, fm = feats;
        fp(i, k) += h;
        fm(i, k) -= h;
        double up = 0.0, down = 0.0;
        CostMatrix cp = build(fp, prompts), cm = build(fm, prompts);
        for (size_t z = 0; z < cp.values.size(); ++z) {
          up += d_cost.data[z] * cp.values.data[z];
          down += d_cost.data[z] * cm.values.data[z];
        }
        CHECK(df(i, k) == doctest::Approx((up - down) / (2 * h)).epsilon(1e-5));
      }
    }
    for (int j = 0; j < 2; ++j) {
      for (int k = 0; k < 4; ++k) {
        Matrix gp = prompts, gm = prompts;
        gp(j, k) += h;
        gm(j, k) -= h;
        double up = 0.0, down = 0.0;
        CostMatrix cp = build(feats, gp), cm = build(feats, gm);
        for (size_t z = 0; z < cp.values.size(); ++z) {
          up += d_cost.data[z] * cp.values.data[z];
          down += d_cost.data[z] * cm.values.data[z];
        }
        CHECK(dg(j, k) == doctest::Approx((up - down) / (2 * h)).epsilon(1e-5));
      }
    }
  }
}
