#include "otloc/otalign.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace otloc {

Marginals Marginals::uniform(int t, int n) {
  Marginals m;
  m.u.assign(t, 1.0 / t);
  m.v.assign(n, 1.0 / n);
  return m;
}

void Marginals::validate() const {
  double su = 0.0, sv = 0.0;
  for (double x : u) {
    if (!(x > 0.0)) throw NumericError("marginals: non-positive row mass");
    su += x;
  }
  for (double x : v) {
    if (!(x > 0.0)) throw NumericError("marginals: non-positive column mass");
    sv += x;
  }
  if (std::abs(su - 1.0) > 1e-12 || std::abs(sv - 1.0) > 1e-12) {
    throw NumericError("marginals: masses do not sum to 1");
  }
}

CostMatrix cosine_cost(const Matrix& features, const Matrix& prompts) {
  if (features.cols != prompts.cols) {
    throw DimensionError("cosine_cost: feature dim " + shape_str(features) +
                         " vs prompt dim " + shape_str(prompts));
  }
  Matrix sim = matmul(features, transpose(prompts));
  CostMatrix out;
  out.metric = CostMetric::kCosine;
  out.values = Matrix(sim.rows, sim.cols);
  for (size_t i = 0; i < sim.size(); ++i) {
    out.values.data[i] = 1.0 - sim.data[i];
  }
  ensure_finite(out.values, "cosine_cost");
  return out;
}

CostMatrix squared_euclidean_cost(const Matrix& features, const Matrix& prompts) {
  if (features.cols != prompts.cols) {
    throw DimensionError("squared_euclidean_cost: feature dim " + shape_str(features) +
                         " vs prompt dim " + shape_str(prompts));
  }
  CostMatrix out;
  out.metric = CostMetric::kSquaredEuclidean;
  out.values = Matrix(features.rows, prompts.rows);
  for (int i = 0; i < features.rows; ++i) {
    for (int j = 0; j < prompts.rows; ++j) {
      double sq = 0.0;
      for (int k = 0; k < features.cols; ++k) {
        double d = features(i, k) - prompts(j, k);
        sq += d * d;
      }
      out.values(i, j) = sq;
    }
  }
  ensure_finite(out.values, "squared_euclidean_cost");
  return out;
}

namespace {

// Kernel-domain scaling sweep: a = u ./ (K b), b = v ./ (K^T a). Residual is
// checked on the row side; column sums are exact right after the b update.
TransportPlan sinkhorn_kernel_domain(const Matrix& cost, const Marginals& mg,
                                     const SinkhornConfig& cfg) {
  int t = cost.rows, n = cost.cols;
  Matrix kern(t, n);
  for (size_t i = 0; i < kern.size(); ++i) {
    kern.data[i] = std::exp(-cost.data[i] / cfg.lambda);
  }

  std::vector<double> a(t, 0.0), b(mg.v);  // b starts at the column marginals
  std::vector<double> kb(t, 0.0), kta(n, 0.0);

  auto mul_kb = [&](const std::vector<double>& bv, std::vector<double>& out) {
    for (int i = 0; i < t; ++i) {
      double s = 0.0;
      const double* krow = &kern.data[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) s += krow[j] * bv[j];
      out[i] = s;
    }
  };
  auto mul_kta = [&](const std::vector<double>& av, std::vector<double>& out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (int i = 0; i < t; ++i) {
      double ai = av[i];
      const double* krow = &kern.data[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) out[j] += krow[j] * ai;
    }
  };

  TransportPlan plan;
  mul_kb(b, kb);
  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    for (int i = 0; i < t; ++i) {
      if (kb[i] <= 0.0 || !std::isfinite(kb[i])) {
        throw NumericError(
            "sinkhorn: kernel row collapsed to zero after exponentiation; "
            "lambda is too small for this cost scale, increase lambda");
      }
      a[i] = mg.u[i] / kb[i];
    }
    mul_kta(a, kta);
    for (int j = 0; j < n; ++j) {
      if (kta[j] <= 0.0 || !std::isfinite(kta[j])) {
        throw NumericError(
            "sinkhorn: kernel column collapsed to zero after exponentiation; "
            "lambda is too small for this cost scale, increase lambda");
      }
      b[j] = mg.v[j] / kta[j];
    }
    plan.iterations_used = iter;

    mul_kb(b, kb);
    double res = 0.0;
    for (int i = 0; i < t; ++i) res = std::max(res, std::abs(a[i] * kb[i] - mg.u[i]));
    // Column sums equal v by construction here; included for the reported
    // residual definition max over both sides.
    plan.residual = res;
    if (res < cfg.delta) {
      plan.converged = true;
      break;
    }
  }

  plan.coupling = Matrix(t, n);
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < n; ++j) {
      plan.coupling(i, j) = a[i] * kern(i, j) * b[j];
    }
  }
  return plan;
}

// Same recursion evaluated in log space with log-sum-exp; usable at any
// lambda > 0 for finite costs.
TransportPlan sinkhorn_log_domain(const Matrix& cost, const Marginals& mg,
                                  const SinkhornConfig& cfg) {
  int t = cost.rows, n = cost.cols;
  Matrix logk(t, n);
  for (size_t i = 0; i < logk.size(); ++i) {
    logk.data[i] = -cost.data[i] / cfg.lambda;
  }
  std::vector<double> la(t, 0.0), lb(n, 0.0), lu(t), lv(n);
  for (int i = 0; i < t; ++i) lu[i] = std::log(mg.u[i]);
  for (int j = 0; j < n; ++j) lb[j] = std::log(mg.v[j]);
  for (int j = 0; j < n; ++j) lv[j] = std::log(mg.v[j]);

  std::vector<double> row_lse(t), col_lse(n);
  auto lse_rows = [&]() {
    for (int i = 0; i < t; ++i) {
      const double* krow = &logk.data[static_cast<size_t>(i) * n];
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < n; ++j) mx = std::max(mx, krow[j] + lb[j]);
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += std::exp(krow[j] + lb[j] - mx);
      row_lse[i] = mx + std::log(s);
    }
  };
  auto lse_cols = [&]() {
    for (int j = 0; j < n; ++j) col_lse[j] = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < t; ++i) {
      const double* krow = &logk.data[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) col_lse[j] = std::max(col_lse[j], krow[j] + la[i]);
    }
    std::vector<double> s(n, 0.0);
    for (int i = 0; i < t; ++i) {
      const double* krow = &logk.data[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) s[j] += std::exp(krow[j] + la[i] - col_lse[j]);
    }
    for (int j = 0; j < n; ++j) col_lse[j] += std::log(s[j]);
  };

  TransportPlan plan;
  lse_rows();
  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    for (int i = 0; i < t; ++i) la[i] = lu[i] - row_lse[i];
    lse_cols();
    for (int j = 0; j < n; ++j) lb[j] = lv[j] - col_lse[j];
    plan.iterations_used = iter;

    lse_rows();
    double res = 0.0;
    for (int i = 0; i < t; ++i) {
      res = std::max(res, std::abs(std::exp(la[i] + row_lse[i]) - mg.u[i]));
    }
    plan.residual = res;
    if (res < cfg.delta) {
      plan.converged = true;
      break;
    }
  }

  plan.coupling = Matrix(t, n);
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < n; ++j) {
      plan.coupling(i, j) = std::exp(la[i] + logk(i, j) + lb[j]);
    }
  }
  return plan;
}

}  // namespace

TransportPlan sinkhorn(const CostMatrix& cost, const Marginals& marginals,
                       const SinkhornConfig& cfg) {
  const Matrix& c = cost.values;
  if (c.rows == 0 || c.cols == 0) throw DimensionError("sinkhorn: empty cost matrix");
  if (static_cast<int>(marginals.u.size()) != c.rows ||
      static_cast<int>(marginals.v.size()) != c.cols) {
    throw DimensionError("sinkhorn: marginal lengths do not match cost shape " +
                         shape_str(c));
  }
  if (!(cfg.lambda > 0.0)) throw NumericError("sinkhorn: lambda must be positive");
  marginals.validate();

  double cmin = c.data[0], cmax = c.data[0];
  for (double x : c.data) {
    cmin = std::min(cmin, x);
    cmax = std::max(cmax, x);
  }
  // Whole kernel exp(-C/lambda) underflows to zero: nothing to scale.
  if (std::exp(-cmin / cfg.lambda) == 0.0) {
    std::ostringstream os;
    os << "sinkhorn: kernel exp(-C/lambda) is zero everywhere (min cost " << cmin
       << ", lambda " << cfg.lambda << "); increase lambda";
    throw NumericError(os.str());
  }

  TransportPlan plan = (cmax / cfg.lambda < 690.0)
                           ? sinkhorn_kernel_domain(c, marginals, cfg)
                           : sinkhorn_log_domain(c, marginals, cfg);
  ensure_finite(plan.coupling, "sinkhorn");
  for (double x : plan.coupling.data) {
    if (x < 0.0) throw NumericError("sinkhorn: negative coupling entry");
  }
  return plan;
}

double ot_distance(const TransportPlan& plan, const CostMatrix& cost) {
  if (!plan.coupling.same_shape(cost.values)) {
    throw DimensionError("ot_distance: plan " + shape_str(plan.coupling) + " vs cost " +
                         shape_str(cost.values));
  }
  double s = 0.0;
  for (size_t i = 0; i < cost.values.size(); ++i) {
    s += plan.coupling.data[i] * cost.values.data[i];
  }
  return s;
}

HungarianResult hungarian_align(const CostMatrix& cost) {
  const Matrix& c = cost.values;
  bool transposed = c.rows > c.cols;
  Matrix a = transposed ? transpose(c) : c;
  int n = a.rows, m = a.cols;  // n <= m

  // Potentials + shortest augmenting path (Jonker-Volgenant style), 1-indexed.
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> pu(n + 1, 0.0), pv(m + 1, 0.0), minv(m + 1, 0.0);
  std::vector<int> match(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1, 0);

  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      int i0 = match[j0];
      int j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        double cur = a(i0 - 1, j - 1) - pu[i0] - pv[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          pu[match[j]] += delta;
          pv[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  HungarianResult out;
  for (int j = 1; j <= m; ++j) {
    if (match[j] == 0) continue;
    int row = match[j] - 1, col = j - 1;
    if (transposed) std::swap(row, col);
    out.assignment.emplace_back(row, col);
    out.total_cost += c(row, col);
  }
  std::sort(out.assignment.begin(), out.assignment.end());
  return out;
}

double euclidean_align(const Matrix& features, const Matrix& prompts) {
  if (features.cols != prompts.cols) {
    throw DimensionError("euclidean_align: feature dim " + shape_str(features) +
                         " vs prompt dim " + shape_str(prompts));
  }
  double total = 0.0;
  for (int t = 0; t < features.rows; ++t) {
    for (int i = 0; i < prompts.rows; ++i) {
      double sq = 0.0;
      for (int k = 0; k < features.cols; ++k) {
        double d = features(t, k) - prompts(i, k);
        sq += d * d;
      }
      total += sq;
    }
  }
  return total;
}

Matrix mean_prompt_matrix(const Matrix& prompts, double eps) {
  if (prompts.rows < 1) throw DimensionError("mean_prompt_matrix: no prompt rows");
  Matrix mean(1, prompts.cols);
  if (prompts.rows == 1) {
    // Mean of a single unit row is that row; skip the no-op renormalization so
    // the N=1 collapse is bit-identical to using the prompt directly.
    for (int k = 0; k < prompts.cols; ++k) mean(0, k) = prompts(0, k);
    return mean;
  }
  for (int k = 0; k < prompts.cols; ++k) {
    double s = 0.0;
    for (int i = 0; i < prompts.rows; ++i) s += prompts(i, k);
    mean(0, k) = s / prompts.rows;
  }
  RowNormResult rn = l2_normalize_rows(mean, eps);
  if (rn.degenerate[0]) {
    throw NumericError("mean_prompt_matrix: prompt mean is degenerate (norm < eps)");
  }
  return rn.values;
}

std::vector<double> mean_prompt_align(const Matrix& features, const Matrix& prompts,
                                      double eps) {
  Matrix mean = mean_prompt_matrix(prompts, eps);
  if (features.cols != mean.cols) {
    throw DimensionError("mean_prompt_align: feature dim " + shape_str(features) +
                         " vs prompt dim " + shape_str(prompts));
  }
  Matrix sim = matmul(features, transpose(mean));
  std::vector<double> out(features.rows);
  for (int t = 0; t < features.rows; ++t) out[t] = sim(t, 0);
  return out;
}

void cost_backward(const CostMatrix& cost, const Matrix& features, const Matrix& prompts,
                   const Matrix& d_cost, Matrix* d_features, Matrix* d_prompts) {
  if (d_cost.rows != features.rows || d_cost.cols != prompts.rows) {
    throw DimensionError("cost_backward: gradient shape " + shape_str(d_cost) +
                         " does not match " + shape_str(cost.values));
  }
  if (cost.metric == CostMetric::kCosine) {
    // C_ij = 1 - <f_i, g_j>
    if (d_features) {
      Matrix df = matmul(d_cost, prompts);
      for (size_t i = 0; i < df.size(); ++i) d_features->data[i] -= df.data[i];
    }
    if (d_prompts) {
      Matrix dg = matmul(transpose(d_cost), features);
      for (size_t i = 0; i < dg.size(); ++i) d_prompts->data[i] -= dg.data[i];
    }
  } else {
    // C_ij = ||f_i - g_j||^2
    if (d_features) {
      Matrix dcg = matmul(d_cost, prompts);
      for (int i = 0; i < features.rows; ++i) {
        double rs = 0.0;
        for (int j = 0; j < d_cost.cols; ++j) rs += d_cost(i, j);
        for (int k = 0; k < features.cols; ++k) {
          (*d_features)(i, k) += 2.0 * (rs * features(i, k) - dcg(i, k));
        }
      }
    }
    if (d_prompts) {
      Matrix dctf = matmul(transpose(d_cost), features);
      for (int j = 0; j < prompts.rows; ++j) {
        double cs = 0.0;
        for (int i = 0; i < d_cost.rows; ++i) cs += d_cost(i, j);
        for (int k = 0; k < prompts.cols; ++k) {
          (*d_prompts)(j, k) -= 2.0 * (dctf(j, k) - cs * prompts(j, k));
        }
      }
    }
  }
}

}  // namespace otloc
