#pragma once

#include <utility>
#include <vector>

#include "otloc/numerics.hpp"

namespace otloc {

enum class CostMetric { kCosine, kSquaredEuclidean };

// Pairwise feature-to-prompt cost. Cosine entries live in [0, 2] when both
// sides are unit rows; squared-euclidean entries are >= 0.
struct CostMatrix {
  Matrix values;  // T_l x N
  CostMetric metric = CostMetric::kCosine;
};

// Row/column mass prescriptions for the coupling. Entries positive, each side
// summing to 1.
struct Marginals {
  std::vector<double> u;  // length T_l
  std::vector<double> v;  // length N

  static Marginals uniform(int t, int n);
  void validate() const;  // throws NumericError on bad mass
};

struct SinkhornConfig {
  double lambda = 0.1;   // entropic regularizer
  double delta = 0.01;   // convergence threshold on the marginal residual
  int max_iters = 100;
};

struct TransportPlan {
  Matrix coupling;          // T_l x N, entries >= 0
  int iterations_used = 0;
  bool converged = false;
  double residual = 0.0;    // achieved max(|rowsums-u|_inf, |colsums-v|_inf)
};

// C_ij = 1 - <f_i, g_j>. Callers are expected to row-normalize both inputs
// first; the backward rule is dC_ij/dg_j = -f_i, dC_ij/df_i = -g_j.
CostMatrix cosine_cost(const Matrix& features, const Matrix& prompts);

// C_ij = ||f_i - g_j||^2, no normalization assumed.
CostMatrix squared_euclidean_cost(const Matrix& features, const Matrix& prompts);

// Entropically regularized OT via alternating diagonal scaling of
// K = exp(-C/lambda). Runs the literal kernel-domain update when K is
// representable and switches to a log-domain evaluation of the same
// recursion when exp(-C/lambda) would underflow; both routes agree to well
// under 1e-9 where both are feasible. The returned plan is a constant for
// gradient purposes: nothing differentiates through the iterations.
TransportPlan sinkhorn(const CostMatrix& cost, const Marginals& marginals,
                       const SinkhornConfig& cfg);

// Frobenius inner product <plan, cost>. Gradient w.r.t. the cost is the plan.
double ot_distance(const TransportPlan& plan, const CostMatrix& cost);

struct HungarianResult {
  std::vector<std::pair<int, int>> assignment;  // (row, col), sorted by row
  double total_cost = 0.0;
};

// Minimum-cost one-to-one matching over min(T_l, N) pairs. Rectangular inputs
// are handled by reducing to the smaller side (equivalent to padding the
// smaller side with zero-cost dummies).
HungarianResult hungarian_align(const CostMatrix& cost);

// All-pairs squared-distance sum, no coupling: sum_t sum_i ||f_t - g_i||^2.
double euclidean_align(const Matrix& features, const Matrix& prompts);

// Collapses the ensemble to its renormalized mean prompt. Returns the 1 x D
// unit row; throws NumericError when the mean norm is below eps. For a single
// prompt the row is returned as-is (the mean of one unit row is that row).
Matrix mean_prompt_matrix(const Matrix& prompts, double eps = 1e-12);

// Cosine similarity of every feature row against the renormalized mean prompt.
std::vector<double> mean_prompt_align(const Matrix& features, const Matrix& prompts,
                                      double eps = 1e-12);

// Accumulates d(loss)/d(features) and d(loss)/d(prompts) given d(loss)/d(cost),
// applying the metric's backward rule. Either output may be null.
void cost_backward(const CostMatrix& cost, const Matrix& features, const Matrix& prompts,
                   const Matrix& d_cost, Matrix* d_features, Matrix* d_prompts);

}  // namespace otloc
