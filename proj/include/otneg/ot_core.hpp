#ifndef OTNEG_OT_CORE_HPP_
#define OTNEG_OT_CORE_HPP_

#include <vector>

#include "otneg/common.hpp"

namespace otneg {

// A probability vector. Weights are non-negative and sum to one.
struct Histogram {
  Vector weights;

  static Histogram uniform(int n);
  int size() const { return static_cast<int>(weights.size()); }
  void validate() const;
};

// Ground cost with forbidden pairs. Forbidden entries behave as +inf cost and
// never carry mass; the values stored in `costs` at those positions are ignored.
struct MaskedCost {
  Matrix costs;
  BoolMatrix forbidden;

  static MaskedCost unmasked(Matrix costs);
  int size() const { return static_cast<int>(costs.rows()); }
  double max_allowed_cost() const;
  void validate() const;
};

// Only the KL regularizer is implemented. The enum reserves room for other
// phi-divergences without changing the config layout.
enum class Regularizer { KL };

struct SinkhornConfig {
  double epsilon = 0.1;
  int max_iters = 10000;
  double tolerance = 1e-6;
  double stabilization_threshold = 50.0;
  // When in (0, 1) and epsilon is below the largest allowed cost, the solve
  // runs a continuation epsilon_k = max(epsilon, c_max * factor^k), each stage
  // warm-started from the previous duals. 0 disables it.
  double epsilon_scaling = 0.0;
  Regularizer regularizer = Regularizer::KL;

  void validate() const;
};

struct Coupling {
  Matrix plan;
  // Dimensionless log-domain duals: on allowed entries
  //   log plan(i,j) = u(i) + v(j) - cost(i,j)/epsilon + log a(i) + log b(j).
  Vector potentials_u;
  Vector potentials_v;
  double transport_cost = 0.0;
  double marginal_error = 0.0;
  int iterations_used = 0;
  bool converged = true;
};

// Entropy-regularized OT, log-domain stabilized Sinkhorn with absorption.
// A NotConverged outcome is reported through Coupling::converged; the partial
// plan is still returned. InfeasibleMask and NumericalOverflow throw.
Coupling sinkhorn(const MaskedCost& cost, const Histogram& a, const Histogram& b,
                  const SinkhornConfig& cfg);

// KL(plan || a b^T), summed over entries with positive mass.
double kl_to_product(const Coupling& coupling, const Histogram& a, const Histogram& b);

// cost term + epsilon * KL, the value minimized by sinkhorn().
double regularized_objective(const Coupling& coupling, const MaskedCost& cost,
                             const Histogram& a, const Histogram& b, double epsilon);

// The default coupling a b^T. Potentials are zero; transport_cost is zero
// unless a cost is supplied, in which case it is the full-matrix expectation.
Coupling product_coupling(const Histogram& a, const Histogram& b,
                          const MaskedCost* cost = nullptr);

struct PermutationOptimum {
  double value = 0.0;
  std::vector<int> permutation;  // row i is matched to column permutation[i]
};

// Exact unregularized OT for uniform marginals by enumeration of permutation
// plans (Birkhoff). The first minimizer in lexicographic order wins ties.
PermutationOptimum brute_force_ot_plan(const MaskedCost& cost, int n);
double brute_force_ot(const MaskedCost& cost, int n);

// Largest |log plan - (u + v - c/eps + log a + log b)| over allowed entries
// that carry mass.
double schroedinger_residual(const Coupling& coupling, const MaskedCost& cost,
                             const Histogram& a, const Histogram& b, double epsilon);

// L1 violation of both marginals.
double marginal_violation(const Matrix& plan, const Histogram& a, const Histogram& b);

}  // namespace otneg

#endif  // OTNEG_OT_CORE_HPP_
