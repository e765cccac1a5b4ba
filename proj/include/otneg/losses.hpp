#ifndef OTNEG_LOSSES_HPP_
#define OTNEG_LOSSES_HPP_

#include <optional>
#include <string>
#include <vector>

namespace otneg {

// Similarities of one anchor with its positive and its m negatives.
// neg_weights, when present, turns the negatives into a weighted expectation
// (used when the full conditional row replaces sampling). Absent weights mean
// 1/m each, which reproduces the unweighted formulas exactly.
struct SimilarityTriple {
  double pos_sim = 0.0;
  std::vector<double> neg_sims;
  std::optional<std::vector<double>> neg_weights;

  int arity() const { return static_cast<int>(neg_sims.size()); }
  void validate() const;
  double weight(int k) const;
};

enum class LossKind { Triplet, NCE, LargeMNCE, DebiasedNCE, UpperBound };

const char* to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

// temperature divides similarities in the NCE family (NCE, LargeMNCE,
// DebiasedNCE); triplet and upper-bound use raw similarities.
// q has no value fixed by the method; m (the classical NCE weighting) is the
// harness default and 1 is the value whose collapse target is log 2.
struct LossConfig {
  LossKind kind = LossKind::NCE;
  double eta = 0.5;
  double q = 1.0;
  double tau_plus = 0.1;
  double temperature = 1.0;

  void validate() const;
};

struct LossValue {
  double value = 0.0;
  double d_pos = 0.0;             // d value / d pos_sim
  std::vector<double> d_neg;      // d value / d neg_sims[k]
};

// max(0, 2(neg - pos) + eta). m must be 1.
LossValue triplet_loss(const SimilarityTriple& t, const LossConfig& cfg);

// log(1 + q sum_k w_k e^{v_k}), v_k = (neg_k - pos)/temperature.
LossValue nce_loss(const SimilarityTriple& t, const LossConfig& cfg);

struct LargeMValue {
  double value = 0.0;
  double d_pos = 0.0;
  double d_expectation = 0.0;
};

// log(1 + q E / e^{pos/temperature}), E an estimate of E[e^{neg/temperature}].
LargeMValue large_m_nce_loss(double pos_sim, double neg_expectation, const LossConfig& cfg);

// Same loss with E = sum_k w_k e^{neg_k/temperature}; gradients are chained
// back to the individual similarities.
LossValue large_m_nce_from_negatives(const SimilarityTriple& t, const LossConfig& cfg);

// log(1 + q g), g = max((sum_k w_k e^{v_k} - tau)/(1 - tau), e^{-1/temperature}).
LossValue debiased_nce_loss(const SimilarityTriple& t, const LossConfig& cfg);

// sum_k w_k neg_k - pos.
LossValue upper_bound_loss(const SimilarityTriple& t);

// Dispatch on cfg.kind. Triplet with m > 1 is evaluated as the weighted mean
// of the per-negative triplet losses.
LossValue evaluate_loss(const SimilarityTriple& t, const LossConfig& cfg);

// psi(0, ..., 0): the value every loss takes at a degenerate representation.
double degenerate_value(const LossConfig& cfg);

}  // namespace otneg

#endif  // OTNEG_LOSSES_HPP_
