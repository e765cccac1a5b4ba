#ifndef OTNEG_NEGATIVE_SAMPLER_HPP_
#define OTNEG_NEGATIVE_SAMPLER_HPP_

#include <cstdint>
#include <optional>
#include <vector>

#include "otneg/common.hpp"
#include "otneg/ot_core.hpp"

namespace otneg {

// One mini-batch of unit-norm representations, one row per sample.
// pair_of, when present, maps each index to the index of its positive inside
// the batch (SimCLR-style two-view layouts).
struct EmbeddingBatch {
  Matrix vectors;
  std::optional<std::vector<int>> pair_of;

  int size() const { return static_cast<int>(vectors.rows()); }
  int dim() const { return static_cast<int>(vectors.cols()); }
  // Throws NonUnitNorm when a row norm deviates from one by more than 1e-6.
  void validate() const;
  BoolMatrix exclusion_mask() const;
};

struct NegativeDistribution {
  Matrix conditional;  // row i is P(. | x_i)
  double epsilon_used = 0.0;
  bool converged = true;
  double marginal_error = 0.0;
};

struct TiltConfig {
  double beta = 1.0;
};

// c(i,j) = 0.5 |f_i - f_j|^2 = 1 - <f_i, f_j>, self and positive pairs forbidden.
MaskedCost build_cost(const EmbeddingBatch& batch);

// Row-normalized entropic OT coupling with uniform marginals.
NegativeDistribution ot_negative_distribution(const EmbeddingBatch& batch,
                                              const SinkhornConfig& cfg);

// P(j|i) proportional to exp(beta <f_i, f_j>) over allowed j.
NegativeDistribution tilt_negative_distribution(const EmbeddingBatch& batch,
                                                const TiltConfig& cfg);

// Default coupling restricted to allowed entries: uniform per row.
NegativeDistribution uniform_negative_distribution(const EmbeddingBatch& batch);

// n x m matrix of IID draws (with replacement) from each conditional row.
IndexMatrix sample_negatives(const NegativeDistribution& dist, int m, std::uint64_t rng_seed);

// (1/n) sum_i sum_j P(j|i) <f_i, f_j>.
double mean_negative_similarity(const EmbeddingBatch& batch, const NegativeDistribution& dist);

// Fits log P(j|i) - <f_i,f_j>/epsilon = r_i + log w_j on allowed entries.
// A converged OT conditional satisfies this additive model exactly.
struct TiltFormFit {
  Vector column_log_weights;  // log w_j, normalized to mean zero over columns
  Vector row_offsets;
  double max_residual = 0.0;
};
TiltFormFit fit_tilt_form(const EmbeddingBatch& batch, const NegativeDistribution& dist,
                          double epsilon);

// Mean over rows of the total-variation distance between two conditionals.
double mean_total_variation(const NegativeDistribution& lhs, const NegativeDistribution& rhs);

}  // namespace otneg

#endif  // OTNEG_NEGATIVE_SAMPLER_HPP_
