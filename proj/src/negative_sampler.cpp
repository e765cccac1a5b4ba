#include "otneg/negative_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace otneg {

namespace {

constexpr double kUnitNormTolerance = 1e-6;

NegativeDistribution normalize_rows(Matrix weights, const BoolMatrix& mask) {
  NegativeDistribution out;
  for (Eigen::Index i = 0; i < weights.rows(); ++i) {
    for (Eigen::Index j = 0; j < weights.cols(); ++j)
      if (mask(i, j)) weights(i, j) = 0.0;
    const double total = weights.row(i).sum();
    require(total > 0.0 && std::isfinite(total), ErrorKind::NumericalOverflow,
            "conditional row " + std::to_string(i) + " has no finite positive mass");
    weights.row(i) /= total;
  }
  out.conditional = std::move(weights);
  return out;
}

}  // namespace

void EmbeddingBatch::validate() const {
  require(vectors.rows() >= 1 && vectors.cols() >= 1, ErrorKind::InvalidArgument,
          "empty embedding batch");
  for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
    const double norm = vectors.row(i).norm();
    require(std::abs(norm - 1.0) <= kUnitNormTolerance, ErrorKind::NonUnitNorm,
            "row " + std::to_string(i) + " has norm " + std::to_string(norm));
  }
  if (pair_of) {
    require(static_cast<Eigen::Index>(pair_of->size()) == vectors.rows(),
            ErrorKind::DimensionMismatch, "pair_of must have one entry per row");
    for (int p : *pair_of)
      require(p >= 0 && p < size(), ErrorKind::InvalidArgument, "pair_of index out of range");
  }
}

BoolMatrix EmbeddingBatch::exclusion_mask() const {
  const int n = size();
  BoolMatrix mask = BoolMatrix::Constant(n, n, false);
  for (int i = 0; i < n; ++i) mask(i, i) = true;
  if (pair_of) {
    for (int i = 0; i < n; ++i) {
      const int p = (*pair_of)[i];
      mask(i, p) = true;
      mask(p, i) = true;
    }
  }
  return mask;
}

MaskedCost build_cost(const EmbeddingBatch& batch) {
  batch.validate();
  MaskedCost cost;
  const Matrix gram = batch.vectors * batch.vectors.transpose();
  cost.costs = (1.0 - gram.array()).max(0.0).matrix();
  cost.forbidden = batch.exclusion_mask();
  return cost;
}

NegativeDistribution ot_negative_distribution(const EmbeddingBatch& batch,
                                              const SinkhornConfig& cfg) {
  require(batch.size() >= 3, ErrorKind::InvalidArgument,
          "the OT sampler needs at least three samples per batch");
  const MaskedCost cost = build_cost(batch);
  const Histogram marginal = Histogram::uniform(batch.size());
  const Coupling coupling = sinkhorn(cost, marginal, marginal, cfg);
  NegativeDistribution out = normalize_rows(coupling.plan, cost.forbidden);
  out.epsilon_used = cfg.epsilon;
  out.converged = coupling.converged;
  out.marginal_error = coupling.marginal_error;
  return out;
}

NegativeDistribution tilt_negative_distribution(const EmbeddingBatch& batch,
                                                const TiltConfig& cfg) {
  require(cfg.beta >= 0.0, ErrorKind::Config, "beta must be >= 0");
  batch.validate();
  const BoolMatrix mask = batch.exclusion_mask();
  const Matrix logits = cfg.beta * (batch.vectors * batch.vectors.transpose());
  Matrix weights(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < logits.cols(); ++j)
      if (!mask(i, j)) peak = std::max(peak, logits(i, j));
    for (Eigen::Index j = 0; j < logits.cols(); ++j)
      weights(i, j) = mask(i, j) ? 0.0 : std::exp(logits(i, j) - peak);
  }
  NegativeDistribution out = normalize_rows(std::move(weights), mask);
  out.epsilon_used = cfg.beta > 0.0 ? 1.0 / cfg.beta : std::numeric_limits<double>::infinity();
  return out;
}

NegativeDistribution uniform_negative_distribution(const EmbeddingBatch& batch) {
  return tilt_negative_distribution(batch, TiltConfig{0.0});
}

IndexMatrix sample_negatives(const NegativeDistribution& dist, int m, std::uint64_t rng_seed) {
  require(m >= 1, ErrorKind::InvalidArgument, "m must be >= 1");
  const Eigen::Index n = dist.conditional.rows();
  const Eigen::Index k = dist.conditional.cols();
  std::mt19937_64 rng(rng_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  IndexMatrix draws(n, m);
  std::vector<double> cdf(k);
  for (Eigen::Index i = 0; i < n; ++i) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      acc += dist.conditional(i, j);
      cdf[j] = acc;
    }
    require(acc > 0.0, ErrorKind::InvalidArgument, "conditional row has no mass");
    for (int s = 0; s < m; ++s) {
      const double target = unit(rng) * acc;
      // First index whose cumulative mass exceeds the target; zero-mass
      // entries share their predecessor's cdf value and are never selected.
      auto it = std::upper_bound(cdf.begin(), cdf.end(), target);
      if (it == cdf.end()) it = std::prev(cdf.end());
      draws(i, s) = static_cast<int>(it - cdf.begin());
    }
  }
  return draws;
}

double mean_negative_similarity(const EmbeddingBatch& batch, const NegativeDistribution& dist) {
  require(dist.conditional.rows() == batch.size() && dist.conditional.cols() == batch.size(),
          ErrorKind::DimensionMismatch, "distribution shape does not match the batch");
  const Matrix gram = batch.vectors * batch.vectors.transpose();
  return dist.conditional.cwiseProduct(gram).sum() / batch.size();
}

TiltFormFit fit_tilt_form(const EmbeddingBatch& batch, const NegativeDistribution& dist,
                          double epsilon) {
  require(epsilon > 0.0, ErrorKind::InvalidArgument, "epsilon must be > 0");
  const int n = batch.size();
  require(dist.conditional.rows() == n && dist.conditional.cols() == n,
          ErrorKind::DimensionMismatch, "distribution shape does not match the batch");
  const BoolMatrix mask = batch.exclusion_mask();
  const Matrix gram = batch.vectors * batch.vectors.transpose();

  // Cells that are allowed and carry mass; underflowed cells have no log.
  BoolMatrix active(n, n);
  Matrix target = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      active(i, j) = !mask(i, j) && dist.conditional(i, j) > 0.0;
      if (active(i, j)) target(i, j) = std::log(dist.conditional(i, j)) - gram(i, j) / epsilon;
    }
  }

  // Backfitting for the two-way additive model with missing cells.
  TiltFormFit fit;
  fit.row_offsets = Vector::Zero(n);
  fit.column_log_weights = Vector::Zero(n);
  for (int sweep = 0; sweep < 5000; ++sweep) {
    double change = 0.0;
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      int count = 0;
      for (int j = 0; j < n; ++j) {
        if (!active(i, j)) continue;
        acc += target(i, j) - fit.column_log_weights(j);
        ++count;
      }
      if (count == 0) continue;
      const double next = acc / count;
      change = std::max(change, std::abs(next - fit.row_offsets(i)));
      fit.row_offsets(i) = next;
    }
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      int count = 0;
      for (int i = 0; i < n; ++i) {
        if (!active(i, j)) continue;
        acc += target(i, j) - fit.row_offsets(i);
        ++count;
      }
      if (count == 0) continue;
      const double next = acc / count;
      change = std::max(change, std::abs(next - fit.column_log_weights(j)));
      fit.column_log_weights(j) = next;
    }
    if (change < 1e-14) break;
  }
  const double shift = fit.column_log_weights.mean();
  fit.column_log_weights.array() -= shift;
  fit.row_offsets.array() += shift;

  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (!active(i, j)) continue;
      const double resid =
          target(i, j) - fit.row_offsets(i) - fit.column_log_weights(j);
      fit.max_residual = std::max(fit.max_residual, std::abs(resid));
    }
  }
  return fit;
}

double mean_total_variation(const NegativeDistribution& lhs, const NegativeDistribution& rhs) {
  require(lhs.conditional.rows() == rhs.conditional.rows() &&
              lhs.conditional.cols() == rhs.conditional.cols(),
          ErrorKind::DimensionMismatch, "distribution shapes differ");
  return 0.5 * (lhs.conditional - rhs.conditional).cwiseAbs().sum() /
         static_cast<double>(lhs.conditional.rows());
}

}  // namespace otneg
