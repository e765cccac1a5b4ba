#include "otneg/ot_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace otneg {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Below this a kernel-vector product is treated as underflowed and the update
// is redone exactly in the log domain.
constexpr double kUnderflow = 1e-280;
constexpr double kStageTolerance = 1e-3;

double log_sum_exp(const double* values, int count) {
  double peak = kNegInf;
  for (int k = 0; k < count; ++k) peak = std::max(peak, values[k]);
  if (peak == kNegInf) return kNegInf;
  double acc = 0.0;
  for (int k = 0; k < count; ++k) acc += std::exp(values[k] - peak);
  return peak + std::log(acc);
}

class StabilizedSinkhorn {
 public:
  StabilizedSinkhorn(const MaskedCost& cost, const Histogram& a, const Histogram& b,
                     const SinkhornConfig& cfg, double epsilon, int max_iters, double tolerance,
                     const Vector* warm_u = nullptr, const Vector* warm_v = nullptr)
      : a_(a.weights), b_(b.weights), cfg_(cfg), max_iters_(max_iters), tolerance_(tolerance),
        rows_(cost.size()), cols_(static_cast<int>(cost.costs.cols())) {
    log_kernel0_.resize(rows_, cols_);
    for (int i = 0; i < rows_; ++i) {
      for (int j = 0; j < cols_; ++j) {
        if (cost.forbidden(i, j) || a_(i) <= 0.0 || b_(j) <= 0.0) {
          log_kernel0_(i, j) = kNegInf;
        } else {
          log_kernel0_(i, j) =
              -cost.costs(i, j) / epsilon + std::log(a_(i)) + std::log(b_(j));
        }
      }
    }
    u_ = warm_u ? *warm_u : Vector::Zero(rows_);
    v_ = warm_v ? *warm_v : Vector::Zero(cols_);
    alpha_ = Vector::Ones(rows_);
    beta_ = Vector::Ones(cols_);
    // Start from the exact row fit so the first kernel cannot fully underflow.
    log_row_update();
    log_col_update();
    rebuild_kernel();
  }

  Coupling run() {
    Coupling out;
    int iter = 0;
    double error = std::numeric_limits<double>::infinity();
    Vector kb = kernel_ * beta_;
    while (iter < max_iters_) {
      ++iter;

      bool row_underflow = false;
      for (int i = 0; i < rows_; ++i) {
        if (a_(i) <= 0.0) continue;
        if (!(kb(i) > kUnderflow) || !std::isfinite(kb(i))) {
          row_underflow = true;
          break;
        }
      }
      if (row_underflow) {
        absorb();
        log_row_update();
        rebuild_kernel();
      } else {
        for (int i = 0; i < rows_; ++i) alpha_(i) = a_(i) > 0.0 ? a_(i) / kb(i) : 1.0;
      }

      Vector kta = kernel_.transpose() * alpha_;
      bool col_underflow = false;
      for (int j = 0; j < cols_; ++j) {
        if (b_(j) <= 0.0) continue;
        if (!(kta(j) > kUnderflow) || !std::isfinite(kta(j))) {
          col_underflow = true;
          break;
        }
      }
      if (col_underflow) {
        absorb();
        log_col_update();
        rebuild_kernel();
      } else {
        for (int j = 0; j < cols_; ++j) beta_(j) = b_(j) > 0.0 ? b_(j) / kta(j) : 1.0;
      }

      if (needs_absorption()) {
        absorb();
        rebuild_kernel();
      }

      kb = kernel_ * beta_;
      kta = kernel_.transpose() * alpha_;
      const double row_err = (alpha_.cwiseProduct(kb) - a_).cwiseAbs().sum();
      const double col_err = (beta_.cwiseProduct(kta) - b_).cwiseAbs().sum();
      if (!std::isfinite(row_err) || !std::isfinite(col_err)) {
        throw Error(ErrorKind::NumericalOverflow,
                    "marginal error became non-finite; epsilon is too small for the cost scale");
      }
      error = std::max(row_err, col_err);
      if (error <= tolerance_) break;
    }

    absorb();
    out.plan.resize(rows_, cols_);
    for (int i = 0; i < rows_; ++i) {
      for (int j = 0; j < cols_; ++j) {
        const double lk = log_kernel0_(i, j);
        out.plan(i, j) = lk == kNegInf ? 0.0 : std::exp(lk + u_(i) + v_(j));
      }
    }
    if (!out.plan.allFinite()) {
      throw Error(ErrorKind::NumericalOverflow, "transport plan overflowed");
    }
    out.potentials_u = u_;
    out.potentials_v = v_;
    out.iterations_used = iter;
    out.marginal_error = std::max((out.plan.rowwise().sum() - a_).cwiseAbs().sum(),
                                  (out.plan.colwise().sum().transpose() - b_).cwiseAbs().sum());
    out.converged = error <= tolerance_;
    return out;
  }

 private:
  bool needs_absorption() const {
    const double limit = cfg_.stabilization_threshold;
    for (int i = 0; i < rows_; ++i) {
      if (std::abs(std::log(alpha_(i))) > limit) return true;
    }
    for (int j = 0; j < cols_; ++j) {
      if (std::abs(std::log(beta_(j))) > limit) return true;
    }
    return false;
  }

  void absorb() {
    u_ += alpha_.array().log().matrix();
    v_ += beta_.array().log().matrix();
    alpha_.setOnes();
    beta_.setOnes();
    if (!u_.allFinite() || !v_.allFinite()) {
      throw Error(ErrorKind::NumericalOverflow,
                  "dual potentials left the representable range; epsilon is too small");
    }
  }

  // Exact updates: u_i = log a_i - LSE_j(logK0_ij + v_j), and symmetrically for v.
  void log_row_update() {
    std::vector<double> buf(cols_);
    for (int i = 0; i < rows_; ++i) {
      if (a_(i) <= 0.0) {
        u_(i) = 0.0;
        continue;
      }
      for (int j = 0; j < cols_; ++j) buf[j] = log_kernel0_(i, j) + v_(j);
      u_(i) = std::log(a_(i)) - log_sum_exp(buf.data(), cols_);
    }
  }

  void log_col_update() {
    std::vector<double> buf(rows_);
    for (int j = 0; j < cols_; ++j) {
      if (b_(j) <= 0.0) {
        v_(j) = 0.0;
        continue;
      }
      for (int i = 0; i < rows_; ++i) buf[i] = log_kernel0_(i, j) + u_(i);
      v_(j) = std::log(b_(j)) - log_sum_exp(buf.data(), rows_);
    }
  }

  void rebuild_kernel() {
    kernel_.resize(rows_, cols_);
    for (int i = 0; i < rows_; ++i) {
      for (int j = 0; j < cols_; ++j) {
        const double lk = log_kernel0_(i, j);
        kernel_(i, j) = lk == kNegInf ? 0.0 : std::exp(lk + u_(i) + v_(j));
      }
    }
    if (!kernel_.allFinite()) {
      throw Error(ErrorKind::NumericalOverflow,
                  "stabilized kernel overflowed; epsilon is too small for the cost scale");
    }
  }

  const Vector& a_;
  const Vector& b_;
  const SinkhornConfig& cfg_;
  int max_iters_;
  double tolerance_;
  int rows_;
  int cols_;
  Matrix log_kernel0_;
  Matrix kernel_;
  Vector u_, v_, alpha_, beta_;
};

void check_feasible(const MaskedCost& cost, const Histogram& a, const Histogram& b) {
  const int rows = cost.size();
  const int cols = static_cast<int>(cost.costs.cols());
  for (int i = 0; i < rows; ++i) {
    if (a.weights(i) <= 0.0) continue;
    bool any = false;
    for (int j = 0; j < cols && !any; ++j) any = !cost.forbidden(i, j) && b.weights(j) > 0.0;
    if (!any) {
      throw Error(ErrorKind::InfeasibleMask, "row " + std::to_string(i) + " is fully forbidden");
    }
  }
  for (int j = 0; j < cols; ++j) {
    if (b.weights(j) <= 0.0) continue;
    bool any = false;
    for (int i = 0; i < rows && !any; ++i) any = !cost.forbidden(i, j) && a.weights(i) > 0.0;
    if (!any) {
      throw Error(ErrorKind::InfeasibleMask,
                  "column " + std::to_string(j) + " is fully forbidden");
    }
  }
}

void check_shapes(const Matrix& plan, const Histogram& a, const Histogram& b) {
  require(plan.rows() == a.size() && plan.cols() == b.size(), ErrorKind::DimensionMismatch,
          "plan shape does not match the marginals");
}

}  // namespace

Histogram Histogram::uniform(int n) {
  require(n >= 1, ErrorKind::InvalidArgument, "histogram size must be positive");
  return Histogram{Vector::Constant(n, 1.0 / n)};
}

void Histogram::validate() const {
  require(weights.size() > 0, ErrorKind::InvalidArgument, "empty histogram");
  require((weights.array() >= 0.0).all() && weights.allFinite(), ErrorKind::InvalidArgument,
          "histogram weights must be finite and non-negative");
  require(std::abs(weights.sum() - 1.0) <= 1e-12, ErrorKind::InvalidArgument,
          "histogram weights must sum to one");
}

MaskedCost MaskedCost::unmasked(Matrix costs) {
  MaskedCost out;
  out.forbidden = BoolMatrix::Constant(costs.rows(), costs.cols(), false);
  out.costs = std::move(costs);
  return out;
}

double MaskedCost::max_allowed_cost() const {
  double peak = 0.0;
  for (Eigen::Index i = 0; i < costs.rows(); ++i)
    for (Eigen::Index j = 0; j < costs.cols(); ++j)
      if (!forbidden(i, j)) peak = std::max(peak, costs(i, j));
  return peak;
}

void MaskedCost::validate() const {
  require(forbidden.rows() == costs.rows() && forbidden.cols() == costs.cols(),
          ErrorKind::DimensionMismatch, "mask shape does not match cost shape");
  for (Eigen::Index i = 0; i < costs.rows(); ++i) {
    for (Eigen::Index j = 0; j < costs.cols(); ++j) {
      if (forbidden(i, j)) continue;
      require(std::isfinite(costs(i, j)) && costs(i, j) >= 0.0, ErrorKind::InvalidArgument,
              "allowed costs must be finite and non-negative");
    }
  }
}

void SinkhornConfig::validate() const {
  require(epsilon > 0.0 && std::isfinite(epsilon), ErrorKind::Config, "epsilon must be > 0");
  require(tolerance > 0.0, ErrorKind::Config, "tolerance must be > 0");
  require(max_iters >= 1, ErrorKind::Config, "max_iters must be >= 1");
  require(stabilization_threshold > 0.0, ErrorKind::Config,
          "stabilization_threshold must be > 0");
  require(epsilon_scaling >= 0.0 && epsilon_scaling < 1.0, ErrorKind::Config,
          "epsilon_scaling must be in [0, 1)");
}

Coupling sinkhorn(const MaskedCost& cost, const Histogram& a, const Histogram& b,
                  const SinkhornConfig& cfg) {
  cfg.validate();
  cost.validate();
  a.validate();
  b.validate();
  require(cost.costs.rows() == a.size() && cost.costs.cols() == b.size(),
          ErrorKind::DimensionMismatch, "cost shape does not match the marginals");
  check_feasible(cost, a, b);

  Coupling out;
  const double start = cfg.epsilon_scaling > 0.0 ? cost.max_allowed_cost() : 0.0;
  if (start > cfg.epsilon) {
    // Continuation: solve a decreasing epsilon schedule, carrying the duals
    // (f = epsilon * u) from one stage to the next.
    double eps = start;
    int budget = cfg.max_iters;
    Vector u, v;
    bool warm = false;
    int used = 0;
    while (true) {
      eps = std::max(eps * cfg.epsilon_scaling, cfg.epsilon);
      // Intermediate stages only need approximate duals.
      const double tol = eps == cfg.epsilon ? cfg.tolerance
                                            : std::max(cfg.tolerance, kStageTolerance);
      StabilizedSinkhorn stage(cost, a, b, cfg, eps, budget, tol, warm ? &u : nullptr,
                               warm ? &v : nullptr);
      out = stage.run();
      used += out.iterations_used;
      budget -= out.iterations_used;
      if (eps == cfg.epsilon || budget <= 0) break;
      u = out.potentials_u * (eps / std::max(eps * cfg.epsilon_scaling, cfg.epsilon));
      v = out.potentials_v * (eps / std::max(eps * cfg.epsilon_scaling, cfg.epsilon));
      warm = true;
    }
    out.iterations_used = used;
    if (eps != cfg.epsilon) out.converged = false;
  } else {
    StabilizedSinkhorn solver(cost, a, b, cfg, cfg.epsilon, cfg.max_iters, cfg.tolerance);
    out = solver.run();
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < out.plan.rows(); ++i)
    for (Eigen::Index j = 0; j < out.plan.cols(); ++j)
      if (!cost.forbidden(i, j)) total += out.plan(i, j) * cost.costs(i, j);
  out.transport_cost = total;
  return out;
}

double kl_to_product(const Coupling& coupling, const Histogram& a, const Histogram& b) {
  check_shapes(coupling.plan, a, b);
  double kl = 0.0;
  for (Eigen::Index i = 0; i < coupling.plan.rows(); ++i) {
    for (Eigen::Index j = 0; j < coupling.plan.cols(); ++j) {
      const double p = coupling.plan(i, j);
      if (p <= 0.0) continue;
      kl += p * std::log(p / (a.weights(i) * b.weights(j)));
    }
  }
  // Rounding can push an exact zero slightly negative.
  return std::max(kl, 0.0);
}

double regularized_objective(const Coupling& coupling, const MaskedCost& cost,
                             const Histogram& a, const Histogram& b, double epsilon) {
  check_shapes(coupling.plan, a, b);
  double total = 0.0;
  for (Eigen::Index i = 0; i < coupling.plan.rows(); ++i)
    for (Eigen::Index j = 0; j < coupling.plan.cols(); ++j)
      if (!cost.forbidden(i, j)) total += coupling.plan(i, j) * cost.costs(i, j);
  return total + epsilon * kl_to_product(coupling, a, b);
}

Coupling product_coupling(const Histogram& a, const Histogram& b, const MaskedCost* cost) {
  Coupling out;
  out.plan = a.weights * b.weights.transpose();
  out.potentials_u = Vector::Zero(a.size());
  out.potentials_v = Vector::Zero(b.size());
  out.marginal_error = 0.0;
  out.iterations_used = 0;
  out.converged = true;
  if (cost != nullptr) {
    check_shapes(cost->costs, a, b);
    out.transport_cost = out.plan.cwiseProduct(cost->costs).sum();
  }
  return out;
}

PermutationOptimum brute_force_ot_plan(const MaskedCost& cost, int n) {
  require(n >= 1 && n <= 8, ErrorKind::InvalidArgument, "brute force OT supports 1 <= n <= 8");
  require(cost.costs.rows() == n && cost.costs.cols() == n && cost.forbidden.rows() == n &&
              cost.forbidden.cols() == n,
          ErrorKind::DimensionMismatch, "cost must be n x n");
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  PermutationOptimum best;
  best.value = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    bool blocked = false;
    for (int i = 0; i < n; ++i) {
      if (cost.forbidden(i, perm[i])) {
        blocked = true;
        break;
      }
      total += cost.costs(i, perm[i]);
    }
    if (blocked) continue;
    total /= n;
    if (total < best.value) {
      best.value = total;
      best.permutation = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  if (best.permutation.empty()) {
    throw Error(ErrorKind::InfeasibleMask, "every permutation touches a forbidden entry");
  }
  return best;
}

double brute_force_ot(const MaskedCost& cost, int n) { return brute_force_ot_plan(cost, n).value; }

double schroedinger_residual(const Coupling& coupling, const MaskedCost& cost,
                             const Histogram& a, const Histogram& b, double epsilon) {
  check_shapes(coupling.plan, a, b);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < coupling.plan.rows(); ++i) {
    for (Eigen::Index j = 0; j < coupling.plan.cols(); ++j) {
      if (cost.forbidden(i, j) || coupling.plan(i, j) <= 0.0) continue;
      const double model = coupling.potentials_u(i) + coupling.potentials_v(j) -
                           cost.costs(i, j) / epsilon + std::log(a.weights(i)) +
                           std::log(b.weights(j));
      worst = std::max(worst, std::abs(std::log(coupling.plan(i, j)) - model));
    }
  }
  return worst;
}

double marginal_violation(const Matrix& plan, const Histogram& a, const Histogram& b) {
  check_shapes(plan, a, b);
  return std::max((plan.rowwise().sum() - a.weights).cwiseAbs().sum(),
                  (plan.colwise().sum().transpose() - b.weights).cwiseAbs().sum());
}

}  // namespace otneg
