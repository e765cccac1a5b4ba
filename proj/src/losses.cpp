#include "otneg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "otneg/common.hpp"

namespace otneg {

namespace {

constexpr double kSimilaritySlack = 1e-9;

// log(1 + e^z) without overflow.
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

void SimilarityTriple::validate() const {
  require(!neg_sims.empty(), ErrorKind::InvalidArgument, "at least one negative is required");
  require(std::abs(pos_sim) <= 1.0 + kSimilaritySlack, ErrorKind::InvalidArgument,
          "positive similarity outside [-1, 1]");
  for (double s : neg_sims)
    require(std::abs(s) <= 1.0 + kSimilaritySlack, ErrorKind::InvalidArgument,
            "negative similarity outside [-1, 1]");
  if (neg_weights) {
    require(neg_weights->size() == neg_sims.size(), ErrorKind::DimensionMismatch,
            "one weight per negative is required");
    double total = 0.0;
    for (double w : *neg_weights) {
      require(w >= 0.0, ErrorKind::InvalidArgument, "negative weights must be >= 0");
      total += w;
    }
    require(std::abs(total - 1.0) <= 1e-9, ErrorKind::InvalidArgument,
            "negative weights must sum to one");
  }
}

double SimilarityTriple::weight(int k) const {
  return neg_weights ? (*neg_weights)[k] : 1.0 / static_cast<double>(neg_sims.size());
}

const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::Triplet: return "triplet";
    case LossKind::NCE: return "nce";
    case LossKind::LargeMNCE: return "large_m_nce";
    case LossKind::DebiasedNCE: return "debiased_nce";
    case LossKind::UpperBound: return "upper_bound";
  }
  return "unknown";
}

LossKind loss_kind_from_string(const std::string& name) {
  for (LossKind kind : {LossKind::Triplet, LossKind::NCE, LossKind::LargeMNCE,
                        LossKind::DebiasedNCE, LossKind::UpperBound}) {
    if (name == to_string(kind)) return kind;
  }
  throw Error(ErrorKind::Config, "unknown loss kind '" + name + "'");
}

void LossConfig::validate() const {
  require(eta > 0.0, ErrorKind::Config, "eta must be > 0");
  require(q > 0.0, ErrorKind::Config, "q must be > 0");
  require(tau_plus >= 0.0 && tau_plus < 1.0, ErrorKind::Config, "tau_plus must be in [0, 1)");
  require(temperature > 0.0, ErrorKind::Config, "temperature must be > 0");
}

LossValue triplet_loss(const SimilarityTriple& t, const LossConfig& cfg) {
  require(t.arity() == 1, ErrorKind::WrongArity, "triplet loss takes exactly one negative");
  const double arg = 2.0 * (t.neg_sims[0] - t.pos_sim) + cfg.eta;
  LossValue out;
  out.d_neg.assign(1, 0.0);
  // The kink arg == 0 takes the active-side derivative.
  if (arg >= 0.0) {
    out.value = arg;
    out.d_pos = -2.0;
    out.d_neg[0] = 2.0;
  }
  return out;
}

LossValue nce_loss(const SimilarityTriple& t, const LossConfig& cfg) {
  const int m = t.arity();
  require(m >= 1, ErrorKind::InvalidArgument, "at least one negative is required");
  // z = log q + LSE_k(log w_k + v_k)
  std::vector<double> logits(m);
  double peak = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < m; ++k) {
    const double w = t.weight(k);
    logits[k] = w > 0.0 ? std::log(w) + (t.neg_sims[k] - t.pos_sim) / cfg.temperature
                        : -std::numeric_limits<double>::infinity();
    peak = std::max(peak, logits[k]);
  }
  double acc = 0.0;
  for (int k = 0; k < m; ++k) acc += std::exp(logits[k] - peak);
  const double z = std::log(cfg.q) + peak + std::log(acc);

  LossValue out;
  out.value = softplus(z);
  const double outer = sigmoid(z);
  out.d_neg.resize(m);
  double total = 0.0;
  for (int k = 0; k < m; ++k) {
    const double share = std::exp(logits[k] - peak) / acc;
    out.d_neg[k] = outer * share / cfg.temperature;
    total += out.d_neg[k];
  }
  out.d_pos = -total;
  return out;
}

LargeMValue large_m_nce_loss(double pos_sim, double neg_expectation, const LossConfig& cfg) {
  require(neg_expectation > 0.0, ErrorKind::InvalidArgument,
          "the negative expectation must be positive");
  const double z = std::log(cfg.q) + std::log(neg_expectation) - pos_sim / cfg.temperature;
  LargeMValue out;
  out.value = softplus(z);
  const double outer = sigmoid(z);
  out.d_pos = -outer / cfg.temperature;
  out.d_expectation = outer / neg_expectation;
  return out;
}

LossValue large_m_nce_from_negatives(const SimilarityTriple& t, const LossConfig& cfg) {
  const int m = t.arity();
  require(m >= 1, ErrorKind::InvalidArgument, "at least one negative is required");
  std::vector<double> terms(m);
  double expectation = 0.0;
  for (int k = 0; k < m; ++k) {
    terms[k] = t.weight(k) * std::exp(t.neg_sims[k] / cfg.temperature);
    expectation += terms[k];
  }
  const LargeMValue inner = large_m_nce_loss(t.pos_sim, expectation, cfg);
  LossValue out;
  out.value = inner.value;
  out.d_pos = inner.d_pos;
  out.d_neg.resize(m);
  for (int k = 0; k < m; ++k) out.d_neg[k] = inner.d_expectation * terms[k] / cfg.temperature;
  return out;
}

LossValue debiased_nce_loss(const SimilarityTriple& t, const LossConfig& cfg) {
  const int m = t.arity();
  require(m >= 1, ErrorKind::InvalidArgument, "at least one negative is required");
  require(cfg.tau_plus >= 0.0 && cfg.tau_plus < 1.0, ErrorKind::Config,
          "tau_plus must be in [0, 1)");
  std::vector<double> terms(m);
  double moment = 0.0;
  for (int k = 0; k < m; ++k) {
    terms[k] = t.weight(k) * std::exp((t.neg_sims[k] - t.pos_sim) / cfg.temperature);
    moment += terms[k];
  }
  const double estimate = (moment - cfg.tau_plus) / (1.0 - cfg.tau_plus);
  const double floor = std::exp(-1.0 / cfg.temperature);
  LossValue out;
  out.d_neg.assign(m, 0.0);
  // At estimate == floor the unclamped branch is taken.
  if (estimate >= floor) {
    out.value = std::log1p(cfg.q * estimate);
    const double outer = cfg.q / (1.0 + cfg.q * estimate) / (1.0 - cfg.tau_plus);
    double total = 0.0;
    for (int k = 0; k < m; ++k) {
      out.d_neg[k] = outer * terms[k] / cfg.temperature;
      total += out.d_neg[k];
    }
    out.d_pos = -total;
  } else {
    out.value = std::log1p(cfg.q * floor);
    out.d_pos = 0.0;
  }
  return out;
}

LossValue upper_bound_loss(const SimilarityTriple& t) {
  const int m = t.arity();
  require(m >= 1, ErrorKind::InvalidArgument, "at least one negative is required");
  LossValue out;
  out.d_neg.resize(m);
  double acc = 0.0;
  for (int k = 0; k < m; ++k) {
    out.d_neg[k] = t.weight(k);
    acc += t.weight(k) * t.neg_sims[k];
  }
  out.value = acc - t.pos_sim;
  out.d_pos = -1.0;
  return out;
}

LossValue evaluate_loss(const SimilarityTriple& t, const LossConfig& cfg) {
  switch (cfg.kind) {
    case LossKind::Triplet: {
      if (t.arity() == 1) return triplet_loss(t, cfg);
      LossValue out;
      out.d_neg.assign(t.arity(), 0.0);
      SimilarityTriple single;
      single.pos_sim = t.pos_sim;
      single.neg_sims.resize(1);
      for (int k = 0; k < t.arity(); ++k) {
        single.neg_sims[0] = t.neg_sims[k];
        const LossValue part = triplet_loss(single, cfg);
        const double w = t.weight(k);
        out.value += w * part.value;
        out.d_pos += w * part.d_pos;
        out.d_neg[k] = w * part.d_neg[0];
      }
      return out;
    }
    case LossKind::NCE: return nce_loss(t, cfg);
    case LossKind::LargeMNCE: return large_m_nce_from_negatives(t, cfg);
    case LossKind::DebiasedNCE: return debiased_nce_loss(t, cfg);
    case LossKind::UpperBound: return upper_bound_loss(t);
  }
  throw Error(ErrorKind::Config, "unhandled loss kind");
}

double degenerate_value(const LossConfig& cfg) {
  switch (cfg.kind) {
    case LossKind::Triplet: return cfg.eta;
    case LossKind::UpperBound: return 0.0;
    case LossKind::NCE:
    case LossKind::LargeMNCE:
    case LossKind::DebiasedNCE: return std::log1p(cfg.q);
  }
  return 0.0;
}

}  // namespace otneg
