#include <cmath>
#include <random>

#include "doctest.h"
#include "otneg/losses.hpp"
#include "support/oracles.hpp"

using namespace otneg;

namespace {

// log(1 + (e^0.3 + e^-0.1)/2), computed with mpmath at 30 digits.
constexpr double kTwoNegativeOracle = 0.7548761865812241153;
// log(1 + e^-50).
constexpr double kSaturatedOracle = 1.928749847963917783e-22;

SimilarityTriple triple(double pos, std::vector<double> negs) {
  SimilarityTriple t;
  t.pos_sim = pos;
  t.neg_sims = std::move(negs);
  return t;
}

LossConfig config(LossKind kind) {
  LossConfig cfg;
  cfg.kind = kind;
  return cfg;
}

SimilarityTriple random_triple(std::mt19937_64& rng, int m, bool weighted) {
  std::uniform_real_distribution<double> sim(-1.0, 1.0);
  SimilarityTriple t = triple(sim(rng), {});
  for (int k = 0; k < m; ++k) t.neg_sims.push_back(sim(rng));
  if (weighted) {
    std::uniform_real_distribution<double> w(0.1, 1.0);
    std::vector<double> weights(m);
    double total = 0.0;
    for (double& x : weights) total += (x = w(rng));
    for (double& x : weights) x /= total;
    t.neg_weights = weights;
  }
  return t;
}

}  // namespace

TEST_CASE("triplet_loss examples") {
  LossConfig cfg = config(LossKind::Triplet);
  cfg.eta = 0.5;
  CHECK(triplet_loss(triple(0.2, {0.2}), cfg).value == doctest::Approx(0.5));
  cfg.eta = 0.1;
  CHECK(triplet_loss(triple(1.0, {-1.0}), cfg).value == 0.0);
  cfg.eta = 0.2;
  CHECK(triplet_loss(triple(0.0, {0.3}), cfg).value == doctest::Approx(0.8));
  CHECK_THROWS_AS(triplet_loss(triple(0.0, {0.1, 0.2}), cfg), Error);
}

TEST_CASE("nce_loss examples") {
  const LossConfig cfg = config(LossKind::NCE);
  CHECK(nce_loss(triple(0.4, {0.4, 0.4, 0.4}), cfg).value ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const double saturated = nce_loss(triple(0.5, {-49.5}), cfg).value;
  CHECK(saturated <= 1e-20);
  CHECK(saturated == doctest::Approx(kSaturatedOracle).epsilon(1e-12));
  CHECK(nce_loss(triple(0.0, {0.3, -0.1}), cfg).value ==
        doctest::Approx(kTwoNegativeOracle).epsilon(1e-15));
}

TEST_CASE("nce_loss stays finite for extreme arguments") {
  LossConfig cfg = config(LossKind::NCE);
  cfg.temperature = 1e-3;
  const LossValue big = nce_loss(triple(-1.0, {1.0}), cfg);
  CHECK(std::isfinite(big.value));
  CHECK(big.value == doctest::Approx(2000.0).epsilon(1e-12));
  CHECK(big.d_neg[0] == doctest::Approx(1000.0).epsilon(1e-12));
}

TEST_CASE("large_m_nce_loss examples") {
  LossConfig cfg = config(LossKind::LargeMNCE);
  CHECK(large_m_nce_loss(0.7, std::exp(0.7), cfg).value == doctest::Approx(std::log(2.0)));
  cfg.q = 1e-12;
  CHECK(large_m_nce_loss(0.7, 3.0, cfg).value <= 1e-11);

  std::mt19937_64 rng(4);
  LossConfig both = config(LossKind::NCE);
  both.temperature = 0.5;
  for (int trial = 0; trial < 50; ++trial) {
    const SimilarityTriple t = random_triple(rng, 1 + trial % 20, trial % 2 == 0);
    const LossValue a = large_m_nce_from_negatives(t, both);
    const LossValue b = nce_loss(t, both);
    CHECK(a.value == doctest::Approx(b.value).epsilon(1e-12));
    CHECK(a.d_pos == doctest::Approx(b.d_pos).epsilon(1e-12));
  }
}

TEST_CASE("debiased_nce_loss examples") {
  LossConfig cfg = config(LossKind::DebiasedNCE);
  SUBCASE("zero prior reduces to nce") {
    cfg.tau_plus = 0.0;
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> sim(0.0, 0.5);
    for (int trial = 0; trial < 50; ++trial) {
      SimilarityTriple t = triple(sim(rng), {sim(rng), sim(rng), sim(rng)});
      CHECK(debiased_nce_loss(t, cfg).value == doctest::Approx(nce_loss(t, cfg).value).epsilon(1e-12));
    }
  }
  SUBCASE("hand-evaluated value at v = 0") {
    cfg.tau_plus = 0.5;
    CHECK(debiased_nce_loss(triple(0.1, {0.1, 0.1}), cfg).value ==
          doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }
  SUBCASE("clamp zeroes the negative gradient") {
    cfg.tau_plus = 0.5;
    const LossValue v = debiased_nce_loss(triple(1.0, {-1.0, -1.0}), cfg);
    CHECK(v.value == doctest::Approx(std::log1p(std::exp(-1.0))));
    CHECK(v.d_neg[0] == 0.0);
    CHECK(v.d_neg[1] == 0.0);
    CHECK(v.d_pos == 0.0);
  }
}

TEST_CASE("upper_bound_loss examples") {
  CHECK(upper_bound_loss(triple(0.3, {0.3, 0.3})).value == doctest::Approx(0.0));
  CHECK(upper_bound_loss(triple(1.0, {-1.0})).value == -2.0);
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    const SimilarityTriple t = random_triple(rng, 5, true);
    double direct = -t.pos_sim;
    for (int k = 0; k < 5; ++k) direct += (*t.neg_weights)[k] * t.neg_sims[k];
    CHECK(upper_bound_loss(t).value == doctest::Approx(direct).epsilon(1e-14));
  }
}

TEST_CASE("degenerate_value") {
  LossConfig cfg = config(LossKind::NCE);
  CHECK(degenerate_value(cfg) == doctest::Approx(std::log(2.0)));
  cfg.q = 16;
  CHECK(degenerate_value(cfg) == doctest::Approx(std::log(17.0)));
  CHECK(degenerate_value(config(LossKind::UpperBound)) == 0.0);
  LossConfig triplet = config(LossKind::Triplet);
  triplet.eta = 0.3;
  CHECK(degenerate_value(triplet) == doctest::Approx(0.3));
  for (LossKind kind : {LossKind::Triplet, LossKind::NCE, LossKind::LargeMNCE,
                        LossKind::DebiasedNCE, LossKind::UpperBound}) {
    const LossConfig c = config(kind);
    CHECK(evaluate_loss(triple(0.2, {0.2}), c).value == doctest::Approx(degenerate_value(c)));
  }
}

TEST_CASE("validation") {
  CHECK_THROWS_AS(triple(1.5, {0.0}).validate(), Error);
  SimilarityTriple bad_weights = triple(0.0, {0.1, 0.2});
  bad_weights.neg_weights = std::vector<double>{0.5, 0.6};
  CHECK_THROWS_AS(bad_weights.validate(), Error);
  CHECK_THROWS_AS(loss_kind_from_string("hinge"), Error);
  for (LossKind kind : {LossKind::Triplet, LossKind::NCE, LossKind::LargeMNCE,
                        LossKind::DebiasedNCE, LossKind::UpperBound})
    CHECK(loss_kind_from_string(to_string(kind)) == kind);
}

TEST_CASE("property: monotone in each similarity and bounded below") {
  std::mt19937_64 rng(33);
  for (LossKind kind : {LossKind::Triplet, LossKind::NCE, LossKind::LargeMNCE,
                        LossKind::DebiasedNCE, LossKind::UpperBound}) {
    const LossConfig cfg = config(kind);
    const int m = kind == LossKind::Triplet ? 1 : 4;
    for (int trial = 0; trial < 100; ++trial) {
      SimilarityTriple t = random_triple(rng, m, false);
      t.pos_sim = std::clamp(t.pos_sim, -0.9, 0.9);
      for (double& s : t.neg_sims) s = std::clamp(s, -0.9, 0.9);
      const double base = evaluate_loss(t, cfg).value;
      SimilarityTriple up = t;
      up.neg_sims[trial % m] += 0.05;
      CHECK(evaluate_loss(up, cfg).value >= base - 1e-12);
      SimilarityTriple better = t;
      better.pos_sim += 0.05;
      CHECK(evaluate_loss(better, cfg).value <= base + 1e-12);
      if (kind == LossKind::NCE) CHECK(base >= 0.0);
      if (kind == LossKind::UpperBound) CHECK((base >= -2.0 && base <= 2.0));
    }
  }
}

TEST_CASE("property: midpoint convexity in v") {
  std::mt19937_64 rng(8);
  for (LossKind kind : {LossKind::NCE, LossKind::UpperBound, LossKind::Triplet}) {
    const LossConfig cfg = config(kind);
    const int m = kind == LossKind::Triplet ? 1 : 3;
    for (int trial = 0; trial < 100; ++trial) {
      const SimilarityTriple a = random_triple(rng, m, false);
      SimilarityTriple b = random_triple(rng, m, false);
      b.pos_sim = a.pos_sim;
      SimilarityTriple mid = a;
      for (int k = 0; k < m; ++k) mid.neg_sims[k] = 0.5 * (a.neg_sims[k] + b.neg_sims[k]);
      const double lhs = evaluate_loss(mid, cfg).value;
      const double rhs = 0.5 * (evaluate_loss(a, cfg).value + evaluate_loss(b, cfg).value);
      CHECK(lhs <= rhs + 1e-9);
    }
  }
}

TEST_CASE("property: Jensen direction for NCE") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> v(0.0, 0.4);
  const LossConfig cfg = config(LossKind::NCE);
  double mean_loss = 0.0;
  double mean_v = 0.0;
  const int draws = 20000;
  const int m = 4;
  for (int n = 0; n < draws; ++n) {
    SimilarityTriple t = triple(0.0, {});
    for (int k = 0; k < m; ++k) {
      const double x = v(rng);
      t.neg_sims.push_back(x);
      mean_v += x;
    }
    mean_loss += nce_loss(t, cfg).value;
  }
  mean_loss /= draws;
  mean_v /= draws * m;
  const double at_mean = nce_loss(triple(0.0, std::vector<double>(m, mean_v)), cfg).value;
  CHECK(mean_loss > at_mean);
}

TEST_CASE("property: analytic gradients match finite differences") {
  using otneg::testing::central_difference;
  using otneg::testing::relative_error;
  std::mt19937_64 rng(71);
  const double h = 1e-5;
  for (LossKind kind : {LossKind::Triplet, LossKind::NCE, LossKind::LargeMNCE,
                        LossKind::DebiasedNCE, LossKind::UpperBound}) {
    LossConfig cfg = config(kind);
    cfg.temperature = kind == LossKind::Triplet || kind == LossKind::UpperBound ? 1.0 : 0.5;
    cfg.q = 3.0;
    cfg.tau_plus = 0.1;
    int checked = 0;
    for (int trial = 0; checked < 100 && trial < 1000; ++trial) {
      const int m = kind == LossKind::Triplet ? 1 : 1 + trial % 6;
      SimilarityTriple t = random_triple(rng, m, trial % 2 == 1);
      t.pos_sim *= 0.99;
      for (double& s : t.neg_sims) s *= 0.99;
      if (kind == LossKind::Triplet &&
          std::abs(2.0 * (t.neg_sims[0] - t.pos_sim) + cfg.eta) < 1e-3)
        continue;
      if (kind == LossKind::DebiasedNCE) {
        double est = 0.0;
        for (int k = 0; k < m; ++k)
          est += t.weight(k) * std::exp((t.neg_sims[k] - t.pos_sim) / cfg.temperature);
        const double g = (est - cfg.tau_plus) / (1.0 - cfg.tau_plus);
        if (std::abs(g - std::exp(-1.0 / cfg.temperature)) < 1e-3) continue;
      }
      ++checked;
      const LossValue analytic = evaluate_loss(t, cfg);
      const double d_pos = central_difference(
          [&](double x) {
            SimilarityTriple s = t;
            s.pos_sim = x;
            return evaluate_loss(s, cfg).value;
          },
          t.pos_sim, h);
      CHECK(relative_error(analytic.d_pos, d_pos) <= 1e-4);
      for (int k = 0; k < m; ++k) {
        const double d_neg = central_difference(
            [&](double x) {
              SimilarityTriple s = t;
              s.neg_sims[k] = x;
              return evaluate_loss(s, cfg).value;
            },
            t.neg_sims[k], h);
        CHECK(relative_error(analytic.d_neg[k], d_neg) <= 1e-4);
      }
    }
    CHECK(checked == 100);
  }
}
