// Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails. Pass criterion numbers as arguments to run a subset.
#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "otneg/checkpoint.hpp"
#include "otneg/harness.hpp"
#include "otneg/run_config.hpp"
#include "support/oracles.hpp"

using namespace otneg;
using otneg::testing::random_costs;
using otneg::testing::random_unit_rows;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), pattern, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

EmbeddingBatch batch_of(Matrix vectors) {
  EmbeddingBatch b;
  b.vectors = std::move(vectors);
  return b;
}

// 1. Sinkhorn correctness on 64x64 masked costs.
Outcome sinkhorn_correctness() {
  std::mt19937_64 rng(1001);
  std::bernoulli_distribution extra_mask(0.1);
  const Histogram h = Histogram::uniform(64);
  SinkhornConfig cfg;
  cfg.epsilon = 0.05;
  double worst_error = 0.0, worst_residual = 0.0, slowest = 0.0;
  int failures = 0;
  for (int trial = 0; trial < 50; ++trial) {
    MaskedCost cost = MaskedCost::unmasked(random_costs(64, rng));
    for (int i = 0; i < 64; ++i)
      for (int j = 0; j < 64; ++j) cost.forbidden(i, j) = i == j || extra_mask(rng);
    const auto start = std::chrono::steady_clock::now();
    const Coupling c = sinkhorn(cost, h, h, cfg);
    const double elapsed = seconds_since(start);
    const double residual = schroedinger_residual(c, cost, h, h, cfg.epsilon);
    worst_error = std::max(worst_error, c.marginal_error);
    worst_residual = std::max(worst_residual, residual);
    slowest = std::max(slowest, elapsed);
    if (!c.converged || c.marginal_error > 1e-6 || residual > 1e-9 || elapsed > 1.0) ++failures;
  }
  return {failures == 0,
          fmt("50 solves, max L1 error %.2e, max residual %.2e, slowest %.4f s", worst_error,
              worst_residual, slowest)};
}

// 2. Exact-OT limit against permutation enumeration.
Outcome exact_ot_limit() {
  std::mt19937_64 rng(2002);
  std::uniform_int_distribution<int> size(2, 6);
  int within = 0;
  int converged = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = size(rng);
    const MaskedCost cost = MaskedCost::unmasked(random_costs(n, rng));
    const Histogram h = Histogram::uniform(n);
    SinkhornConfig cfg;
    cfg.epsilon = 1e-3 * cost.max_allowed_cost();
    cfg.max_iters = 100000;
    cfg.epsilon_scaling = 0.5;
    const Coupling c = sinkhorn(cost, h, h, cfg);
    const double exact = otneg::testing::permutation_oracle(cost.costs);
    const double rel = std::abs(c.transport_cost - exact) / exact;
    worst = std::max(worst, rel);
    converged += c.converged;
    within += c.converged && rel <= 0.05;
  }
  return {within == 100, fmt("%.0f/100 within 5%% (%.0f converged), worst relative error %.2e",
                             within, converged, worst)};
}

// 3. OT conditionals have the tilt form with shared column weights.
Outcome tilt_form() {
  std::mt19937_64 rng(3003);
  const std::vector<double> grid{0.1, 0.3, 0.5, 0.7, 1.0};
  double worst = 0.0;
  int converged = 0;
  int bad = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const EmbeddingBatch b = batch_of(random_unit_rows(32, 4, rng));
    SinkhornConfig cfg;
    cfg.epsilon = grid[trial % grid.size()];
    const NegativeDistribution dist = ot_negative_distribution(b, cfg);
    if (!dist.converged) continue;
    ++converged;
    const double residual = fit_tilt_form(b, dist, cfg.epsilon).max_residual;
    worst = std::max(worst, residual);
    bad += residual > 1e-6;
  }
  return {bad == 0 && converged == 50,
          fmt("%.0f/50 batches converged, max log-linear residual %.2e", converged, worst)};
}

// 4. Hardness is monotone in epsilon and dominates the uniform sampler.
Outcome hardness_control() {
  std::mt19937_64 rng(4004);
  const std::vector<double> grid{0.05, 0.1, 0.3, 0.5, 1.0, 10.0};
  int monotone_violations = 0;
  int dominance_violations = 0;
  double smallest_margin = 1.0;
  for (int trial = 0; trial < 50; ++trial) {
    const EmbeddingBatch b = batch_of(random_unit_rows(64, 8, rng));
    const double uniform = mean_negative_similarity(b, uniform_negative_distribution(b));
    double previous = 2.0;
    for (double eps : grid) {
      SinkhornConfig cfg;
      cfg.epsilon = eps;
      cfg.tolerance = 1e-9;
      const double value = mean_negative_similarity(b, ot_negative_distribution(b, cfg));
      monotone_violations += value > previous + 1e-12;
      dominance_violations += value <= uniform;
      smallest_margin = std::min(smallest_margin, value - uniform);
      previous = value;
    }
  }
  return {monotone_violations == 0 && dominance_violations == 0,
          fmt("50 batches x 6 eps: %.0f monotonicity violations, %.0f dominance violations, "
              "smallest margin over uniform %.2e",
              monotone_violations, dominance_violations, smallest_margin)};
}

// 5. Collapse under the unregularized worst-case coupling.
Outcome degeneracy() {
  Experiment exp;
  exp.train.loss.kind = LossKind::NCE;
  exp.train.loss.q = 1.0;
  exp.train.epochs = 200;
  exp.train.eval_every = 10;
  const DegeneracyReport nce = demo_degeneracy(exp);
  const double gap = std::abs(nce.final_loss - std::log(2.0));

  Experiment ub = exp;
  ub.train.loss.kind = LossKind::UpperBound;
  const DegeneracyReport upper = demo_degeneracy(ub);

  const bool pass = nce.final_variance < 1e-3 && gap < 1e-2 && std::abs(upper.final_loss) < 1e-2;
  return {pass, fmt("NCE(q=1) after %.0f epochs: variance %.2e, |loss - log 2| %.2e; "
                    "upper-bound run final loss %.2e",
                    exp.train.epochs, nce.final_variance, gap, upper.final_loss)};
}

// 6. End-to-end gradients against central differences, coupling frozen.
Outcome gradient_integrity() {
  std::mt19937_64 rng(6006);
  std::uniform_int_distribution<int> in_dim(2, 8), hidden(2, 16), out_dim(2, 4), batch(3, 8);
  std::uniform_real_distribution<double> eps_dist(0.1, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::vector<LossKind> kinds{LossKind::Triplet, LossKind::NCE, LossKind::LargeMNCE,
                                    LossKind::DebiasedNCE, LossKind::UpperBound};
  const double h = 1e-5;
  double worst = 0.0;
  int checked = 0;
  int skipped = 0;
  int failures = 0;
  while (checked < 100) {
    const int n = batch(rng);
    const int D = in_dim(rng);
    const std::vector<int> dims{D, hidden(rng), out_dim(rng)};
    const Nonlinearity act = checked % 2 ? Nonlinearity::Tanh : Nonlinearity::SmoothReLU;
    const EncoderParams params = EncoderParams::glorot(dims, act, rng);
    Matrix anchors(n, D), positives(n, D);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < D; ++k) {
        anchors(i, k) = gauss(rng);
        positives(i, k) = anchors(i, k) + 0.3 * gauss(rng);
      }
    const EmbeddingBatch emb = forward(params, anchors, nullptr);
    const Matrix pos = forward(params, positives, nullptr).vectors;
    SinkhornConfig sk;
    sk.epsilon = eps_dist(rng);
    const NegativeDistribution dist = ot_negative_distribution(emb, sk);

    LossConfig loss;
    loss.kind = kinds[checked % kinds.size()];
    loss.q = 2.0;
    loss.temperature = 0.5;
    loss.tau_plus = 0.1;

    // Skip instances within 1e-3 of a hinge, a clamp, or the projection's
    // singularity at a zero pre-projection output.
    ForwardTape tape_a, tape_p;
    forward(params, anchors, &tape_a);
    forward(params, positives, &tape_p);
    bool near_kink = std::min(tape_a.norms.minCoeff(), tape_p.norms.minCoeff()) < 1e-3;
    for (int i = 0; i < n && !near_kink; ++i) {
      const double ps = emb.vectors.row(i).dot(pos.row(i));
      double est = 0.0;
      for (int j = 0; j < n; ++j) {
        if (dist.conditional(i, j) <= 0.0) continue;
        const double ns = emb.vectors.row(i).dot(emb.vectors.row(j));
        if (loss.kind == LossKind::Triplet && std::abs(2 * (ns - ps) + loss.eta) < 1e-3)
          near_kink = true;
        est += dist.conditional(i, j) * std::exp((ns - ps) / loss.temperature);
      }
      const double g = (est - loss.tau_plus) / (1 - loss.tau_plus);
      if (loss.kind == LossKind::DebiasedNCE &&
          std::abs(g - std::exp(-1 / loss.temperature)) < 1e-3)
        near_kink = true;
    }
    if (near_kink) {
      ++skipped;
      continue;
    }
    ++checked;

    const BatchObjective analytic = batch_objective(params, anchors, positives, dist, nullptr,
                                                    NegativeMode::Weight, loss, true);
    double instance_worst = 0.0;
    auto loss_at = [&](std::size_t k, double delta) {
      EncoderParams moved = params;
      moved.flat()[k] += delta;
      return batch_objective(moved, anchors, positives, dist, nullptr, NegativeMode::Weight, loss,
                             false)
          .loss;
    };
    for (std::size_t k = 0; k < params.size(); ++k) {
      // Fourth-order central stencil.
      const double numeric = (8.0 * (loss_at(k, h) - loss_at(k, -h)) -
                              (loss_at(k, 2 * h) - loss_at(k, -2 * h))) /
                             (12.0 * h);
      const double a = analytic.gradient[k];
      const double scale = std::max(std::abs(a), std::abs(numeric));
      // Components below 1e-6 are compared absolutely: their finite-difference
      // value is dominated by round-off.
      const double err = scale >= 1e-6 ? std::abs(a - numeric) / scale
                                       : std::abs(a - numeric) / 1e-6;
      instance_worst = std::max(instance_worst, err);
    }
    worst = std::max(worst, instance_worst);
    failures += instance_worst > 1e-4;
  }
  return {failures == 0, fmt("100 instances (5 losses, %.0f skipped near kinks), %.0f failing, "
                             "worst relative error %.2e",
                             skipped, failures, worst)};
}

// 7. Downstream readout ordering across seeds.
Outcome downstream_ordering() {
  const auto start = std::chrono::steady_clock::now();
  Experiment base;
  base.train.epochs = 100;
  base.train.eval_every = 100;
  base.train.loss.temperature = 0.5;
  const LabeledDataset data = generate(base.data);
  const Evaluator evaluator(data, base.train.probe_size);
  const std::vector<double> grid{0.1, 0.3, 0.5, 0.7, 1.0};
  const int seeds = 5;

  auto mean_accuracy = [&](SamplerKind kind, double param) {
    double total = 0.0;
    for (int s = 0; s < seeds; ++s) {
      TrainConfig cfg = base.train;
      cfg.seed = static_cast<std::uint64_t>(s);
      cfg.sampler.kind = kind;
      if (kind == SamplerKind::Tilt) cfg.sampler.beta = param;
      if (kind == SamplerKind::EntropicOT) cfg.sampler.sinkhorn.epsilon = param;
      const TrainResult run = train(cfg, data.inputs, base.data.augment_noise_std, &evaluator);
      total += run.metrics.back().readout_accuracy;
    }
    return total / seeds;
  };

  const double uniform = mean_accuracy(SamplerKind::Uniform, 0.0);
  std::cout << "  criterion 7: uniform mean accuracy " << uniform << "\n";
  double best_eps = grid.front();
  double best_ot = -1.0;
  for (double eps : grid) {
    const double acc = mean_accuracy(SamplerKind::EntropicOT, eps);
    std::cout << "  criterion 7: ot eps=" << eps << " mean accuracy " << acc << "\n";
    if (acc > best_ot) {
      best_ot = acc;
      best_eps = eps;
    }
  }
  const double tilt = mean_accuracy(SamplerKind::Tilt, 1.0 / best_eps);
  std::cout << "  criterion 7: tilt beta=" << 1.0 / best_eps << " mean accuracy " << tilt << "\n";
  const double elapsed = seconds_since(start);
  const bool pass = best_ot >= uniform && std::abs(best_ot - tilt) <= 0.02 && elapsed <= 1800.0;
  return {pass, fmt("OT(best eps %.1f) %.4f vs uniform %.4f, |OT - tilt| %.4f", best_eps, best_ot,
                    uniform, std::abs(best_ot - tilt)) +
                    fmt(", %.0f s", elapsed)};
}

// 8. Uniform, Tilt(0) and OT(1e6) draw negatives from the same distribution.
Outcome sampler_equivalence() {
  std::mt19937_64 rng(8008);
  const int n = 16;
  const int m = 2000;
  double min_p = 1.0;
  int failures = 0;
  for (int b = 0; b < 20; ++b) {
    const EmbeddingBatch batch = batch_of(random_unit_rows(n, 4, rng));
    SinkhornConfig flat;
    flat.epsilon = 1e6;
    const std::vector<NegativeDistribution> dists{uniform_negative_distribution(batch),
                                                  tilt_negative_distribution(batch, {0.0}),
                                                  ot_negative_distribution(batch, flat)};
    std::vector<std::vector<double>> counts;
    for (std::size_t s = 0; s < dists.size(); ++s) {
      const IndexMatrix draws = sample_negatives(dists[s], m, 100 * b + s);
      std::vector<double> cell(n * n, 0.0);
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < m; ++k) cell[i * n + draws(i, k)] += 1.0;
      counts.push_back(cell);
    }
    // Two-sample chi-square test of homogeneity on the (anchor, negative)
    // cells; each row is an independent multinomial, so the degrees of
    // freedom are n * (allowed per row - 1).
    for (std::size_t x = 0; x < counts.size(); ++x) {
      for (std::size_t y = x + 1; y < counts.size(); ++y) {
        double stat = 0.0;
        int dof = 0;
        for (int i = 0; i < n; ++i) {
          int used = 0;
          for (int j = 0; j < n; ++j) {
            const double a = counts[x][i * n + j];
            const double c = counts[y][i * n + j];
            if (a + c == 0.0) continue;
            const double expected = (a + c) / 2.0;
            stat += (a - expected) * (a - expected) / expected +
                    (c - expected) * (c - expected) / expected;
            ++used;
          }
          dof += used - 1;
        }
        const double p = boost::math::cdf(
            boost::math::complement(boost::math::chi_squared(dof), stat));
        min_p = std::min(min_p, p);
        failures += p <= 0.01;
      }
    }
  }
  return {failures == 0,
          fmt("20 batches x 3 pairs, %.0f tests with p <= 0.01, smallest p %.4f", failures, min_p)};
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 9. Bit-identical metrics and checkpoints across repeated runs.
Outcome reproducibility() {
  Experiment exp;
  exp.train.epochs = 10;
  exp.train.eval_every = 5;
  const fs::path root = fs::temp_directory_path() / "otneg_acceptance_repro";
  fs::remove_all(root);
  const LabeledDataset data = generate(exp.data);
  const Evaluator evaluator(data, exp.train.probe_size);
  for (const char* name : {"a", "b"}) {
    const fs::path dir = root / name;
    fs::create_directories(dir);
    const TrainResult run = train(exp.train, data.inputs, exp.data.augment_noise_std, &evaluator);
    write_metrics_csv((dir / "metrics.csv").string(), run.metrics, config_line(exp));
    save_checkpoint((dir / "checkpoint.json").string(), run.state, config_line(exp));
  }
  const bool metrics_same = slurp(root / "a" / "metrics.csv") == slurp(root / "b" / "metrics.csv");
  const bool ckpt_same =
      slurp(root / "a" / "checkpoint.json") == slurp(root / "b" / "checkpoint.json");
  const Checkpoint back = load_checkpoint((root / "a" / "checkpoint.json").string());
  const bool round_trip =
      checkpoint_to_string(back.state, back.config_line) == slurp(root / "a" / "checkpoint.json");
  return {metrics_same && ckpt_same && round_trip,
          std::string("metrics ") + (metrics_same ? "identical" : "differ") + ", checkpoints " +
              (ckpt_same ? "identical" : "differ") + ", reload " +
              (round_trip ? "bit-exact" : "not bit-exact")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria{
      {1, {"sinkhorn correctness", sinkhorn_correctness}},
      {2, {"exact-OT limit", exact_ot_limit}},
      {3, {"tilt-form equivalence", tilt_form}},
      {4, {"hardness control", hardness_control}},
      {5, {"degeneracy demonstration", degeneracy}},
      {6, {"gradient integrity", gradient_integrity}},
      {7, {"downstream ordering", downstream_ordering}},
      {8, {"sampler equivalence", sampler_equivalence}},
      {9, {"reproducibility", reproducibility}},
  };
  std::set<int> selected;
  for (int k = 1; k < argc; ++k) selected.insert(std::atoi(argv[k]));

  int failed = 0;
  for (const auto& [number, entry] : criteria) {
    if (!selected.empty() && !selected.count(number)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = entry.second();
    } catch (const std::exception& e) {
      outcome = {false, std::string("threw: ") + e.what()};
    }
    failed += !outcome.pass;
    std::printf("CRITERION %d %s (%s): %s [%.1f s]\n", number, outcome.pass ? "PASS" : "FAIL",
                entry.first, outcome.detail.c_str(), seconds_since(start));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
