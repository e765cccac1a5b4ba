#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "otneg/checkpoint.hpp"
#include "otneg/csv_io.hpp"
#include "otneg/harness.hpp"
#include "otneg/run_config.hpp"
#include "support/oracles.hpp"

using namespace otneg;
namespace fs = std::filesystem;

namespace {

Experiment tiny_experiment() {
  Experiment exp;
  exp.data.num_classes = 3;
  exp.data.ambient_dim = 4;
  exp.data.samples_per_class = 40;
  exp.train.encoder.hidden = {8};
  exp.train.encoder.output_dim = 3;
  exp.train.batch_size = 16;
  exp.train.m = 4;
  exp.train.epochs = 3;
  exp.train.eval_every = 1;
  exp.train.probe_size = 60;
  return exp;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("otneg_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("TrainConfig validation") {
  Experiment exp = tiny_experiment();
  CHECK_NOTHROW(exp.train.validate(exp.data.num_classes * exp.data.samples_per_class));
  exp.train.epochs = 0;
  CHECK_THROWS_AS(exp.train.validate(120), Error);
  exp = tiny_experiment();
  exp.train.m = 15;
  CHECK_THROWS_AS(exp.train.validate(120), Error);
}

TEST_CASE("train: zero learning rate leaves params bit-identical") {
  Experiment exp = tiny_experiment();
  exp.train.optimizer.lr = 0.0;
  exp.train.negative_mode = NegativeMode::Weight;
  const LabeledDataset data = generate(exp.data);
  const TrainState start = initial_state(exp.train, data.dim());
  const TrainResult result = train(exp.train, data.inputs, exp.data.augment_noise_std, nullptr);
  CHECK(result.state.params == start.params);
  CHECK(result.state.epoch == 3);
}

TEST_CASE("train: deterministic and label-blind") {
  const Experiment exp = tiny_experiment();
  const LabeledDataset data = generate(exp.data);
  const Evaluator evaluator(data, exp.train.probe_size);
  const TrainResult a = train(exp.train, data.inputs, exp.data.augment_noise_std, &evaluator);
  const TrainResult b = train(exp.train, data.inputs, exp.data.augment_noise_std, &evaluator);
  CHECK(a.state.params == b.state.params);
  CHECK(a.state.optimizer == b.state.optimizer);
  REQUIRE(a.metrics.size() == 4);
  CHECK(a.metrics.front().epoch == 0);
  CHECK(a.metrics.back().epoch == 3);
  for (const MetricsRecord& r : a.metrics) {
    CHECK((r.readout_accuracy >= 0.0 && r.readout_accuracy <= 1.0));
    CHECK(r.representation_variance >= 0.0);
  }

  // Zeroed labels only change what the evaluator reports.
  LabeledDataset blind = data;
  std::fill(blind.labels.begin(), blind.labels.end(), 0);
  const TrainResult c = train(exp.train, blind.inputs, exp.data.augment_noise_std, nullptr);
  const std::string line = config_line(exp);
  CHECK(checkpoint_to_string(a.state, line) == checkpoint_to_string(c.state, line));
}

TEST_CASE("train: resume continues the same trajectory") {
  Experiment exp = tiny_experiment();
  const LabeledDataset data = generate(exp.data);
  const TrainResult full = train(exp.train, data.inputs, exp.data.augment_noise_std, nullptr);

  TrainConfig first = exp.train;
  first.epochs = 1;
  const TrainResult partial = train(first, data.inputs, exp.data.augment_noise_std, nullptr);
  const Checkpoint saved =
      checkpoint_from_string(checkpoint_to_string(partial.state, config_line(exp)));
  const TrainResult rest =
      resume(exp.train, saved.state, data.inputs, exp.data.augment_noise_std, nullptr);
  CHECK(rest.state.params == full.state.params);
}

TEST_CASE("sample and weight modes agree in expectation") {
  std::mt19937_64 rng(10);
  const EncoderParams params = EncoderParams::glorot({4, 6, 3}, Nonlinearity::Tanh, rng);
  const Matrix anchors = otneg::testing::random_unit_rows(8, 4, rng);
  const Matrix positives = anchors + 0.1 * otneg::testing::random_unit_rows(8, 4, rng);
  EmbeddingBatch batch = forward(params, anchors, nullptr);
  const NegativeDistribution dist = tilt_negative_distribution(batch, {2.0});
  LossConfig loss;
  loss.kind = LossKind::UpperBound;  // linear in the negatives: exact agreement in expectation
  const double weighted =
      batch_objective(params, anchors, positives, dist, nullptr, NegativeMode::Weight, loss, false)
          .loss;
  double sampled = 0.0;
  const int seeds = 400;
  for (int s = 0; s < seeds; ++s) {
    const IndexMatrix draws = sample_negatives(dist, 8, s);
    sampled += batch_objective(params, anchors, positives, dist, &draws, NegativeMode::Sample, loss,
                               false)
                   .loss;
  }
  CHECK(sampled / seeds == doctest::Approx(weighted).epsilon(0.02).scale(1.0));
}

TEST_CASE("negative_distribution_for falls back to the tilt when Sinkhorn stalls") {
  std::mt19937_64 rng(6);
  EmbeddingBatch batch;
  batch.vectors = otneg::testing::random_unit_rows(12, 3, rng);
  SamplerConfig sampler;
  sampler.sinkhorn.epsilon = 0.05;
  sampler.sinkhorn.max_iters = 1;
  bool fell_back = false;
  const NegativeDistribution dist = negative_distribution_for(sampler, batch, &fell_back);
  CHECK(fell_back);
  const NegativeDistribution tilt = tilt_negative_distribution(batch, {1.0 / 0.05});
  CHECK(dist.conditional == tilt.conditional);
}

TEST_CASE("Evaluator same-class rate and representation variance") {
  Experiment exp = tiny_experiment();
  const LabeledDataset data = generate(exp.data);
  const Evaluator evaluator(data, 60);
  EmbeddingBatch batch;
  batch.vectors = Matrix::Identity(6, 6);
  const NegativeDistribution uniform = uniform_negative_distribution(batch);
  // Rows 0..5 cycle through three labels, so each anchor has one same-label
  // partner among five allowed negatives.
  CHECK(evaluator.same_class_rate(uniform, 6) == doctest::Approx(0.2));
  CHECK(representation_variance(Matrix::Constant(5, 3, 0.4)) == 0.0);
  Matrix two(2, 1);
  two << -1.0, 1.0;
  CHECK(representation_variance(two) == doctest::Approx(1.0));
}

TEST_CASE("dump_diagnostics") {
  const fs::path dir = scratch_dir("diag");
  Experiment exp = tiny_experiment();
  const LabeledDataset data = generate(exp.data);
  const TrainState state = initial_state(exp.train, data.dim());
  const Matrix batch = data.inputs.topRows(16);
  const std::vector<int> labels(data.labels.begin(), data.labels.begin() + 16);
  const DiagnosticsSummary summary =
      dump_diagnostics(state.params, batch, &labels, exp.train.sampler, dir.string());
  CHECK(fs::exists(dir / "similarity_vs_conditional.csv"));
  CHECK(fs::exists(dir / "same_class_by_rank.csv"));
  CHECK(summary.total_by_rank.size() == 15);
  CHECK((summary.monotone_fraction >= 0.0 && summary.monotone_fraction <= 1.0));

  SUBCASE("identical embeddings give a flat conditional") {
    EncoderParams flat({4, 3}, Nonlinearity::Tanh);
    flat.bias(0) << 1.0, 0.0, 0.0;
    const fs::path flat_dir = scratch_dir("diag_flat");
    dump_diagnostics(flat, batch, nullptr, exp.train.sampler, flat_dir.string());
    const CsvTable table = read_csv((flat_dir / "similarity_vs_conditional.csv").string(), true);
    const auto col = std::find(table.header.begin(), table.header.end(), "conditional") -
                     table.header.begin();
    REQUIRE(col < static_cast<long>(table.header.size()));
    for (const auto& row : table.rows)
      CHECK(parse_double(row[col]) == doctest::Approx(1.0 / 15.0).epsilon(1e-9));
    CHECK_FALSE(fs::exists(flat_dir / "same_class_by_rank.csv"));
  }
}

TEST_CASE("metrics CSV round-trip") {
  const fs::path dir = scratch_dir("metrics");
  std::vector<MetricsRecord> records(2);
  records[0] = {0, 0.1 + 0.2, 0.5, 1.0 / 3.0, -0.25, 0.1, 0};
  records[1] = {10, 0.7, 0.875, 1e-7, 0.5, 0.2, 3};
  const std::string path = (dir / "metrics.csv").string();
  write_metrics_csv(path, records, config_line(tiny_experiment()));
  const std::string text = slurp(path);
  CHECK(text.rfind("# otneg-metrics v1\n# config: {", 0) == 0);
  const std::vector<MetricsRecord> back = read_metrics_csv(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].train_loss == 0.1 + 0.2);
  CHECK(back[0].representation_variance == 1.0 / 3.0);
  CHECK(back[1].sinkhorn_fallbacks == 3);
}

TEST_CASE("checkpoint round-trip and tamper detection") {
  const fs::path dir = scratch_dir("ckpt");
  const Experiment exp = tiny_experiment();
  const LabeledDataset data = generate(exp.data);
  const TrainResult result = train(exp.train, data.inputs, exp.data.augment_noise_std, nullptr);
  const std::string path = (dir / "state.json").string();
  save_checkpoint(path, result.state, config_line(exp));
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.state.params == result.state.params);
  CHECK(back.state.optimizer == result.state.optimizer);
  CHECK(back.state.epoch == result.state.epoch);
  CHECK(back.state.rng == result.state.rng);
  CHECK(back.config_line == config_line(exp));
  CHECK(checkpoint_to_string(back.state, back.config_line) == slurp(path));

  std::string text = slurp(path);
  const auto at = text.find("\"epoch\": 3");
  REQUIRE(at != std::string::npos);
  text.replace(at, 10, "\"epoch\": 4");
  try {
    checkpoint_from_string(text);
    FAIL("expected a checksum error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Checksum);
  }
  CHECK_THROWS_AS(checkpoint_from_string("not json"), Error);
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("config parsing, overrides and hashing") {
  const ConfigMap file = parse_config_text(
      "# comment\nsampler = tilt\n tilt.beta=3.5 # trailing\n\nencoder.hidden = 32, 16\n");
  Experiment exp;
  apply_config(exp, file);
  CHECK(exp.train.sampler.kind == SamplerKind::Tilt);
  CHECK(exp.train.sampler.beta == 3.5);
  CHECK(exp.train.encoder.hidden == std::vector<int>{32, 16});

  apply_config(exp, {{"tilt.beta", "4"}, {"sinkhorn.epsilon_scaling", "0.5"}});
  CHECK(exp.train.sampler.beta == 4.0);
  CHECK(exp.train.sampler.sinkhorn.epsilon_scaling == 0.5);

  CHECK_THROWS_AS(apply_config(exp, {{"no.such.key", "1"}}), Error);
  CHECK_THROWS_AS(apply_config(exp, {{"m", "many"}}), Error);
  CHECK_THROWS_AS(parse_config_text("just words\n"), Error);
  CHECK_THROWS_AS(parse_config_file("/nonexistent/otneg.cfg"), Error);

  const Experiment back = experiment_from_config_line(config_line(exp));
  CHECK(config_line(back) == config_line(exp));
  CHECK(config_hash(back) == config_hash(exp));
  CHECK(config_hash(exp).size() == 16);
  CHECK(config_hash(exp) != config_hash(Experiment{}));
  CHECK(to_config_map(exp).size() == config_keys().size());
}
