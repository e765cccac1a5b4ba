#include "otneg/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "otneg/csv_io.hpp"

namespace otneg {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
// Offsets the evaluation stream away from the training stream.
constexpr std::uint64_t kEvalSeedSalt = 0x9e3779b97f4a7c15ULL;

NegativeDistribution worst_case_distribution(const EmbeddingBatch& batch) {
  const Matrix gram = batch.vectors * batch.vectors.transpose();
  NegativeDistribution out;
  out.conditional = Matrix::Zero(batch.size(), batch.size());
  for (int i = 0; i < batch.size(); ++i) {
    Eigen::Index best = 0;
    gram.row(i).maxCoeff(&best);
    out.conditional(i, best) = 1.0;
  }
  out.epsilon_used = 0.0;
  return out;
}

Matrix rows_of(const Matrix& inputs, const std::vector<int>& idx) {
  Matrix out(idx.size(), inputs.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(r) = inputs.row(idx[r]);
  return out;
}

struct ProbeBatch {
  Matrix anchors;
  Matrix positives;
  Matrix variance_rows;
};

ProbeBatch make_probe(const TrainConfig& cfg, const Matrix& inputs, double noise) {
  ProbeBatch probe;
  const int rows = std::min<int>(cfg.batch_size, static_cast<int>(inputs.rows()));
  probe.anchors = inputs.topRows(rows);
  std::vector<int> idx(rows);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(cfg.seed ^ kEvalSeedSalt);
  probe.positives = make_positives(inputs, idx, noise, rng);
  probe.variance_rows =
      inputs.topRows(std::min<int>(cfg.probe_size, static_cast<int>(inputs.rows())));
  return probe;
}

MetricsRecord snapshot(const TrainConfig& cfg, const TrainState& state, const ProbeBatch& probe,
                       const Evaluator* evaluator, double epoch_loss, int fallbacks) {
  MetricsRecord rec;
  rec.epoch = state.epoch;
  rec.sinkhorn_fallbacks = fallbacks;

  const EmbeddingBatch probe_embed = forward(state.params, probe.variance_rows, nullptr);
  rec.representation_variance = representation_variance(probe_embed.vectors);

  const EmbeddingBatch batch = forward(state.params, probe.anchors, nullptr);
  bool fell_back = false;
  const NegativeDistribution dist = negative_distribution_for(cfg.sampler, batch, &fell_back);
  rec.mean_negative_similarity = mean_negative_similarity(batch, dist);

  if (std::isnan(epoch_loss)) {
    // Epoch 0 has no training batches yet: report the probe batch loss under
    // the expected-value estimator.
    epoch_loss = batch_objective(state.params, probe.anchors, probe.positives, dist, nullptr,
                                 NegativeMode::Weight, cfg.loss, false)
                     .loss;
  }
  rec.train_loss = epoch_loss;

  if (evaluator) {
    rec.readout_accuracy = evaluator->readout_accuracy(state.params);
    rec.same_class_rate = evaluator->same_class_rate(dist, static_cast<int>(probe.anchors.rows()));
  } else {
    rec.readout_accuracy = kNaN;
    rec.same_class_rate = kNaN;
  }
  return rec;
}

}  // namespace

const char* to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::Uniform: return "uniform";
    case SamplerKind::Tilt: return "tilt";
    case SamplerKind::EntropicOT: return "ot";
    case SamplerKind::WorstCase: return "worst_case";
  }
  return "unknown";
}

SamplerKind sampler_kind_from_string(const std::string& name) {
  for (SamplerKind kind :
       {SamplerKind::Uniform, SamplerKind::Tilt, SamplerKind::EntropicOT, SamplerKind::WorstCase}) {
    if (name == to_string(kind)) return kind;
  }
  throw Error(ErrorKind::Config, "unknown sampler '" + name + "'");
}

const char* to_string(NegativeMode mode) {
  return mode == NegativeMode::Sample ? "sample" : "weight";
}

NegativeMode negative_mode_from_string(const std::string& name) {
  if (name == "sample") return NegativeMode::Sample;
  if (name == "weight") return NegativeMode::Weight;
  throw Error(ErrorKind::Config, "unknown negative mode '" + name + "'");
}

void TrainConfig::validate(int dataset_size) const {
  loss.validate();
  if (sampler.kind == SamplerKind::EntropicOT) sampler.sinkhorn.validate();
  require(sampler.beta >= 0.0, ErrorKind::Config, "beta must be >= 0");
  require(m >= 1, ErrorKind::Config, "m must be >= 1");
  require(batch_size >= m + 2, ErrorKind::Config, "batch_size must be >= m + 2");
  require(batch_size >= 3, ErrorKind::Config, "batch_size must be >= 3");
  require(epochs >= 1, ErrorKind::Config, "epochs must be >= 1");
  require(eval_every >= 1, ErrorKind::Config, "eval_every must be >= 1");
  require(probe_size >= batch_size, ErrorKind::Config, "probe_size must be >= batch_size");
  require(encoder.output_dim >= 2, ErrorKind::Config, "output_dim must be >= 2");
  for (int h : encoder.hidden) require(h >= 1, ErrorKind::Config, "hidden widths must be >= 1");
  require(optimizer.lr >= 0.0 && optimizer.weight_decay >= 0.0 && optimizer.eps > 0.0 &&
              optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 &&
              optimizer.beta2 < 1.0,
          ErrorKind::Config, "invalid optimizer hyper-parameters");
  require(dataset_size >= 2 * batch_size, ErrorKind::Config,
          "dataset must hold at least two batches");
  require(dataset_size >= probe_size, ErrorKind::Config, "probe_size exceeds the dataset");
}

Evaluator::Evaluator(const LabeledDataset& data, int probe_size, ReadoutConfig readout)
    : num_classes_(data.num_classes), readout_(readout) {
  require(probe_size >= 1 && probe_size <= data.size(), ErrorKind::InvalidArgument,
          "probe_size out of range");
  probe_inputs_ = data.inputs.topRows(probe_size);
  probe_labels_.assign(data.labels.begin(), data.labels.begin() + probe_size);
}

double Evaluator::readout_accuracy(const EncoderParams& params) const {
  const EmbeddingBatch embed = forward(params, probe_inputs_, nullptr);
  return linear_readout(embed.vectors, probe_labels_, num_classes_, readout_).accuracy;
}

double Evaluator::same_class_rate(const NegativeDistribution& dist, int batch_rows) const {
  require(batch_rows <= static_cast<int>(probe_labels_.size()), ErrorKind::InvalidArgument,
          "probe batch exceeds the labelled probe set");
  double total = 0.0;
  for (int i = 0; i < batch_rows; ++i)
    for (int j = 0; j < batch_rows; ++j)
      if (probe_labels_[i] == probe_labels_[j]) total += dist.conditional(i, j);
  return total / batch_rows;
}

double representation_variance(const Matrix& embeddings) {
  const Eigen::RowVectorXd mean = embeddings.colwise().mean();
  return (embeddings.rowwise() - mean).array().square().colwise().mean().mean();
}

NegativeDistribution negative_distribution_for(const SamplerConfig& sampler,
                                               const EmbeddingBatch& batch, bool* fell_back) {
  if (fell_back) *fell_back = false;
  switch (sampler.kind) {
    case SamplerKind::Uniform: return uniform_negative_distribution(batch);
    case SamplerKind::Tilt: return tilt_negative_distribution(batch, TiltConfig{sampler.beta});
    case SamplerKind::WorstCase: return worst_case_distribution(batch);
    case SamplerKind::EntropicOT: {
      NegativeDistribution dist = ot_negative_distribution(batch, sampler.sinkhorn);
      if (dist.converged) return dist;
      if (fell_back) *fell_back = true;
      NegativeDistribution tilt =
          tilt_negative_distribution(batch, TiltConfig{1.0 / sampler.sinkhorn.epsilon});
      tilt.converged = false;
      return tilt;
    }
  }
  throw Error(ErrorKind::Config, "unhandled sampler kind");
}

BatchObjective batch_objective(const EncoderParams& params, const Matrix& anchors,
                               const Matrix& positives, const NegativeDistribution& dist,
                               const IndexMatrix* draws, NegativeMode mode,
                               const LossConfig& loss, bool with_gradient) {
  require(anchors.rows() == positives.rows(), ErrorKind::DimensionMismatch,
          "one positive per anchor is required");
  const int n = static_cast<int>(anchors.rows());
  require(dist.conditional.rows() == n && dist.conditional.cols() == n,
          ErrorKind::DimensionMismatch, "negative distribution does not match the batch");
  if (mode == NegativeMode::Sample) {
    require(draws != nullptr && draws->rows() == n, ErrorKind::InvalidArgument,
            "sample mode needs one row of draws per anchor");
  }

  ForwardTape tape_a;
  ForwardTape tape_p;
  const Matrix u = forward(params, anchors, with_gradient ? &tape_a : nullptr).vectors;
  const Matrix p = forward(params, positives, with_gradient ? &tape_p : nullptr).vectors;

  Matrix d_u = Matrix::Zero(u.rows(), u.cols());
  Matrix d_p = Matrix::Zero(p.rows(), p.cols());
  const double scale = 1.0 / n;
  BatchObjective out;
  SimilarityTriple triple;
  std::vector<int> neg_index;
  for (int i = 0; i < n; ++i) {
    triple.pos_sim = u.row(i).dot(p.row(i));
    triple.neg_sims.clear();
    neg_index.clear();
    if (mode == NegativeMode::Sample) {
      triple.neg_weights.reset();
      for (Eigen::Index k = 0; k < draws->cols(); ++k) neg_index.push_back((*draws)(i, k));
    } else {
      std::vector<double> weights;
      for (int j = 0; j < n; ++j) {
        if (dist.conditional(i, j) <= 0.0) continue;
        neg_index.push_back(j);
        weights.push_back(dist.conditional(i, j));
      }
      triple.neg_weights = std::move(weights);
    }
    for (int j : neg_index) triple.neg_sims.push_back(u.row(i).dot(u.row(j)));

    const LossValue lv = evaluate_loss(triple, loss);
    out.loss += scale * lv.value;
    if (!with_gradient) continue;
    d_u.row(i) += scale * lv.d_pos * p.row(i);
    d_p.row(i) += scale * lv.d_pos * u.row(i);
    for (std::size_t k = 0; k < neg_index.size(); ++k) {
      const int j = neg_index[k];
      const double g = scale * lv.d_neg[k];
      d_u.row(i) += g * u.row(j);
      d_u.row(j) += g * u.row(i);
    }
  }
  if (with_gradient) {
    out.gradient = backward(tape_a, params, d_u);
    const std::vector<double> from_pos = backward(tape_p, params, d_p);
    for (std::size_t k = 0; k < out.gradient.size(); ++k) out.gradient[k] += from_pos[k];
  }
  return out;
}

TrainState initial_state(const TrainConfig& cfg, int input_dim) {
  TrainState state;
  state.rng.seed(cfg.seed);
  std::vector<int> dims{input_dim};
  dims.insert(dims.end(), cfg.encoder.hidden.begin(), cfg.encoder.hidden.end());
  dims.push_back(cfg.encoder.output_dim);
  state.params = EncoderParams::glorot(dims, cfg.encoder.activation, state.rng);
  state.optimizer = AdamState::zeros(state.params.size());
  state.epoch = 0;
  return state;
}

TrainResult resume(const TrainConfig& cfg, TrainState state, const Matrix& inputs,
                   double augment_noise_std, const Evaluator* evaluator,
                   const EpochCallback& on_record) {
  cfg.validate(static_cast<int>(inputs.rows()));
  require(state.params.input_dim() == inputs.cols(), ErrorKind::DimensionMismatch,
          "encoder input width does not match the dataset");
  const ProbeBatch probe = make_probe(cfg, inputs, augment_noise_std);
  TrainResult result;
  int fallbacks = 0;

  auto emit = [&](const MetricsRecord& rec) {
    result.metrics.push_back(rec);
    if (on_record) on_record(rec);
  };
  if (state.epoch == 0) emit(snapshot(cfg, state, probe, evaluator, kNaN, fallbacks));

  const int n = static_cast<int>(inputs.rows());
  const int batches = n / cfg.batch_size;
  std::vector<int> order(n);
  while (state.epoch < cfg.epochs) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), state.rng);
    double epoch_loss = 0.0;
    for (int b = 0; b < batches; ++b) {
      std::vector<int> idx(order.begin() + b * cfg.batch_size,
                           order.begin() + (b + 1) * cfg.batch_size);
      const Matrix anchors = rows_of(inputs, idx);
      const Matrix positives = make_positives(inputs, idx, augment_noise_std, state.rng);

      // The coupling is a constant within the step: computed on the current
      // embeddings, then frozen while the loss is differentiated.
      const EmbeddingBatch embedded = forward(state.params, anchors, nullptr);
      bool fell_back = false;
      const NegativeDistribution dist =
          negative_distribution_for(cfg.sampler, embedded, &fell_back);
      if (fell_back) ++fallbacks;

      IndexMatrix draws;
      if (cfg.negative_mode == NegativeMode::Sample) {
        draws = sample_negatives(dist, cfg.m, state.rng());
      }
      const BatchObjective obj = batch_objective(state.params, anchors, positives, dist, &draws,
                                                 cfg.negative_mode, cfg.loss, true);
      require(std::isfinite(obj.loss), ErrorKind::NumericalOverflow, "training loss diverged");
      adam_step(state.params, obj.gradient, state.optimizer, cfg.optimizer);
      epoch_loss += obj.loss;
    }
    state.epoch += 1;
    epoch_loss /= batches;
    if (state.epoch % cfg.eval_every == 0 || state.epoch == cfg.epochs) {
      emit(snapshot(cfg, state, probe, evaluator, epoch_loss, fallbacks));
    }
  }
  result.state = std::move(state);
  return result;
}

TrainResult train(const TrainConfig& cfg, const Matrix& inputs, double augment_noise_std,
                  const Evaluator* evaluator, const EpochCallback& on_record) {
  cfg.validate(static_cast<int>(inputs.rows()));
  return resume(cfg, initial_state(cfg, static_cast<int>(inputs.cols())), inputs,
                augment_noise_std, evaluator, on_record);
}

MetricsRecord evaluate_state(const TrainConfig& cfg, const TrainState& state, const Matrix& inputs,
                             double augment_noise_std, const Evaluator* evaluator) {
  const ProbeBatch probe = make_probe(cfg, inputs, augment_noise_std);
  return snapshot(cfg, state, probe, evaluator, kNaN, 0);
}

DegeneracyReport demo_degeneracy(const Experiment& exp) {
  TrainConfig cfg = exp.train;
  cfg.sampler.kind = SamplerKind::WorstCase;
  const LabeledDataset data = generate(exp.data);
  const TrainResult run = train(cfg, data.inputs, exp.data.augment_noise_std, nullptr);

  DegeneracyReport report;
  report.loss_kind = cfg.loss.kind;
  report.minmax_value = degenerate_value(cfg.loss);
  for (const MetricsRecord& rec : run.metrics) {
    report.epochs.push_back(rec.epoch);
    report.variance.push_back(rec.representation_variance);
    report.loss.push_back(rec.train_loss);
    report.gap.push_back(rec.train_loss - report.minmax_value);
  }
  report.final_loss = report.loss.back();
  report.final_variance = report.variance.back();

  const ProbeBatch probe = make_probe(cfg, data.inputs, exp.data.augment_noise_std);
  const EmbeddingBatch batch = forward(run.state.params, probe.anchors, nullptr);
  const NegativeDistribution worst = worst_case_distribution(batch);
  LossConfig upper = cfg.loss;
  upper.kind = LossKind::UpperBound;
  report.upper_bound_final = batch_objective(run.state.params, probe.anchors, probe.positives,
                                             worst, nullptr, NegativeMode::Weight, upper, false)
                                 .loss;
  return report;
}

std::vector<SweepRow> sweep_eps(const Experiment& exp, const std::vector<double>& eps_grid) {
  require(!eps_grid.empty(), ErrorKind::Config, "the epsilon grid is empty");
  const LabeledDataset data = generate(exp.data);
  const Evaluator evaluator(data, exp.train.probe_size);
  std::vector<SweepRow> rows;
  for (double eps : eps_grid) {
    TrainConfig cfg = exp.train;
    cfg.sampler.kind = SamplerKind::EntropicOT;
    cfg.sampler.sinkhorn.epsilon = eps;
    const TrainResult run = train(cfg, data.inputs, exp.data.augment_noise_std, &evaluator);
    SweepRow row;
    row.epsilon = eps;
    row.initial = run.metrics.front();
    row.final = run.metrics.back();
    row.best_accuracy = 0.0;
    for (const MetricsRecord& rec : run.metrics)
      row.best_accuracy = std::max(row.best_accuracy, rec.readout_accuracy);
    rows.push_back(row);
  }
  return rows;
}

DiagnosticsSummary dump_diagnostics(const EncoderParams& params, const Matrix& batch_inputs,
                                    const std::vector<int>* labels,
                                    const SamplerConfig& sampler, const std::string& out_dir) {
  const EmbeddingBatch batch = forward(params, batch_inputs, nullptr);
  const NegativeDistribution dist = negative_distribution_for(sampler, batch, nullptr);
  const BoolMatrix mask = batch.exclusion_mask();
  const Matrix gram = batch.vectors * batch.vectors.transpose();
  const int n = batch.size();
  if (labels) {
    require(static_cast<int>(labels->size()) == n, ErrorKind::DimensionMismatch,
            "one label per batch row is required");
  }

  std::filesystem::create_directories(out_dir);
  std::ofstream sims(std::filesystem::path(out_dir) / "similarity_vs_conditional.csv");
  require(sims.good(), ErrorKind::Io, "cannot write diagnostics into '" + out_dir + "'");
  sims << "anchor,rank,index,similarity,conditional\n";

  DiagnosticsSummary summary;
  summary.same_class_by_rank.assign(n, 0);
  summary.total_by_rank.assign(n, 0);
  long pairs = 0;
  long monotone = 0;
  std::vector<int> order;
  for (int i = 0; i < n; ++i) {
    order.clear();
    for (int j = 0; j < n; ++j)
      if (!mask(i, j)) order.push_back(j);
    std::stable_sort(order.begin(), order.end(),
                     [&](int l, int r) { return gram(i, l) > gram(i, r); });
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
      const int j = order[rank];
      sims << i << ',' << rank << ',' << j << ',' << format_exact(gram(i, j)) << ','
           << format_exact(dist.conditional(i, j)) << '\n';
      if (rank > 0) {
        ++pairs;
        const double prev = dist.conditional(i, order[rank - 1]);
        if (dist.conditional(i, j) <= prev * (1.0 + 1e-12)) ++monotone;
      }
      if (labels) {
        summary.total_by_rank[rank] += 1;
        if ((*labels)[i] == (*labels)[j]) summary.same_class_by_rank[rank] += 1;
      }
    }
  }
  summary.monotone_fraction = pairs ? static_cast<double>(monotone) / pairs : 1.0;
  while (!summary.total_by_rank.empty() && summary.total_by_rank.back() == 0) {
    summary.total_by_rank.pop_back();
    summary.same_class_by_rank.pop_back();
  }

  if (labels) {
    std::ofstream hist(std::filesystem::path(out_dir) / "same_class_by_rank.csv");
    require(hist.good(), ErrorKind::Io, "cannot write diagnostics into '" + out_dir + "'");
    hist << "rank,same_class,total,rate\n";
    for (std::size_t rank = 0; rank < summary.total_by_rank.size(); ++rank) {
      hist << rank << ',' << summary.same_class_by_rank[rank] << ','
           << summary.total_by_rank[rank] << ','
           << format_exact(static_cast<double>(summary.same_class_by_rank[rank]) /
                           summary.total_by_rank[rank])
           << '\n';
    }
  }
  return summary;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records,
                       const std::string& config_line) {
  std::ofstream out(path);
  require(out.good(), ErrorKind::Io, "cannot write '" + path + "'");
  out << "# otneg-metrics v1\n";
  out << "# config: " << config_line << '\n';
  out << "epoch,train_loss,readout_accuracy,representation_variance,mean_negative_similarity,"
         "same_class_rate,sinkhorn_fallbacks\n";
  for (const MetricsRecord& r : records) {
    out << r.epoch << ',' << format_exact(r.train_loss) << ',' << format_exact(r.readout_accuracy)
        << ',' << format_exact(r.representation_variance) << ','
        << format_exact(r.mean_negative_similarity) << ',' << format_exact(r.same_class_rate)
        << ',' << r.sinkhorn_fallbacks << '\n';
  }
}

std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
  const CsvTable table = read_csv(path, true);
  require(table.header.size() == 7 && table.header[0] == "epoch", ErrorKind::Io,
          "'" + path + "' is not a metrics file");
  std::vector<MetricsRecord> records;
  for (const auto& row : table.rows) {
    require(row.size() == 7, ErrorKind::Io, "ragged metrics row");
    MetricsRecord r;
    r.epoch = static_cast<int>(parse_double(row[0]));
    r.train_loss = parse_double(row[1]);
    r.readout_accuracy = parse_double(row[2]);
    r.representation_variance = parse_double(row[3]);
    r.mean_negative_similarity = parse_double(row[4]);
    r.same_class_rate = parse_double(row[5]);
    r.sinkhorn_fallbacks = static_cast<int>(parse_double(row[6]));
    records.push_back(r);
  }
  return records;
}

}  // namespace otneg
