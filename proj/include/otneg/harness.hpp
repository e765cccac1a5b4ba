#ifndef OTNEG_HARNESS_HPP_
#define OTNEG_HARNESS_HPP_

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "otneg/data_synth.hpp"
#include "otneg/encoder.hpp"
#include "otneg/losses.hpp"
#include "otneg/negative_sampler.hpp"
#include "otneg/ot_core.hpp"
#include "otneg/readout.hpp"

namespace otneg {

// WorstCase puts all mass on the most similar sample, self included. It is the
// unregularized adversary used only by the degeneracy demonstration.
enum class SamplerKind { Uniform, Tilt, EntropicOT, WorstCase };

const char* to_string(SamplerKind kind);
SamplerKind sampler_kind_from_string(const std::string& name);

struct SamplerConfig {
  SamplerKind kind = SamplerKind::EntropicOT;
  double beta = 2.0;
  SinkhornConfig sinkhorn{0.5, 10000, 1e-6, 50.0};
};

// Sample: m IID draws per anchor. Weight: the whole conditional row is used as
// importance weights (the expectation the draws estimate).
enum class NegativeMode { Sample, Weight };

const char* to_string(NegativeMode mode);
NegativeMode negative_mode_from_string(const std::string& name);

struct EncoderArch {
  std::vector<int> hidden{64, 64};
  int output_dim = 16;
  Nonlinearity activation = Nonlinearity::Tanh;
};

struct TrainConfig {
  SamplerConfig sampler;
  LossConfig loss;
  NegativeMode negative_mode = NegativeMode::Sample;
  int m = 16;
  int batch_size = 128;
  int epochs = 200;
  AdamHyper optimizer;
  EncoderArch encoder;
  std::uint64_t seed = 0;
  int eval_every = 10;
  int probe_size = 1000;

  void validate(int dataset_size) const;
};

struct Experiment {
  SynthConfig data;
  TrainConfig train;
};

struct MetricsRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double readout_accuracy = 0.0;
  double representation_variance = 0.0;
  double mean_negative_similarity = 0.0;
  double same_class_rate = 0.0;
  int sinkhorn_fallbacks = 0;
};

struct TrainState {
  EncoderParams params;
  AdamState optimizer;
  int epoch = 0;
  std::mt19937_64 rng;
};

// Holds the hidden labels. Training never consults it; it only turns a
// parameter snapshot into the label-dependent metrics.
class Evaluator {
 public:
  Evaluator(const LabeledDataset& data, int probe_size, ReadoutConfig readout = {});

  const Matrix& probe_inputs() const { return probe_inputs_; }
  const std::vector<int>& probe_labels() const { return probe_labels_; }
  int num_classes() const { return num_classes_; }

  double readout_accuracy(const EncoderParams& params) const;
  // Expected fraction of negatives sharing the anchor's label on a probe batch.
  double same_class_rate(const NegativeDistribution& dist, int batch_rows) const;

 private:
  Matrix probe_inputs_;
  std::vector<int> probe_labels_;
  int num_classes_;
  ReadoutConfig readout_;
};

// Mean per-coordinate variance of the embeddings.
double representation_variance(const Matrix& embeddings);

// The negative distribution a sampler produces on one batch. For EntropicOT a
// Sinkhorn result that did not converge is replaced by the tilt with
// beta = 1/epsilon; *fell_back reports it.
NegativeDistribution negative_distribution_for(const SamplerConfig& sampler,
                                               const EmbeddingBatch& batch, bool* fell_back);

struct BatchObjective {
  double loss = 0.0;
  std::vector<double> gradient;  // w.r.t. the flat parameter buffer
};

// Mean contrastive loss over a batch of anchors with frozen negatives.
// draws is required in Sample mode and ignored in Weight mode.
BatchObjective batch_objective(const EncoderParams& params, const Matrix& anchors,
                               const Matrix& positives, const NegativeDistribution& dist,
                               const IndexMatrix* draws, NegativeMode mode,
                               const LossConfig& loss, bool with_gradient = true);

struct TrainResult {
  TrainState state;
  std::vector<MetricsRecord> metrics;
};

using EpochCallback = std::function<void(const MetricsRecord&)>;

// evaluator may be null; label-dependent metrics are then NaN.
TrainResult train(const TrainConfig& cfg, const Matrix& inputs, double augment_noise_std,
                  const Evaluator* evaluator, const EpochCallback& on_record = {});

// Continue from a saved state for the remaining epochs of cfg.
TrainResult resume(const TrainConfig& cfg, TrainState state, const Matrix& inputs,
                   double augment_noise_std, const Evaluator* evaluator,
                   const EpochCallback& on_record = {});

TrainState initial_state(const TrainConfig& cfg, int input_dim);

// The record train() would emit for this state, with train_loss taken as the
// probe-batch loss under the expected-value estimator.
MetricsRecord evaluate_state(const TrainConfig& cfg, const TrainState& state, const Matrix& inputs,
                             double augment_noise_std, const Evaluator* evaluator);

struct DegeneracyReport {
  LossKind loss_kind = LossKind::NCE;
  double minmax_value = 0.0;  // psi(0, ..., 0)
  std::vector<int> epochs;
  std::vector<double> variance;
  std::vector<double> loss;
  std::vector<double> gap;  // loss - psi(0, ..., 0)
  double final_loss = 0.0;
  double final_variance = 0.0;
  double upper_bound_final = 0.0;  // upper-bound loss at the final parameters
};

// Trains against the in-batch worst-case coupling (argmax similarity, self
// allowed, no regularization) and records the collapse trajectory.
DegeneracyReport demo_degeneracy(const Experiment& exp);

struct SweepRow {
  double epsilon = 0.0;
  MetricsRecord initial;
  MetricsRecord final;
  double best_accuracy = 0.0;
};

std::vector<SweepRow> sweep_eps(const Experiment& exp, const std::vector<double>& eps_grid);

struct DiagnosticsSummary {
  double monotone_fraction = 0.0;  // adjacent sorted pairs with non-increasing conditional
  std::vector<int> same_class_by_rank;
  std::vector<int> total_by_rank;
};

// Writes similarity_vs_conditional.csv and, when labels are given,
// same_class_by_rank.csv into out_dir. labels is indexed like batch_inputs.
DiagnosticsSummary dump_diagnostics(const EncoderParams& params, const Matrix& batch_inputs,
                                    const std::vector<int>* labels,
                                    const SamplerConfig& sampler, const std::string& out_dir);

// Versioned metrics CSV; config_line is written as one header comment.
void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records,
                       const std::string& config_line);
std::vector<MetricsRecord> read_metrics_csv(const std::string& path);

}  // namespace otneg

#endif  // OTNEG_HARNESS_HPP_
