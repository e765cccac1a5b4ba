#ifndef OTNEG_DATA_SYNTH_HPP_
#define OTNEG_DATA_SYNTH_HPP_

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "otneg/common.hpp"

namespace otneg {

struct SynthConfig {
  int num_classes = 10;
  int ambient_dim = 16;
  int samples_per_class = 500;
  double class_center_spread = 3.0;
  double within_class_std = 1.0;
  double augment_noise_std = 0.5;
  std::uint64_t seed = 7;

  // min_batch_size: the largest batch the dataset must feed twice over.
  void validate(int min_batch_size = 1) const;
};

// Gaussian mixture with hidden labels. Training code only ever sees `inputs`;
// labels are for the evaluator.
struct LabeledDataset {
  Matrix inputs;
  std::vector<int> labels;
  Matrix centers;
  int num_classes = 0;

  int size() const { return static_cast<int>(inputs.rows()); }
  int dim() const { return static_cast<int>(inputs.cols()); }
};

LabeledDataset generate(const SynthConfig& cfg);

// positive = anchor + N(0, noise_std^2) per coordinate.
std::pair<Eigen::RowVectorXd, Eigen::RowVectorXd> make_pair(const Matrix& inputs, int index,
                                                            double noise_std,
                                                            std::mt19937_64& rng);

// Positives for a list of anchor rows, in order.
Matrix make_positives(const Matrix& inputs, const std::vector<int>& indices, double noise_std,
                      std::mt19937_64& rng);

// CSV with header x0,...,x{D-1},label. Values round-trip exactly.
void export_dataset_csv(const LabeledDataset& data, const std::string& path);
LabeledDataset import_dataset_csv(const std::string& path);

}  // namespace otneg

#endif  // OTNEG_DATA_SYNTH_HPP_
