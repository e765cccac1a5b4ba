#ifndef OTNEG_READOUT_HPP_
#define OTNEG_READOUT_HPP_

#include <cstdint>
#include <vector>

#include "otneg/common.hpp"

namespace otneg {

struct ReadoutConfig {
  int folds = 5;
  int iterations = 300;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
};

struct ReadoutResult {
  double accuracy = 0.0;
  std::vector<double> fold_accuracies;
  // All embeddings identical: accuracy is reported as chance, 1/num_classes.
  bool degenerate_features = false;
};

// Multinomial logistic regression on frozen features, k-fold cross-validated.
ReadoutResult linear_readout(const Matrix& features, const std::vector<int>& labels,
                             int num_classes, const ReadoutConfig& cfg = {});

}  // namespace otneg

#endif  // OTNEG_READOUT_HPP_
