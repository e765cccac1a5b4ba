#include "otneg/readout.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace otneg {

namespace {

struct SoftmaxModel {
  Matrix weights;  // (features + 1) x classes, last row is the bias
};

Matrix with_bias(const Matrix& x) {
  Matrix out(x.rows(), x.cols() + 1);
  out.leftCols(x.cols()) = x;
  out.col(x.cols()).setOnes();
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double peak = p.row(r).maxCoeff();
    p.row(r) = (p.row(r).array() - peak).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

double largest_eigenvalue(const Matrix& gram) {
  Vector v = Vector::Ones(gram.rows()).normalized();
  double lambda = 0.0;
  for (int k = 0; k < 50; ++k) {
    Vector w = gram * v;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    lambda = norm;
    v = w / norm;
  }
  return lambda;
}

// Accelerated gradient descent on mean cross-entropy + l2/2 |W|^2 (bias unpenalized).
SoftmaxModel fit(const Matrix& x, const std::vector<int>& y, int classes,
                 const ReadoutConfig& cfg) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  Matrix onehot = Matrix::Zero(n, classes);
  for (Eigen::Index r = 0; r < n; ++r) onehot(r, y[r]) = 1.0;

  const Matrix gram = x.transpose() * x / static_cast<double>(n);
  const double lipschitz = 0.5 * largest_eigenvalue(gram) + cfg.l2;
  const double step = 1.0 / std::max(lipschitz, 1e-12);

  Matrix w = Matrix::Zero(p, classes);
  Matrix w_prev = w;
  for (int it = 0; it < cfg.iterations; ++it) {
    const double momentum = static_cast<double>(it) / (it + 3.0);
    Matrix look = w + momentum * (w - w_prev);
    Matrix grad = x.transpose() * (softmax_rows(x * look) - onehot) / static_cast<double>(n);
    grad.topRows(p - 1) += cfg.l2 * look.topRows(p - 1);
    w_prev = w;
    w = look - step * grad;
  }
  return SoftmaxModel{std::move(w)};
}

}  // namespace

ReadoutResult linear_readout(const Matrix& features, const std::vector<int>& labels,
                             int num_classes, const ReadoutConfig& cfg) {
  const Eigen::Index n = features.rows();
  require(static_cast<Eigen::Index>(labels.size()) == n, ErrorKind::DimensionMismatch,
          "one label per feature row is required");
  require(num_classes >= 2, ErrorKind::InvalidArgument, "at least two classes are required");
  require(cfg.folds >= 2 && n >= cfg.folds, ErrorKind::InvalidArgument,
          "not enough rows for the requested folds");
  for (int y : labels)
    require(y >= 0 && y < num_classes, ErrorKind::InvalidArgument, "label out of range");

  ReadoutResult result;
  const double spread = (features.rowwise() - features.row(0)).cwiseAbs().maxCoeff();
  if (spread < 1e-12) {
    result.degenerate_features = true;
    result.accuracy = 1.0 / num_classes;
    result.fold_accuracies.assign(cfg.folds, result.accuracy);
    return result;
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(order.begin(), order.end(), rng);

  for (int fold = 0; fold < cfg.folds; ++fold) {
    std::vector<int> train_rows;
    std::vector<int> test_rows;
    for (Eigen::Index k = 0; k < n; ++k)
      (k % cfg.folds == fold ? test_rows : train_rows).push_back(order[k]);

    Matrix train(train_rows.size(), features.cols());
    std::vector<int> train_labels(train_rows.size());
    for (std::size_t r = 0; r < train_rows.size(); ++r) {
      train.row(r) = features.row(train_rows[r]);
      train_labels[r] = labels[train_rows[r]];
    }
    const Eigen::RowVectorXd mean = train.colwise().mean();
    Eigen::RowVectorXd scale =
        ((train.rowwise() - mean).array().square().colwise().mean()).sqrt().matrix();
    for (Eigen::Index c = 0; c < scale.size(); ++c)
      if (scale(c) < 1e-12) scale(c) = 1.0;
    auto standardize = [&](const Matrix& m) {
      Matrix z = (m.rowwise() - mean).array().rowwise() / scale.array();
      return with_bias(z);
    };

    const SoftmaxModel model = fit(standardize(train), train_labels, num_classes, cfg);

    Matrix test(test_rows.size(), features.cols());
    for (std::size_t r = 0; r < test_rows.size(); ++r) test.row(r) = features.row(test_rows[r]);
    const Matrix logits = standardize(test) * model.weights;
    int correct = 0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::Index best = 0;
      logits.row(r).maxCoeff(&best);
      if (best == labels[test_rows[r]]) ++correct;
    }
    result.fold_accuracies.push_back(static_cast<double>(correct) / test_rows.size());
  }
  result.accuracy = std::accumulate(result.fold_accuracies.begin(), result.fold_accuracies.end(),
                                    0.0) /
                    cfg.folds;
  return result;
}

}  // namespace otneg
