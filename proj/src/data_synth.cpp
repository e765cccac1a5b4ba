#include "otneg/data_synth.hpp"

#include <cmath>
#include <fstream>

#include "otneg/csv_io.hpp"

namespace otneg {

void SynthConfig::validate(int min_batch_size) const {
  require(num_classes >= 2, ErrorKind::Config, "num_classes must be >= 2");
  require(ambient_dim >= 1, ErrorKind::Config, "ambient_dim must be >= 1");
  require(samples_per_class >= 1, ErrorKind::Config, "samples_per_class must be >= 1");
  require(class_center_spread > 0.0, ErrorKind::Config, "class_center_spread must be > 0");
  require(within_class_std >= 0.0, ErrorKind::Config, "within_class_std must be >= 0");
  require(augment_noise_std >= 0.0, ErrorKind::Config, "augment_noise_std must be >= 0");
  require(static_cast<long>(num_classes) * samples_per_class >= 2L * min_batch_size,
          ErrorKind::Config, "dataset must hold at least two batches");
}

LabeledDataset generate(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  LabeledDataset data;
  data.num_classes = cfg.num_classes;
  data.centers.resize(cfg.num_classes, cfg.ambient_dim);
  for (int c = 0; c < cfg.num_classes; ++c) {
    Eigen::RowVectorXd direction(cfg.ambient_dim);
    do {
      for (int k = 0; k < cfg.ambient_dim; ++k) direction(k) = normal(rng);
    } while (direction.norm() < 1e-12);
    data.centers.row(c) = cfg.class_center_spread * direction / direction.norm();
  }

  const int total = cfg.num_classes * cfg.samples_per_class;
  data.inputs.resize(total, cfg.ambient_dim);
  data.labels.resize(total);
  // Classes interleave so that any prefix of the dataset is roughly balanced.
  for (int s = 0; s < cfg.samples_per_class; ++s) {
    for (int c = 0; c < cfg.num_classes; ++c) {
      const int row = s * cfg.num_classes + c;
      data.labels[row] = c;
      for (int k = 0; k < cfg.ambient_dim; ++k)
        data.inputs(row, k) = data.centers(c, k) + cfg.within_class_std * normal(rng);
    }
  }
  return data;
}

std::pair<Eigen::RowVectorXd, Eigen::RowVectorXd> make_pair(const Matrix& inputs, int index,
                                                            double noise_std,
                                                            std::mt19937_64& rng) {
  require(index >= 0 && index < inputs.rows(), ErrorKind::InvalidArgument,
          "anchor index out of range");
  Eigen::RowVectorXd anchor = inputs.row(index);
  Eigen::RowVectorXd positive = anchor;
  if (noise_std > 0.0) {
    std::normal_distribution<double> normal(0.0, noise_std);
    for (Eigen::Index k = 0; k < positive.size(); ++k) positive(k) += normal(rng);
  }
  return {std::move(anchor), std::move(positive)};
}

Matrix make_positives(const Matrix& inputs, const std::vector<int>& indices, double noise_std,
                      std::mt19937_64& rng) {
  Matrix out(indices.size(), inputs.cols());
  for (std::size_t r = 0; r < indices.size(); ++r)
    out.row(r) = make_pair(inputs, indices[r], noise_std, rng).second;
  return out;
}

void export_dataset_csv(const LabeledDataset& data, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), ErrorKind::Io, "cannot write '" + path + "'");
  for (int k = 0; k < data.dim(); ++k) out << 'x' << k << ',';
  out << "label\n";
  for (int r = 0; r < data.size(); ++r) {
    for (int k = 0; k < data.dim(); ++k) out << format_exact(data.inputs(r, k)) << ',';
    out << data.labels[r] << '\n';
  }
}

LabeledDataset import_dataset_csv(const std::string& path) {
  const CsvTable table = read_csv(path, true);
  require(table.header.size() >= 2 && table.header.back() == "label", ErrorKind::Io,
          "dataset CSV must end with a 'label' column");
  const int dim = static_cast<int>(table.header.size()) - 1;
  LabeledDataset data;
  data.inputs.resize(table.rows.size(), dim);
  data.labels.resize(table.rows.size());
  int max_label = -1;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    require(static_cast<int>(table.rows[r].size()) == dim + 1, ErrorKind::Io,
            "ragged dataset row " + std::to_string(r));
    for (int k = 0; k < dim; ++k) data.inputs(r, k) = parse_double(table.rows[r][k]);
    const double label = parse_double(table.rows[r][dim]);
    require(label >= 0 && label == std::floor(label), ErrorKind::Io, "labels must be integers >= 0");
    data.labels[r] = static_cast<int>(label);
    max_label = std::max(max_label, data.labels[r]);
  }
  data.num_classes = max_label + 1;
  // Centers are not stored in the CSV; recover them as class means.
  data.centers = Matrix::Zero(data.num_classes, dim);
  std::vector<int> counts(data.num_classes, 0);
  for (int r = 0; r < data.size(); ++r) {
    data.centers.row(data.labels[r]) += data.inputs.row(r);
    counts[data.labels[r]] += 1;
  }
  for (int c = 0; c < data.num_classes; ++c)
    if (counts[c] > 0) data.centers.row(c) /= counts[c];
  return data;
}

}  // namespace otneg
