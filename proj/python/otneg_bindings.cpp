#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <optional>

#include "otneg/checkpoint.hpp"
#include "otneg/harness.hpp"
#include "otneg/run_config.hpp"

namespace py = pybind11;
using namespace otneg;

namespace {

// Inputs arrive as float64 row-major arrays; pybind11 copies when needed.
using RowMatrix = Eigen::Ref<const Matrix>;

MaskedCost masked_from_array(const RowMatrix& raw) {
  MaskedCost cost = MaskedCost::unmasked(raw);
  for (Eigen::Index i = 0; i < raw.rows(); ++i)
    for (Eigen::Index j = 0; j < raw.cols(); ++j)
      if (std::isinf(raw(i, j)) && raw(i, j) > 0) {
        cost.forbidden(i, j) = true;
        cost.costs(i, j) = 0.0;
      }
  return cost;
}

Histogram histogram_or_uniform(const std::optional<Vector>& weights, Eigen::Index n) {
  return weights ? Histogram{*weights} : Histogram::uniform(static_cast<int>(n));
}

EmbeddingBatch make_batch(const RowMatrix& vectors, std::optional<std::vector<int>> pair_of) {
  EmbeddingBatch batch;
  batch.vectors = vectors;
  batch.pair_of = std::move(pair_of);
  return batch;
}

SinkhornConfig sinkhorn_config(double epsilon, int max_iters, double tolerance,
                               double stabilization_threshold, double epsilon_scaling) {
  SinkhornConfig cfg;
  cfg.epsilon = epsilon;
  cfg.max_iters = max_iters;
  cfg.tolerance = tolerance;
  cfg.stabilization_threshold = stabilization_threshold;
  cfg.epsilon_scaling = epsilon_scaling;
  return cfg;
}

Experiment experiment_from(const ConfigMap& overrides) {
  Experiment exp;
  apply_config(exp, overrides);
  exp.data.validate(exp.train.batch_size);
  exp.train.validate(exp.data.num_classes * exp.data.samples_per_class);
  return exp;
}

py::dict record_dict(const MetricsRecord& r) {
  py::dict d;
  d["epoch"] = r.epoch;
  d["train_loss"] = r.train_loss;
  d["readout_accuracy"] = r.readout_accuracy;
  d["representation_variance"] = r.representation_variance;
  d["mean_negative_similarity"] = r.mean_negative_similarity;
  d["same_class_rate"] = r.same_class_rate;
  d["sinkhorn_fallbacks"] = r.sinkhorn_fallbacks;
  return d;
}

}  // namespace

PYBIND11_MODULE(_otneg, m) {
  m.doc() = "Entropic-OT negative sampling for contrastive learning";

  static py::exception<Error> base_error(m, "OtnegError", PyExc_RuntimeError);
  static py::exception<Error> config_error(m, "ConfigError", PyExc_ValueError);
  static py::exception<Error> numerical_error(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      switch (e.kind()) {
        case ErrorKind::NumericalOverflow:
        case ErrorKind::InfeasibleMask:
        case ErrorKind::ZeroVectorProjection:
        case ErrorKind::NonUnitNorm:
          py::set_error(numerical_error, e.what());
          break;
        case ErrorKind::Config:
        case ErrorKind::InvalidArgument:
        case ErrorKind::DimensionMismatch:
        case ErrorKind::WrongArity:
          py::set_error(config_error, e.what());
          break;
        default:
          py::set_error(base_error, e.what());
      }
    }
  });

  py::class_<Coupling>(m, "Coupling")
      .def_readonly("plan", &Coupling::plan)
      .def_readonly("potentials_u", &Coupling::potentials_u)
      .def_readonly("potentials_v", &Coupling::potentials_v)
      .def_readonly("transport_cost", &Coupling::transport_cost)
      .def_readonly("marginal_error", &Coupling::marginal_error)
      .def_readonly("iterations_used", &Coupling::iterations_used)
      .def_readonly("converged", &Coupling::converged);

  m.def(
      "sinkhorn",
      [](const RowMatrix& cost, std::optional<Vector> a, std::optional<Vector> b, double epsilon,
         int max_iters, double tolerance, double stabilization_threshold,
         double epsilon_scaling) {
        const MaskedCost masked = masked_from_array(cost);
        return sinkhorn(masked, histogram_or_uniform(a, cost.rows()),
                        histogram_or_uniform(b, cost.cols()),
                        sinkhorn_config(epsilon, max_iters, tolerance, stabilization_threshold,
                                        epsilon_scaling));
      },
      py::arg("cost"), py::arg("a") = py::none(), py::arg("b") = py::none(),
      py::arg("epsilon") = 0.1, py::arg("max_iters") = 10000, py::arg("tolerance") = 1e-6,
      py::arg("stabilization_threshold") = 50.0, py::arg("epsilon_scaling") = 0.0,
      "Entropic OT plan. +inf entries of cost are forbidden and carry exactly zero mass.");

  m.def(
      "brute_force_ot",
      [](const RowMatrix& cost) {
        const PermutationOptimum opt =
            brute_force_ot_plan(masked_from_array(cost), static_cast<int>(cost.rows()));
        return py::make_tuple(opt.value, opt.permutation);
      },
      py::arg("cost"), "Exact OT over permutation plans, n <= 8. Returns (value, permutation).");

  m.def(
      "schroedinger_residual",
      [](const Coupling& c, const RowMatrix& cost, double epsilon) {
        const Histogram a = Histogram::uniform(static_cast<int>(cost.rows()));
        const Histogram b = Histogram::uniform(static_cast<int>(cost.cols()));
        return schroedinger_residual(c, masked_from_array(cost), a, b, epsilon);
      },
      py::arg("coupling"), py::arg("cost"), py::arg("epsilon"),
      "Factorization residual for uniform marginals.");

  py::class_<NegativeDistribution>(m, "NegativeDistribution")
      .def_readonly("conditional", &NegativeDistribution::conditional)
      .def_readonly("epsilon_used", &NegativeDistribution::epsilon_used)
      .def_readonly("converged", &NegativeDistribution::converged)
      .def_readonly("marginal_error", &NegativeDistribution::marginal_error);

  m.def(
      "ot_negative_distribution",
      [](const RowMatrix& embeddings, double epsilon, std::optional<std::vector<int>> pair_of,
         int max_iters, double tolerance) {
        return ot_negative_distribution(
            make_batch(embeddings, std::move(pair_of)),
            sinkhorn_config(epsilon, max_iters, tolerance, 50.0, 0.0));
      },
      py::arg("embeddings"), py::arg("epsilon"), py::arg("pair_of") = py::none(),
      py::arg("max_iters") = 10000, py::arg("tolerance") = 1e-6);
  m.def(
      "tilt_negative_distribution",
      [](const RowMatrix& embeddings, double beta, std::optional<std::vector<int>> pair_of) {
        return tilt_negative_distribution(make_batch(embeddings, std::move(pair_of)), {beta});
      },
      py::arg("embeddings"), py::arg("beta"), py::arg("pair_of") = py::none());
  m.def(
      "uniform_negative_distribution",
      [](const RowMatrix& embeddings, std::optional<std::vector<int>> pair_of) {
        return uniform_negative_distribution(make_batch(embeddings, std::move(pair_of)));
      },
      py::arg("embeddings"), py::arg("pair_of") = py::none());
  m.def(
      "sample_negatives",
      [](const RowMatrix& conditional, int m_draws, std::uint64_t seed) {
        NegativeDistribution dist;
        dist.conditional = conditional;
        return sample_negatives(dist, m_draws, seed);
      },
      py::arg("conditional"), py::arg("m"), py::arg("seed"));
  m.def(
      "mean_negative_similarity",
      [](const RowMatrix& embeddings, const RowMatrix& conditional) {
        NegativeDistribution dist;
        dist.conditional = conditional;
        return mean_negative_similarity(make_batch(embeddings, std::nullopt), dist);
      },
      py::arg("embeddings"), py::arg("conditional"));
  m.def(
      "tilt_form_residual",
      [](const RowMatrix& embeddings, const NegativeDistribution& dist, double epsilon) {
        return fit_tilt_form(make_batch(embeddings, std::nullopt), dist, epsilon).max_residual;
      },
      py::arg("embeddings"), py::arg("distribution"), py::arg("epsilon"));

  m.def(
      "evaluate_loss",
      [](const std::string& kind, double pos_sim, std::vector<double> neg_sims,
         std::optional<std::vector<double>> neg_weights, double eta, double q, double tau_plus,
         double temperature) {
        SimilarityTriple t;
        t.pos_sim = pos_sim;
        t.neg_sims = std::move(neg_sims);
        t.neg_weights = std::move(neg_weights);
        LossConfig cfg;
        cfg.kind = loss_kind_from_string(kind);
        cfg.eta = eta;
        cfg.q = q;
        cfg.tau_plus = tau_plus;
        cfg.temperature = temperature;
        const LossValue v = evaluate_loss(t, cfg);
        return py::make_tuple(v.value, v.d_pos, v.d_neg);
      },
      py::arg("kind"), py::arg("pos_sim"), py::arg("neg_sims"), py::arg("neg_weights") = py::none(),
      py::arg("eta") = 0.5, py::arg("q") = 1.0, py::arg("tau_plus") = 0.1,
      py::arg("temperature") = 1.0,
      "Returns (value, d value / d pos_sim, [d value / d neg_sims]).");

  py::class_<EncoderParams>(m, "Encoder")
      .def_static(
          "glorot",
          [](std::vector<int> dims, const std::string& activation, std::uint64_t seed) {
            std::mt19937_64 rng(seed);
            return EncoderParams::glorot(std::move(dims), nonlinearity_from_string(activation),
                                         rng);
          },
          py::arg("dims"), py::arg("activation") = "tanh", py::arg("seed") = 0)
      .def_property_readonly("dims", &EncoderParams::dims)
      .def_property(
          "flat", [](const EncoderParams& p) { return p.flat(); },
          [](EncoderParams& p, const std::vector<double>& values) {
            require(values.size() == p.size(), ErrorKind::DimensionMismatch,
                    "parameter buffer has the wrong length");
            p.flat() = values;
          })
      .def(
          "forward",
          [](const EncoderParams& p, const RowMatrix& inputs) {
            return forward(p, inputs, nullptr).vectors;
          },
          py::arg("inputs"))
      .def(
          "vjp",
          [](const EncoderParams& p, const RowMatrix& inputs, const RowMatrix& d_embeddings) {
            ForwardTape tape;
            forward(p, inputs, &tape);
            return backward(tape, p, d_embeddings);
          },
          py::arg("inputs"), py::arg("d_embeddings"),
          "Gradient of sum(d_embeddings * forward(inputs)) w.r.t. the flat parameters.");

  m.def(
      "generate_dataset",
      [](const ConfigMap& overrides) {
        Experiment exp;
        apply_config(exp, overrides);
        exp.data.validate();
        const LabeledDataset data = generate(exp.data);
        return py::make_tuple(data.inputs, data.labels, data.centers);
      },
      py::arg("config") = ConfigMap{}, "Returns (inputs, labels, centers).");
  m.def(
      "linear_readout",
      [](const RowMatrix& features, const std::vector<int>& labels, int num_classes) {
        return linear_readout(features, labels, num_classes).accuracy;
      },
      py::arg("features"), py::arg("labels"), py::arg("num_classes"));

  m.def("config_keys", [] {
    py::dict out;
    for (const ConfigKey& key : config_keys()) out[py::str(key.name)] = key.help;
    return out;
  });
  m.def(
      "train",
      [](const ConfigMap& overrides) {
        const Experiment exp = experiment_from(overrides);
        TrainResult run;
        {
          py::gil_scoped_release release;
          const LabeledDataset data = generate(exp.data);
          const Evaluator evaluator(data, exp.train.probe_size);
          run = train(exp.train, data.inputs, exp.data.augment_noise_std, &evaluator);
        }
        py::list metrics;
        for (const MetricsRecord& r : run.metrics) metrics.append(record_dict(r));
        return py::make_tuple(metrics, checkpoint_to_string(run.state, config_line(exp)));
      },
      py::arg("config") = ConfigMap{},
      "Train with key/value overrides. Returns (metrics, checkpoint JSON text).");
  m.def(
      "demo_degeneracy",
      [](const ConfigMap& overrides) {
        const Experiment exp = experiment_from(overrides);
        DegeneracyReport report;
        {
          py::gil_scoped_release release;
          report = demo_degeneracy(exp);
        }
        py::dict d;
        d["minmax_value"] = report.minmax_value;
        d["epochs"] = report.epochs;
        d["variance"] = report.variance;
        d["loss"] = report.loss;
        d["final_loss"] = report.final_loss;
        d["final_variance"] = report.final_variance;
        d["upper_bound_final"] = report.upper_bound_final;
        return d;
      },
      py::arg("config") = ConfigMap{});
}
