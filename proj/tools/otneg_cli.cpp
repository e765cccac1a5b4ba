// otneg command line tool. Every command writes into a fresh run directory
// <out-dir>/<UTC timestamp>-<config hash>.
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "otneg/checkpoint.hpp"
#include "otneg/csv_io.hpp"
#include "otneg/harness.hpp"
#include "otneg/run_config.hpp"

namespace fs = std::filesystem;
using namespace otneg;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct Options {
  std::string config_path;
  std::string out_root = "runs";
  ConfigMap overrides;
};

std::string flag_name(const std::string& key) {
  std::string flag = "--";
  for (char c : key) flag.push_back(c == '.' || c == '_' ? '-' : c);
  return flag;
}

// One flag per config key. `prefix` limits the set; matching keys also get a
// short alias with the prefix removed (--sinkhorn-epsilon and --epsilon).
void add_config_flags(CLI::App* app, Options& opts, const std::string& prefix = "") {
  app->add_option("--config", opts.config_path, "key = value config file; flags override it")
      ->check(CLI::ExistingFile);
  app->add_option("--out-dir", opts.out_root, "root directory for run directories")
      ->capture_default_str();
  for (const ConfigKey& key : config_keys()) {
    if (key.name.rfind(prefix, 0) != 0) continue;
    std::string names = flag_name(key.name);
    if (!prefix.empty()) names += "," + flag_name(key.name.substr(prefix.size()));
    const std::string name = key.name;
    app->add_option_function<std::string>(
        names, [&opts, name](const std::string& v) { opts.overrides[name] = v; }, key.help);
  }
}

Experiment load_experiment(const Options& opts, const Experiment& base = {}) {
  Experiment exp = base;
  if (!opts.config_path.empty()) apply_config(exp, parse_config_file(opts.config_path));
  apply_config(exp, opts.overrides);
  return exp;
}

void validate_training(const Experiment& exp) {
  exp.data.validate(exp.train.batch_size);
  exp.train.validate(exp.data.num_classes * exp.data.samples_per_class);
}

fs::path make_run_dir(const std::string& root, const std::string& hash) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%dT%H%M%SZ", &utc);
  const std::string base = std::string(stamp) + "-" + hash;
  fs::path dir = fs::path(root) / base;
  for (int k = 1; fs::exists(dir); ++k) dir = fs::path(root) / (base + "-" + std::to_string(k));
  fs::create_directories(dir);
  std::cout << "run directory: " << dir.string() << "\n";
  return dir;
}

void write_config(const fs::path& dir, const Experiment& exp) {
  std::ofstream out(dir / "config.txt");
  out << "# otneg config, hash " << config_hash(exp) << "\n";
  for (const auto& [key, value] : to_config_map(exp)) out << key << " = " << value << "\n";
}

void print_record(const MetricsRecord& r) {
  std::printf("epoch %4d  loss %.6f  acc %.4f  var %.3e  neg-sim %.4f  same-class %.4f  "
              "fallbacks %d\n",
              r.epoch, r.train_loss, r.readout_accuracy, r.representation_variance,
              r.mean_negative_similarity, r.same_class_rate, r.sinkhorn_fallbacks);
  std::fflush(stdout);
}

int cmd_train(const Options& opts, const std::string& resume_path) {
  Experiment exp = load_experiment(opts);
  TrainState start;
  if (!resume_path.empty()) {
    Checkpoint ckpt = load_checkpoint(resume_path);
    exp = load_experiment(opts, experiment_from_config_line(ckpt.config_line));
    start = std::move(ckpt.state);
  }
  validate_training(exp);
  const fs::path dir = make_run_dir(opts.out_root, config_hash(exp));
  write_config(dir, exp);

  const LabeledDataset data = generate(exp.data);
  const Evaluator evaluator(data, exp.train.probe_size);
  const TrainResult run =
      resume_path.empty()
          ? train(exp.train, data.inputs, exp.data.augment_noise_std, &evaluator, print_record)
          : resume(exp.train, std::move(start), data.inputs, exp.data.augment_noise_std,
                   &evaluator, print_record);
  write_metrics_csv((dir / "metrics.csv").string(), run.metrics, config_line(exp));
  save_checkpoint((dir / "checkpoint.json").string(), run.state, config_line(exp));
  return 0;
}

int cmd_eval(const Options& opts, const std::string& checkpoint_path) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const Experiment exp = load_experiment(opts, experiment_from_config_line(ckpt.config_line));
  validate_training(exp);
  const fs::path dir = make_run_dir(opts.out_root, config_hash(exp));
  write_config(dir, exp);

  const LabeledDataset data = generate(exp.data);
  const Evaluator evaluator(data, exp.train.probe_size);
  const MetricsRecord rec =
      evaluate_state(exp.train, ckpt.state, data.inputs, exp.data.augment_noise_std, &evaluator);
  print_record(rec);
  write_metrics_csv((dir / "eval.csv").string(), {rec}, config_line(exp));

  const int rows = std::min(exp.train.batch_size, data.size());
  const std::vector<int> labels(data.labels.begin(), data.labels.begin() + rows);
  const DiagnosticsSummary diag = dump_diagnostics(ckpt.state.params, data.inputs.topRows(rows),
                                                   &labels, exp.train.sampler, dir.string());
  std::printf("monotone fraction %.4f\n", diag.monotone_fraction);
  return 0;
}

int cmd_sweep(const Options& opts, const std::string& grid_text) {
  const Experiment exp = load_experiment(opts);
  validate_training(exp);
  const std::vector<double> grid = parse_double_list(grid_text);
  require(!grid.empty(), ErrorKind::Config, "--grid holds no values");
  const fs::path dir = make_run_dir(opts.out_root, config_hash(exp));
  write_config(dir, exp);

  const std::vector<SweepRow> rows = sweep_eps(exp, grid);
  std::ofstream out(dir / "sweep.csv");
  out << "# otneg-sweep v1\n# config: " << config_line(exp) << "\n";
  out << "epsilon,initial_accuracy,final_accuracy,best_accuracy,initial_mean_negative_similarity,"
         "final_mean_negative_similarity,final_train_loss,final_representation_variance,"
         "final_same_class_rate,sinkhorn_fallbacks\n";
  for (const SweepRow& r : rows) {
    out << format_exact(r.epsilon) << ',' << format_exact(r.initial.readout_accuracy) << ','
        << format_exact(r.final.readout_accuracy) << ',' << format_exact(r.best_accuracy) << ','
        << format_exact(r.initial.mean_negative_similarity) << ','
        << format_exact(r.final.mean_negative_similarity) << ','
        << format_exact(r.final.train_loss) << ',' << format_exact(r.final.representation_variance)
        << ',' << format_exact(r.final.same_class_rate) << ',' << r.final.sinkhorn_fallbacks
        << '\n';
    std::printf("eps %-8g initial acc %.4f  final acc %.4f  best %.4f  neg-sim %.4f -> %.4f\n",
                r.epsilon, r.initial.readout_accuracy, r.final.readout_accuracy, r.best_accuracy,
                r.initial.mean_negative_similarity, r.final.mean_negative_similarity);
  }
  return 0;
}

int cmd_degeneracy(const Options& opts) {
  const Experiment exp = load_experiment(opts);
  validate_training(exp);
  const fs::path dir = make_run_dir(opts.out_root, config_hash(exp));
  write_config(dir, exp);

  const DegeneracyReport report = demo_degeneracy(exp);
  std::ofstream out(dir / "degeneracy.csv");
  out << "# otneg-degeneracy v1\n# config: " << config_line(exp) << "\n";
  out << "# minmax_value: " << format_exact(report.minmax_value) << "\n";
  out << "epoch,train_loss,gap,representation_variance\n";
  for (std::size_t k = 0; k < report.epochs.size(); ++k) {
    out << report.epochs[k] << ',' << format_exact(report.loss[k]) << ','
        << format_exact(report.gap[k]) << ',' << format_exact(report.variance[k]) << '\n';
  }
  std::printf("loss %s: min-max value %.6f\n", to_string(report.loss_kind), report.minmax_value);
  std::printf("final loss %.6f  |gap| %.3e  variance %.3e  upper-bound loss %.3e\n",
              report.final_loss, std::abs(report.final_loss - report.minmax_value),
              report.final_variance, report.upper_bound_final);
  return 0;
}

Histogram read_histogram(const std::string& path, int n) {
  if (path.empty()) return Histogram::uniform(n);
  const Matrix m = read_matrix_csv(path);
  Histogram h{Eigen::Map<const Vector>(m.data(), m.size())};
  require(h.size() == n, ErrorKind::DimensionMismatch,
          "'" + path + "' holds " + std::to_string(h.size()) + " weights, expected " +
              std::to_string(n));
  return h;
}

int cmd_sinkhorn(const Options& opts, const std::string& cost_path, const std::string& a_path,
                 const std::string& b_path, const std::string& output) {
  const Experiment exp = load_experiment(opts);
  const SinkhornConfig& cfg = exp.train.sampler.sinkhorn;
  cfg.validate();

  const Matrix raw = read_matrix_csv(cost_path);
  MaskedCost cost = MaskedCost::unmasked(raw);
  for (Eigen::Index i = 0; i < raw.rows(); ++i)
    for (Eigen::Index j = 0; j < raw.cols(); ++j)
      if (std::isinf(raw(i, j)) && raw(i, j) > 0) {
        cost.forbidden(i, j) = true;
        cost.costs(i, j) = 0.0;
      }
  const Histogram a = read_histogram(a_path, static_cast<int>(raw.rows()));
  const Histogram b = read_histogram(b_path, static_cast<int>(raw.cols()));

  const Coupling c = sinkhorn(cost, a, b, cfg);
  fs::path plan_path = output;
  if (plan_path.empty()) {
    char hash[17];
    std::snprintf(hash, sizeof(hash), "%016llx",
                  static_cast<unsigned long long>(
                      fnv1a64(config_line(exp) + "|" + fs::absolute(cost_path).string())));
    const fs::path dir = make_run_dir(opts.out_root, hash);
    write_config(dir, exp);
    plan_path = dir / "plan.csv";
  }
  write_matrix_csv(plan_path.string(), c.plan, 12);
  std::printf("plan written to %s\n", plan_path.string().c_str());
  std::printf("transport cost %.12g  marginal error %.3e  iterations %d  converged %s\n",
              c.transport_cost, c.marginal_error, c.iterations_used, c.converged ? "yes" : "no");
  if (!c.converged) {
    std::fprintf(stderr, "error: Sinkhorn did not reach tolerance %g within %d iterations; "
                         "raise sinkhorn.max_iters, sinkhorn.epsilon or enable "
                         "sinkhorn.epsilon_scaling\n",
                 cfg.tolerance, cfg.max_iters);
    return kExitNumerical;
  }
  return 0;
}

int cmd_inspect(const Options& opts, const std::string& checkpoint_path) {
  Experiment exp = load_experiment(opts);
  TrainState state;
  if (!checkpoint_path.empty()) {
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    exp = load_experiment(opts, experiment_from_config_line(ckpt.config_line));
    state = std::move(ckpt.state);
  }
  validate_training(exp);
  const LabeledDataset data = generate(exp.data);
  if (checkpoint_path.empty()) state = initial_state(exp.train, data.dim());
  const fs::path dir = make_run_dir(opts.out_root, config_hash(exp));
  write_config(dir, exp);

  const int rows = std::min(exp.train.batch_size, data.size());
  const Matrix inputs = data.inputs.topRows(rows);
  const EmbeddingBatch batch = forward(state.params, inputs, nullptr);
  bool fell_back = false;
  const NegativeDistribution dist = negative_distribution_for(exp.train.sampler, batch, &fell_back);
  write_matrix_csv((dir / "coupling.csv").string(), dist.conditional, 12);

  const Evaluator evaluator(data, std::max(rows, std::min(exp.train.probe_size, data.size())));
  const std::vector<int> labels(data.labels.begin(), data.labels.begin() + rows);
  const DiagnosticsSummary diag =
      dump_diagnostics(state.params, inputs, &labels, exp.train.sampler, dir.string());

  std::printf("sampler %s  batch %d  fell back %s\n", to_string(exp.train.sampler.kind), rows,
              fell_back ? "yes" : "no");
  std::printf("mean negative similarity %.6f  same-class rate %.4f  monotone fraction %.4f\n",
              mean_negative_similarity(batch, dist), evaluator.same_class_rate(dist, rows),
              diag.monotone_fraction);
  if (exp.train.sampler.kind == SamplerKind::EntropicOT && !fell_back) {
    const double eps = exp.train.sampler.sinkhorn.epsilon;
    std::printf("epsilon %g  marginal error %.3e  tilt-form residual %.3e  TV to tilt(1/eps) "
                "%.4f\n",
                eps, dist.marginal_error, fit_tilt_form(batch, dist, eps).max_residual,
                mean_total_variation(dist, tilt_negative_distribution(batch, {1.0 / eps})));
  }
  return 0;
}

int cmd_export(const Options& opts, const std::string& output) {
  const Experiment exp = load_experiment(opts);
  exp.data.validate();
  fs::path path = output;
  if (path.empty()) {
    const fs::path dir = make_run_dir(opts.out_root, config_hash(exp));
    write_config(dir, exp);
    path = dir / "dataset.csv";
  }
  export_dataset_csv(generate(exp.data), path.string());
  std::printf("dataset written to %s\n", path.string().c_str());
  return 0;
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NumericalOverflow:
    case ErrorKind::InfeasibleMask:
    case ErrorKind::ZeroVectorProjection:
    case ErrorKind::NonUnitNorm:
      return kExitNumerical;
    default:
      return kExitConfig;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive learning with entropic-OT negative sampling"};
  app.require_subcommand(1);
  Options opts;
  std::string checkpoint, resume_path, grid = "0.1,0.3,0.5,0.7,1", cost, a_path, b_path, output;
  std::function<int()> action;

  auto* train_cmd = app.add_subcommand("train", "train an encoder and record metrics");
  add_config_flags(train_cmd, opts);
  train_cmd->add_option("--resume", resume_path, "continue from a checkpoint")
      ->check(CLI::ExistingFile);
  train_cmd->callback([&] { action = [&] { return cmd_train(opts, resume_path); }; });

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint and dump diagnostics");
  add_config_flags(eval_cmd, opts);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint to evaluate")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->callback([&] { action = [&] { return cmd_eval(opts, checkpoint); }; });

  auto* sweep_cmd = app.add_subcommand("sweep-eps", "one training run per epsilon");
  add_config_flags(sweep_cmd, opts);
  sweep_cmd->add_option("--grid", grid, "comma separated epsilon values")->capture_default_str();
  sweep_cmd->callback([&] { action = [&] { return cmd_sweep(opts, grid); }; });

  auto* demo_cmd =
      app.add_subcommand("demo-degeneracy", "train against the worst-case coupling");
  add_config_flags(demo_cmd, opts);
  demo_cmd->callback([&] { action = [&] { return cmd_degeneracy(opts); }; });

  auto* solve_cmd = app.add_subcommand("sinkhorn-solve", "solve entropic OT for a cost CSV");
  add_config_flags(solve_cmd, opts, "sinkhorn.");
  solve_cmd->add_option("--cost", cost, "cost matrix CSV; inf marks forbidden pairs")
      ->required()
      ->check(CLI::ExistingFile);
  solve_cmd->add_option("--a", a_path, "row marginal CSV (default uniform)")
      ->check(CLI::ExistingFile);
  solve_cmd->add_option("--b", b_path, "column marginal CSV (default uniform)")
      ->check(CLI::ExistingFile);
  solve_cmd->add_option("--output", output, "plan CSV path (default: run directory)");
  solve_cmd->callback(
      [&] { action = [&] { return cmd_sinkhorn(opts, cost, a_path, b_path, output); }; });

  auto* inspect_cmd =
      app.add_subcommand("inspect-coupling", "negative distribution on the probe batch");
  add_config_flags(inspect_cmd, opts);
  inspect_cmd->add_option("--checkpoint", checkpoint, "checkpoint (default: fresh encoder)")
      ->check(CLI::ExistingFile);
  inspect_cmd->callback([&] { action = [&] { return cmd_inspect(opts, checkpoint); }; });

  auto* export_cmd = app.add_subcommand("export-dataset", "write the synthetic dataset as CSV");
  add_config_flags(export_cmd, opts, "data.");
  export_cmd->add_option("--output", output, "dataset CSV path (default: run directory)");
  export_cmd->callback([&] { action = [&] { return cmd_export(opts, output); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    return action();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (e.kind() == ErrorKind::NumericalOverflow)
      std::cerr << "hint: sinkhorn.epsilon is too small for the cost scale; raise it\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
