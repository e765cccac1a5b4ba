#include "otneg/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "json.hpp"
#include "otneg/checkpoint.hpp"
#include "otneg/csv_io.hpp"

namespace otneg {

namespace {

struct Binding {
  ConfigKey key;
  std::function<std::string(const Experiment&)> get;
  std::function<void(Experiment&, const std::string&)> set;
};

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

double to_double(const std::string& key, const std::string& text) {
  try {
    return parse_double(text);
  } catch (const Error&) {
    throw Error(ErrorKind::Config, key + ": expected a number, got '" + text + "'");
  }
}

long long to_integer(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const long long value = std::stoll(text, &used);
    if (used == text.size()) return value;
  } catch (const std::exception&) {
  }
  throw Error(ErrorKind::Config, key + ": expected an integer, got '" + text + "'");
}

std::string join_ints(const std::vector<int>& values) {
  std::string out;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (k) out += ',';
    out += std::to_string(values[k]);
  }
  return out;
}

#define OTNEG_DOUBLE(name, help, field)                                                  \
  Binding {                                                                              \
    {name, help}, [](const Experiment& e) { return format_exact(e.field); },             \
        [](Experiment& e, const std::string& v) { e.field = to_double(name, v); }        \
  }
#define OTNEG_INT(name, help, field)                                                     \
  Binding {                                                                              \
    {name, help}, [](const Experiment& e) { return std::to_string(e.field); },           \
        [](Experiment& e, const std::string& v) {                                        \
          e.field = static_cast<decltype(e.field)>(to_integer(name, v));                 \
        }                                                                                \
  }

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> table = {
      Binding{{"sampler", "negative sampler: uniform | tilt | ot | worst_case"},
              [](const Experiment& e) { return std::string(to_string(e.train.sampler.kind)); },
              [](Experiment& e, const std::string& v) {
                e.train.sampler.kind = sampler_kind_from_string(v);
              }},
      OTNEG_DOUBLE("tilt.beta", "exponential tilt parameter", train.sampler.beta),
      OTNEG_DOUBLE("sinkhorn.epsilon", "entropic regularization", train.sampler.sinkhorn.epsilon),
      OTNEG_INT("sinkhorn.max_iters", "Sinkhorn iteration cap", train.sampler.sinkhorn.max_iters),
      OTNEG_DOUBLE("sinkhorn.tolerance", "L1 marginal tolerance",
                   train.sampler.sinkhorn.tolerance),
      OTNEG_DOUBLE("sinkhorn.stabilization_threshold", "log-scaling absorption trigger",
                   train.sampler.sinkhorn.stabilization_threshold),
      OTNEG_DOUBLE("sinkhorn.epsilon_scaling", "epsilon continuation factor in [0, 1), 0 = off",
                   train.sampler.sinkhorn.epsilon_scaling),
      Binding{{"loss", "triplet | nce | large_m_nce | debiased_nce | upper_bound"},
              [](const Experiment& e) { return std::string(to_string(e.train.loss.kind)); },
              [](Experiment& e, const std::string& v) {
                e.train.loss.kind = loss_kind_from_string(v);
              }},
      OTNEG_DOUBLE("loss.eta", "triplet margin", train.loss.eta),
      OTNEG_DOUBLE("loss.q", "NCE weight", train.loss.q),
      OTNEG_DOUBLE("loss.tau_plus", "debiasing class prior", train.loss.tau_plus),
      OTNEG_DOUBLE("loss.temperature", "similarity temperature (NCE family)",
                   train.loss.temperature),
      Binding{{"negative_mode", "sample | weight"},
              [](const Experiment& e) { return std::string(to_string(e.train.negative_mode)); },
              [](Experiment& e, const std::string& v) {
                e.train.negative_mode = negative_mode_from_string(v);
              }},
      OTNEG_INT("m", "negatives per anchor", train.m),
      OTNEG_INT("batch_size", "anchors per batch", train.batch_size),
      OTNEG_INT("epochs", "training epochs", train.epochs),
      OTNEG_DOUBLE("optimizer.lr", "Adam learning rate", train.optimizer.lr),
      OTNEG_DOUBLE("optimizer.beta1", "Adam beta1", train.optimizer.beta1),
      OTNEG_DOUBLE("optimizer.beta2", "Adam beta2", train.optimizer.beta2),
      OTNEG_DOUBLE("optimizer.eps", "Adam epsilon", train.optimizer.eps),
      OTNEG_DOUBLE("optimizer.weight_decay", "decoupled weight decay",
                   train.optimizer.weight_decay),
      Binding{{"encoder.hidden", "comma separated hidden widths"},
              [](const Experiment& e) { return join_ints(e.train.encoder.hidden); },
              [](Experiment& e, const std::string& v) {
                e.train.encoder.hidden.clear();
                if (trim(v).empty()) return;
                for (double w : parse_double_list(v))
                  e.train.encoder.hidden.push_back(static_cast<int>(w));
              }},
      OTNEG_INT("encoder.output_dim", "embedding dimension", train.encoder.output_dim),
      Binding{{"encoder.activation", "tanh | smooth_relu"},
              [](const Experiment& e) {
                return std::string(to_string(e.train.encoder.activation));
              },
              [](Experiment& e, const std::string& v) {
                e.train.encoder.activation = nonlinearity_from_string(v);
              }},
      OTNEG_INT("seed", "training seed", train.seed),
      OTNEG_INT("eval_every", "epochs between metric records", train.eval_every),
      OTNEG_INT("probe_size", "labelled probe rows for evaluation", train.probe_size),
      OTNEG_INT("data.num_classes", "latent classes", data.num_classes),
      OTNEG_INT("data.ambient_dim", "input dimension", data.ambient_dim),
      OTNEG_INT("data.samples_per_class", "points per class", data.samples_per_class),
      OTNEG_DOUBLE("data.class_center_spread", "radius of the class-center sphere",
                   data.class_center_spread),
      OTNEG_DOUBLE("data.within_class_std", "within-class noise", data.within_class_std),
      OTNEG_DOUBLE("data.augment_noise_std", "augmentation noise", data.augment_noise_std),
      OTNEG_INT("data.seed", "dataset seed", data.seed),
  };
  return table;
}

#undef OTNEG_DOUBLE
#undef OTNEG_INT

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const Binding& b : bindings()) out.push_back(b.key);
    return out;
  }();
  return keys;
}

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap out;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::Config,
            "line " + std::to_string(number) + ": expected key = value");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

ConfigMap parse_config_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Config, "cannot open config file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

void apply_config(Experiment& exp, const ConfigMap& values) {
  for (const auto& [key, value] : values) {
    bool found = false;
    for (const Binding& b : bindings()) {
      if (b.key.name != key) continue;
      b.set(exp, value);
      found = true;
      break;
    }
    require(found, ErrorKind::Config, "unknown config key '" + key + "'");
  }
}

ConfigMap to_config_map(const Experiment& exp) {
  ConfigMap out;
  for (const Binding& b : bindings()) out[b.key.name] = b.get(exp);
  return out;
}

std::string config_line(const Experiment& exp) {
  nlohmann::json obj = nlohmann::json::object();
  for (const auto& [key, value] : to_config_map(exp)) obj[key] = value;
  return obj.dump();
}

Experiment experiment_from_config_line(const std::string& line) {
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("malformed config line: ") + e.what());
  }
  require(obj.is_object(), ErrorKind::Config, "config line must be a JSON object");
  ConfigMap values;
  for (auto it = obj.begin(); it != obj.end(); ++it) values[it.key()] = it.value().get<std::string>();
  Experiment exp;
  apply_config(exp, values);
  return exp;
}

std::string config_hash(const Experiment& exp) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(config_line(exp))));
  return buf;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(to_double("list", item));
  }
  return out;
}

}  // namespace otneg
