#ifndef OTNEG_RUN_CONFIG_HPP_
#define OTNEG_RUN_CONFIG_HPP_

#include <map>
#include <string>
#include <vector>

#include "otneg/harness.hpp"

namespace otneg {

// Flat key/value view of an Experiment. Keys use dotted names such as
// "sinkhorn.epsilon" or "data.seed"; see config_keys() for the full list.
using ConfigMap = std::map<std::string, std::string>;

struct ConfigKey {
  std::string name;
  std::string help;
};

const std::vector<ConfigKey>& config_keys();

// "key = value" lines; '#' starts a comment. Unknown keys are a Config error.
ConfigMap parse_config_text(const std::string& text);
ConfigMap parse_config_file(const std::string& path);

void apply_config(Experiment& exp, const ConfigMap& values);
ConfigMap to_config_map(const Experiment& exp);

// Single-line JSON object of the config map, keys sorted.
std::string config_line(const Experiment& exp);
Experiment experiment_from_config_line(const std::string& line);

// 16 hex digits identifying the config.
std::string config_hash(const Experiment& exp);

std::vector<double> parse_double_list(const std::string& text);

}  // namespace otneg

#endif  // OTNEG_RUN_CONFIG_HPP_
