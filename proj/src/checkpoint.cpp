#include "otneg/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace otneg {

namespace {

using nlohmann::json;

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

json payload_of(const TrainState& state, const std::string& config_line) {
  const EncoderParams& params = state.params;
  json layers = json::array();
  for (int l = 0; l < params.num_layers(); ++l) {
    const auto w = params.weight(l);
    const auto b = params.bias(l);
    layers.push_back({
        {"weight_dims", {w.rows(), w.cols()}},
        {"weight", std::vector<double>(w.data(), w.data() + w.size())},
        {"bias", std::vector<double>(b.data(), b.data() + b.size())},
    });
  }
  std::ostringstream rng;
  rng << state.rng;
  return {
      {"architecture", {{"dims", params.dims()}, {"activation", to_string(params.activation())}}},
      {"layers", layers},
      {"optimizer", {{"m", state.optimizer.m}, {"v", state.optimizer.v},
                     {"step", state.optimizer.step}}},
      {"epoch", state.epoch},
      {"rng_state", rng.str()},
      {"config", config_line},
  };
}

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string checkpoint_to_string(const TrainState& state, const std::string& config_line) {
  const json payload = payload_of(state, config_line);
  const json doc = {
      {"format", "otneg-checkpoint"},
      {"version", kCheckpointVersion},
      {"payload", payload},
      {"checksum", hex64(fnv1a64(payload.dump()))},
  };
  return doc.dump(1) + "\n";
}

Checkpoint checkpoint_from_string(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Io, std::string("malformed checkpoint: ") + e.what());
  }
  try {
    require(doc.at("format") == "otneg-checkpoint", ErrorKind::Io, "not an otneg checkpoint");
    require(doc.at("version") == kCheckpointVersion, ErrorKind::Io,
            "unsupported checkpoint version");
    const json& payload = doc.at("payload");
    require(doc.at("checksum").get<std::string>() == hex64(fnv1a64(payload.dump())),
            ErrorKind::Checksum, "checkpoint content does not match its checksum");

    const auto dims = payload.at("architecture").at("dims").get<std::vector<int>>();
    const Nonlinearity act =
        nonlinearity_from_string(payload.at("architecture").at("activation").get<std::string>());
    Checkpoint out;
    out.state.params = EncoderParams(dims, act);
    const json& layers = payload.at("layers");
    require(static_cast<int>(layers.size()) == out.state.params.num_layers(), ErrorKind::Io,
            "layer count does not match the architecture");
    for (int l = 0; l < out.state.params.num_layers(); ++l) {
      auto w = out.state.params.weight(l);
      auto b = out.state.params.bias(l);
      const auto wd = layers[l].at("weight_dims").get<std::vector<Eigen::Index>>();
      const auto wv = layers[l].at("weight").get<std::vector<double>>();
      const auto bv = layers[l].at("bias").get<std::vector<double>>();
      require(wd.size() == 2 && wd[0] == w.rows() && wd[1] == w.cols() &&
                  static_cast<Eigen::Index>(wv.size()) == w.size() &&
                  static_cast<Eigen::Index>(bv.size()) == b.size(),
              ErrorKind::Io, "layer " + std::to_string(l) + " has inconsistent dims");
      std::copy(wv.begin(), wv.end(), w.data());
      std::copy(bv.begin(), bv.end(), b.data());
    }
    const json& opt = payload.at("optimizer");
    out.state.optimizer.m = opt.at("m").get<std::vector<double>>();
    out.state.optimizer.v = opt.at("v").get<std::vector<double>>();
    out.state.optimizer.step = opt.at("step").get<std::int64_t>();
    require(out.state.optimizer.m.size() == out.state.params.size() &&
                out.state.optimizer.v.size() == out.state.params.size(),
            ErrorKind::Io, "optimizer moments do not match the parameters");
    out.state.epoch = payload.at("epoch").get<int>();
    std::istringstream rng(payload.at("rng_state").get<std::string>());
    rng >> out.state.rng;
    require(!rng.fail(), ErrorKind::Io, "unreadable RNG state");
    out.config_line = payload.at("config").get<std::string>();
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Io, std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const TrainState& state,
                     const std::string& config_line) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot write '" + path + "'");
  out << checkpoint_to_string(state, config_line);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, "cannot open '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return checkpoint_from_string(buffer.str());
}

}  // namespace otneg
