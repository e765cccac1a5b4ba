#ifndef OTNEG_CHECKPOINT_HPP_
#define OTNEG_CHECKPOINT_HPP_

#include <cstdint>
#include <string>

#include "otneg/harness.hpp"

namespace otneg {

constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  TrainState state;
  std::string config_line;  // the experiment config the state was trained with
};

// JSON document: architecture, row-major parameter arrays with explicit dims,
// Adam moments, epoch, RNG state and an FNV-1a checksum over the payload.
// Doubles are written in shortest round-trip form, so load(save(x)) == x.
std::string checkpoint_to_string(const TrainState& state, const std::string& config_line);
Checkpoint checkpoint_from_string(const std::string& text);

void save_checkpoint(const std::string& path, const TrainState& state,
                     const std::string& config_line);
Checkpoint load_checkpoint(const std::string& path);

std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace otneg

#endif  // OTNEG_CHECKPOINT_HPP_
