#pragma once

#include <string>

#include "migc/diffusion.hpp"
#include "migc/unet.hpp"

namespace migc {

// Versioned binary container: magic, format version, model geometry,
// schedule constants, then named parameter blocks (backbone + control).
// Loading refuses version or geometry mismatches outright.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const UNet& net, const NoiseSchedule& sched);

struct LoadedModel {
  UNet net;
  NoiseSchedule sched;
};

LoadedModel load_checkpoint(const std::string& path);

}  // namespace migc
