#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "muscl/nets.hpp"

namespace muscl::harness {

/// Binary checkpoint: magic "MUSCLCKPT", u32 version, u64 step, u32-length-
/// prefixed UTF-8 config blob (key = value lines; includes "arch = ..."),
/// u64 tensor count, then named tensors ("model.<name>" / "weightnet.<name>",
/// u32 name length + name + tensor payload).
struct Checkpoint {
    std::uint32_t version = 1;
    std::uint64_t step = 0;
    std::string config_text;
    nets::ModelParams model;
    std::optional<nets::WeightNetParams> weight_net;  // meta-mode only
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace muscl::harness
