#pragma once

#include <string>

#include "dolfin/trainer.hpp"

namespace dolfin {

/// Container layout: a text manifest ("dolfin-checkpoint 1", [section] blocks
/// of key = value lines, a block table, "end") followed by raw little-endian
/// data blocks.
std::string serialize_checkpoint(const Checkpoint& state);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& state);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dolfin
