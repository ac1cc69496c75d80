#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "fedlips/model.hpp"

// Whitespace-separated text checkpoint. Every double is written with 17
// significant digits so that a save/load cycle is bitwise exact.
//
//   fedlips-checkpoint 1
//   arch <arch_id>
//   input_shape <rank> <d0> <d1> ...
//   num_classes <n>
//   width <w>
//   layers <count>
//   layer <name> <kind> <role> <shareable 0|1> <stride> <pad>
//   <block> <rank> <d0> ... <values...>     (repeated per block)
//   ...
//   end
//
// Linear/conv layers carry the blocks `weight` and `bias`; batch-norm layers
// carry `gamma`, `beta`, `running_mean`, `running_var`. An absent block is
// written as `<block> 0`.
namespace fedlips::model {

std::string serialize_checkpoint(const ModelParams& model);
ModelParams parse_checkpoint(std::string_view text);

void save_checkpoint(const ModelParams& model, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace fedlips::model
