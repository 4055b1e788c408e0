#pragma once

#include <string>

#include "istr/model.hpp"

namespace istr {

// Binary model snapshot. Layout (all integers little-endian):
//   "ISTR" | u32 version | u32 len + arch descriptor | u64 init seed |
//   u32 epochs trained | u32 metadata count + (len+key, len+value)... |
//   u32 param count + (len+name, u32 rank, u32 dims..., f32 payload)...
// Writing the same model twice produces identical bytes.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

inline constexpr uint32_t kCheckpointVersion = 1;

}  // namespace istr
