#pragma once

// Checkpoint layout (all integers little-endian):
//
//   "CGCONFCK"            8-byte magic
//   u32 version           currently 1
//   u64 manifest_bytes
//   manifest              JSON: format, dtype, seed, step, rng, metadata,
//                         parameters[{name, rows, cols}] in store order
//   payload               each parameter as rows*cols float64, column-major,
//                         in manifest order

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "cgconf/numeric/parameters.hpp"

namespace cgconf {

inline constexpr char kCheckpointMagic[8] = {'C', 'G', 'C', 'O', 'N', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ParameterStore params;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::string rng_state;
  nlohmann::json metadata = nlohmann::json::object();
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cgconf
