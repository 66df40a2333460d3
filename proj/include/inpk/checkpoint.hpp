#pragma once
// Versioned binary checkpoints.
//
// Layout (little-endian):
//   "INPKCKPT"  u32 version  u64 payload_size  payload  sha256(payload)[32]
// payload:
//   u32 len + config JSON, u32 len + RNG state text, u32 tensor count, then per
//   tensor: u32 len + name, u32 rank, u64 dims[rank], f64 values[numel].
// Any mismatch on load raises IntegrityError.

#include <string>
#include <vector>

#include "json.hpp"
#include "inpk/model.hpp"

namespace inpk {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json config;
  std::string rng_state;
  ParamList tensors;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint tensors into the model's parameters, matching by name.
// IntegrityError when the set of names or any shape differs.
void restore_params(const Checkpoint& ckpt, PromptModel& model);

std::string sha256_hex(const std::string& bytes);

}  // namespace inpk
