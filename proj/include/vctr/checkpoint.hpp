#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vctr/nn.hpp"

namespace vctr {

// Checkpoint and model disagree (missing tensor, shape or config mismatch).
class CompatibilityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Layout (little-endian):
//   "VCTR" u32 version
//   u32 config_len, config_len bytes of JSON
//   u32 tensor_count, then per tensor:
//     u32 name_len, name, u32 rank, rank x u32 dims, numel scalars
// Scalars are f32 unless the config carries "scalar_bytes": 8, in which case
// they are f64 (used for exact training resume).
struct Checkpoint {
    nlohmann::json config;
    std::vector<NamedParam> tensors;

    const Tensor* find(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Appends `params` under `prefix` + name.
void add_tensors(Checkpoint& ckpt, const ParamList& params, const std::string& prefix);
// Copies values for every entry of `params` from `prefix` + name. Throws
// CompatibilityError on a missing name or a shape mismatch.
void restore_tensors(const Checkpoint& ckpt, const ParamList& params, const std::string& prefix);

}  // namespace vctr
