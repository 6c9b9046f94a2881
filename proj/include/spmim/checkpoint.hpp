#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "spmim/adamp.hpp"
#include "spmim/sparse_nn.hpp"

namespace spmim {

// On-disk layout (little-endian):
//   8 bytes   magic "SPMIM001" ("SPMIM" + 3-digit format version)
//   u64       metadata length in bytes
//   ...       metadata, UTF-8 JSON: the `meta` object plus a "tensors"
//             directory of {name, shape, crc32} in payload order
//   ...       raw float32 payloads, concatenated in directory order
inline constexpr std::string_view kCheckpointMagicPrefix = "SPMIM";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  // Free-form metadata: config snapshot, epoch, RNG seed, optimizer step...
  nlohmann::json meta = nlohmann::json::object();
  // Values are kept rounded to float32, exactly as stored.
  std::vector<std::pair<std::string, Tensor>> tensors;

  void put(std::string name, const Tensor& value);
  const Tensor* find(std::string_view name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
// FormatError on bad magic, VersionError on an unknown version,
// CorruptionError on truncation or checksum mismatch.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Parameters and buffers under their registered names.
void store_parameters(Checkpoint& ckpt, const ParameterList& list);
// Copies every tensor whose name matches a registered parameter/buffer.
// Throws ConfigError when one of `list` is missing and `require_all`, or on a
// shape mismatch.
void restore_parameters(const Checkpoint& ckpt, ParameterList& list, bool require_all = true);

void store_optimizer(Checkpoint& ckpt, const AdamP& opt);
void restore_optimizer(const Checkpoint& ckpt, AdamP& opt);

}  // namespace spmim
