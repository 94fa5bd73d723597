#pragma once

// Binary model container:
//
//   "MARIA1"  u32 version  u64 config digest
//   u32 length + model config text (key = value lines)
//   u64 record count, then per parameter:
//     u32 length + name, u32 rank, u64 dims[rank], f64 data[numel]
//
// Integers and reals are little-endian. The digest is FNV-1a of the config
// text, so a checkpoint can be rebuilt without any other file.

#include <cstdint>
#include <memory>
#include <string>

#include "maria/model.hpp"

namespace maria {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string checkpoint_bytes(const RankingModel& model);
void save_checkpoint(const RankingModel& model, const std::string& path);

std::unique_ptr<RankingModel> checkpoint_from_bytes(const std::string& bytes);
std::unique_ptr<RankingModel> load_checkpoint(const std::string& path);
/// Also rejects a checkpoint whose config digest differs from `expected`'s.
std::unique_ptr<RankingModel> load_checkpoint(const std::string& path, const ModelConfig& expected);

/// FNV-1a over every parameter's name and raw data.
std::uint64_t parameter_digest(const RankingModel& model);

}  // namespace maria
