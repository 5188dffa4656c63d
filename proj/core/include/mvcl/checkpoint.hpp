#pragma once

#include <filesystem>

#include "mvcl/model.hpp"

namespace mvcl {

inline constexpr int kCheckpointVersion = 1;

/// Binary checkpoint layout:
///   8-byte magic "MVCLCKPT"
///   uint64 little-endian header length H
///   H bytes of JSON header: {version, config, epoch, seed, dtype, tensors: [{name, shape, offset, nbytes}]}
///   tensor payloads, raw little-endian, in index order
/// Parameter values, SGD velocities and batch-norm running statistics are all
/// stored, so a load continues training exactly where the save left off.
void checkpoint_save(const ModelState& state, const std::filesystem::path& path);
ModelState checkpoint_load(const std::filesystem::path& path);

/// Bitwise equality of configs, counters, parameters, velocities and buffers.
bool bitwise_equal(const ModelState& a, const ModelState& b);

}  // namespace mvcl
