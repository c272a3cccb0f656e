#pragma once

// Checkpoint container: magic "EGFK", version u32, entry count u32, then per
// entry {name length u32, name bytes, rank u32, dims u32[], float32 data,
// little-endian}. Parameters, batch-norm buffers, and (optionally) optimizer
// state and counters are stored as named entries in one flat namespace.

#include <cstdint>
#include <string>

#include "egoflow/params.hpp"

namespace egoflow {

inline constexpr char kCheckpointMagic[4] = {'E', 'G', 'F', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    std::int64_t epoch = 0;       // next epoch to run when resuming
    bool has_optimizer = false;
};

template <class T>
void save_checkpoint(const ParamRegistry<T>& reg, const std::string& path,
                     bool include_optimizer = false, std::int64_t epoch = 0);

/// Fills registry values (and optimizer state when present) by name.
/// Throws validation_error on magic/version/name/shape mismatch.
template <class T>
CheckpointMeta load_checkpoint(ParamRegistry<T>& reg, const std::string& path);

}  // namespace egoflow
