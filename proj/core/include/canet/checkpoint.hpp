#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "canet/adam.hpp"
#include "canet/model_config.hpp"
#include "canet/params.hpp"

namespace canet {

inline constexpr const char* kCheckpointFormat = "canet-checkpoint/1";

struct CheckpointMeta {
    ModelConfig model;
    std::uint64_t epoch = 0;
    double best_val_dsc = -1.0;
    std::string rng_state;  // textual std::mt19937_64 state
    nlohmann::json config = nlohmann::json::object();
};

/// Writes `dir/{manifest.json, params.bin, optim.bin}`. Values are
/// little-endian IEEE-754 doubles; the manifest maps names to offsets.
void save_checkpoint(const std::filesystem::path& dir, const ParamStore& params, const AdamState& optim,
                     const CheckpointMeta& meta);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& dir);

/// Restores values into an already-constructed store and optimizer state
/// whose names and shapes must match the manifest. Throws CheckpointError.
CheckpointMeta load_checkpoint(const std::filesystem::path& dir, ParamStore& params, AdamState& optim);

}  // namespace canet
