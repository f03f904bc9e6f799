#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace canet {

/// Switches that each remove one architectural module.
struct Ablation {
    bool no_boundary = false;       // B left out of the fused feature, boundary loss weight forced to 0
    bool no_transformer = false;    // RIC := 1, ICR := 0.5, RIC loss weight forced to 0
    bool no_ctx_attention = false;  // no channel weights, no RIC scaling; ICR concatenated + 1x1 conv

    bool operator==(const Ablation&) const = default;
};

/// Architecture hyperparameters. Defaults are the desk-scale profile.
struct ModelConfig {
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t channels = 3;
    std::size_t patch = 8;             // p
    std::size_t embed_dim = 64;        // K (= d)
    std::size_t layers = 4;            // L
    std::size_t heads = 4;             // M
    std::size_t fusion_channels = 32;  // C_f
    std::size_t se_reduction = 4;      // r
    Ablation ablation;

    /// Resolution of the CNN fusion feature relative to the input.
    static constexpr std::size_t kFusionStride = 4;

    std::size_t tokens() const { return (height / patch) * (width / patch); }
    std::size_t grid_height() const { return height / patch; }
    std::size_t grid_width() const { return width / patch; }
    std::size_t fusion_height() const { return height / kFusionStride; }
    std::size_t fusion_width() const { return width / kFusionStride; }

    /// Every violated invariant, one message each; empty when valid.
    std::vector<std::string> violations() const;
    /// Throws ConfigError listing all violations.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
/// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace canet
