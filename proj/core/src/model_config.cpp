#include "canet/model_config.hpp"

#include "canet/tensor.hpp"

namespace canet {

std::vector<std::string> ModelConfig::violations() const {
    std::vector<std::string> out;
    auto positive = [&](std::size_t v, const char* name) {
        if (v == 0) out.push_back(std::string(name) + " must be positive");
        return v != 0;
    };
    const bool dims = positive(height, "height") & positive(width, "width");
    positive(channels, "channels");
    const bool p = positive(patch, "patch");
    const bool k = positive(embed_dim, "embed_dim");
    positive(layers, "layers");
    const bool m = positive(heads, "heads");
    const bool cf = positive(fusion_channels, "fusion_channels");
    const bool r = positive(se_reduction, "se_reduction");
    if (dims && p && (height % patch != 0 || width % patch != 0)) {
        out.push_back("patch " + std::to_string(patch) + " must divide height " + std::to_string(height) +
                      " and width " + std::to_string(width));
    }
    if (dims && (height % kFusionStride != 0 || width % kFusionStride != 0)) {
        out.push_back("height and width must be divisible by " + std::to_string(kFusionStride));
    }
    if (p && patch % kFusionStride != 0) {
        out.push_back("patch " + std::to_string(patch) + " must be a multiple of " + std::to_string(kFusionStride) +
                      " so the token grid aligns with the fusion feature");
    }
    if (k && m && embed_dim % heads != 0) {
        out.push_back("embed_dim " + std::to_string(embed_dim) + " must be divisible by heads " +
                      std::to_string(heads));
    }
    if (cf && fusion_channels % 4 != 0) {
        out.push_back("fusion_channels " + std::to_string(fusion_channels) + " must be divisible by 4");
    }
    if (cf && r && fusion_channels % se_reduction != 0) {
        out.push_back("se_reduction " + std::to_string(se_reduction) + " must divide fusion_channels " +
                      std::to_string(fusion_channels));
    }
    return out;
}

void ModelConfig::validate() const {
    auto problems = violations();
    if (problems.empty()) return;
    std::string msg = "invalid model configuration:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"height", c.height},
         {"width", c.width},
         {"channels", c.channels},
         {"patch", c.patch},
         {"embed_dim", c.embed_dim},
         {"layers", c.layers},
         {"heads", c.heads},
         {"fusion_channels", c.fusion_channels},
         {"se_reduction", c.se_reduction},
         {"no_boundary", c.ablation.no_boundary},
         {"no_transformer", c.ablation.no_transformer},
         {"no_ctx_attention", c.ablation.no_ctx_attention}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.channels = j.value("channels", c.channels);
    c.patch = j.value("patch", c.patch);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.fusion_channels = j.value("fusion_channels", c.fusion_channels);
    c.se_reduction = j.value("se_reduction", c.se_reduction);
    c.ablation.no_boundary = j.value("no_boundary", c.ablation.no_boundary);
    c.ablation.no_transformer = j.value("no_transformer", c.ablation.no_transformer);
    c.ablation.no_ctx_attention = j.value("no_ctx_attention", c.ablation.no_ctx_attention);
}

}  // namespace canet
