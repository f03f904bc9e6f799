#pragma once

#include <vector>

#include "canet/ops.hpp"
#include "canet/params.hpp"

namespace canet {

/// One pre-norm Transformer block. Q/K/V/output projections are K x K maps
/// whose column blocks are the M heads.
struct TransformerLayer {
    Tensor norm1_gamma, norm1_beta;
    Tensor query_w, query_b, key_w, key_b, value_w, value_b, out_w, out_b;
    Tensor norm2_gamma, norm2_beta;
    Tensor mlp1_w, mlp1_b, mlp2_w, mlp2_b;  // K -> 2K -> K
};

struct TransformerParams {
    std::size_t patch = 0;
    std::size_t heads = 0;
    Tensor projection;  // I: [(p*p*C) x K]
    Tensor position;    // I_pos: [N x K]
    std::vector<TransformerLayer> layers;
    Tensor icr_weight, icr_bias;  // Conv_I: [1 x K x 1 x 1], [1]
    Tensor ric_weight, ric_bias;  // Conv_R over tokens: [K x 1], [1]

    std::size_t embed_dim() const { return projection.dim(1); }
};

struct TransformerShape {
    std::size_t channels, height, width, patch, embed_dim, layers, heads;
};

TransformerParams init_transformer(ParamStore& store, const TransformerShape& shape, Rng& rng,
                                   bool zero_heads = true);

/// [B x C x H x W] -> [B x N x (p*p*C)]; patches row-major over the grid,
/// each flattened in (row, column, channel) order.
Tensor patchify(const Tensor& x, std::size_t patch);

/// Patch embeddings before the positional term: patchify(x) . I
Tensor patch_embeddings(const Tensor& x, const TransformerParams& params);

/// t_0 = patchify(x) . I + I_pos, [B x N x K]
Tensor patchify_embed(const Tensor& x, const TransformerParams& params);

/// t' = MSA(LayerNorm(t)) + t. When `attention` is given it receives the
/// attention weights, [(B*M) x N x N].
Tensor msa_block(const Tensor& t, const TransformerLayer& layer, std::size_t heads, Tensor* attention = nullptr);

/// t = MLP(LayerNorm(t')) + t'
Tensor mlp_block(const Tensor& t, const TransformerLayer& layer);

struct TokenSequence {
    std::vector<Tensor> tokens;     // t_0 .. t_L
    std::vector<Tensor> attention;  // per layer
    const Tensor& last() const { return tokens.back(); }
};

TokenSequence run_transformer(const Tensor& x, const TransformerParams& params);

/// ICR = sigmoid(upsample_xp(Conv_I(reshape(t_L)))), [B x 1 x H x W]
Tensor icr_head(const Tensor& tokens, const TransformerParams& params, std::size_t height, std::size_t width);

/// RIC = sigmoid(Conv_R(t_L)), [B x N x 1]
Tensor ric_head(const Tensor& tokens, const TransformerParams& params);

}  // namespace canet
