#include "canet/transformer_stream.hpp"

#include <cmath>

namespace canet {

namespace {

Tensor linear_weight(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    return store.add(name, fan_in_uniform({in, out}, in, rng));
}

Tensor linear_bias(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    return store.add(name, fan_in_uniform({out}, in, rng));
}

// [B x N x K] -> [(B*M) x N x K/M]
Tensor split_heads(const Tensor& t, std::size_t heads) {
    const std::size_t b = t.dim(0), n = t.dim(1), k = t.dim(2), dh = k / heads;
    return reshape(permute(reshape(t, {b, n, heads, dh}), {0, 2, 1, 3}), {b * heads, n, dh});
}

// [(B*M) x N x dh] -> [B x N x (M*dh)]
Tensor merge_heads(const Tensor& t, std::size_t heads) {
    const std::size_t b = t.dim(0) / heads, n = t.dim(1), dh = t.dim(2);
    return reshape(permute(reshape(t, {b, heads, n, dh}), {0, 2, 1, 3}), {b, n, heads * dh});
}

}  // namespace

TransformerParams init_transformer(ParamStore& store, const TransformerShape& shape, Rng& rng, bool zero_heads) {
    if (shape.embed_dim % shape.heads != 0) {
        throw ConfigError("embed_dim " + std::to_string(shape.embed_dim) + " not divisible by heads " +
                          std::to_string(shape.heads));
    }
    if (shape.height % shape.patch != 0 || shape.width % shape.patch != 0) {
        throw ConfigError("patch " + std::to_string(shape.patch) + " does not divide " + std::to_string(shape.height) +
                          "x" + std::to_string(shape.width));
    }
    const std::size_t k = shape.embed_dim;
    const std::size_t patch_len = shape.patch * shape.patch * shape.channels;
    const std::size_t n = (shape.height / shape.patch) * (shape.width / shape.patch);

    TransformerParams params;
    params.patch = shape.patch;
    params.heads = shape.heads;
    params.projection = store.add("transformer.patch_projection", fan_in_uniform({patch_len, k}, patch_len, rng));
    params.position = store.add("transformer.position", normal_init({n, k}, 0.02, rng));
    for (std::size_t l = 0; l < shape.layers; ++l) {
        const std::string prefix = "transformer.layer" + std::to_string(l + 1);
        TransformerLayer layer;
        layer.norm1_gamma = store.add(prefix + ".norm1.gamma", Tensor::full({k}, 1.0));
        layer.norm1_beta = store.add(prefix + ".norm1.beta", Tensor::zeros({k}));
        layer.query_w = linear_weight(store, prefix + ".attn.query.weight", k, k, rng);
        layer.query_b = linear_bias(store, prefix + ".attn.query.bias", k, k, rng);
        layer.key_w = linear_weight(store, prefix + ".attn.key.weight", k, k, rng);
        layer.key_b = linear_bias(store, prefix + ".attn.key.bias", k, k, rng);
        layer.value_w = linear_weight(store, prefix + ".attn.value.weight", k, k, rng);
        layer.value_b = linear_bias(store, prefix + ".attn.value.bias", k, k, rng);
        layer.out_w = linear_weight(store, prefix + ".attn.out.weight", k, k, rng);
        layer.out_b = linear_bias(store, prefix + ".attn.out.bias", k, k, rng);
        layer.norm2_gamma = store.add(prefix + ".norm2.gamma", Tensor::full({k}, 1.0));
        layer.norm2_beta = store.add(prefix + ".norm2.beta", Tensor::zeros({k}));
        layer.mlp1_w = linear_weight(store, prefix + ".mlp.fc1.weight", k, 2 * k, rng);
        layer.mlp1_b = linear_bias(store, prefix + ".mlp.fc1.bias", k, 2 * k, rng);
        layer.mlp2_w = linear_weight(store, prefix + ".mlp.fc2.weight", 2 * k, k, rng);
        layer.mlp2_b = linear_bias(store, prefix + ".mlp.fc2.bias", 2 * k, k, rng);
        params.layers.push_back(std::move(layer));
    }
    auto head = [&](const std::string& name, Shape s) {
        return store.add(name, zero_heads ? Tensor::zeros(s) : fan_in_uniform(s, k, rng));
    };
    params.icr_weight = head("transformer.icr_head.weight", {1, k, 1, 1});
    params.icr_bias = head("transformer.icr_head.bias", {1});
    params.ric_weight = head("transformer.ric_head.weight", {k, 1});
    params.ric_bias = head("transformer.ric_head.bias", {1});
    return params;
}

Tensor patchify(const Tensor& x, std::size_t patch) {
    if (x.rank() != 4) throw DimensionError("patchify: expected [B x C x H x W], got " + shape_str(x.shape()));
    const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (patch == 0 || h % patch != 0 || w % patch != 0) {
        throw ConfigError("patch size " + std::to_string(patch) + " does not divide image extent " +
                          std::to_string(h) + "x" + std::to_string(w));
    }
    const std::size_t gh = h / patch, gw = w / patch;
    Tensor blocks = reshape(x, {b, c, gh, patch, gw, patch});
    return reshape(permute(blocks, {0, 2, 4, 3, 5, 1}), {b, gh * gw, patch * patch * c});
}

Tensor patch_embeddings(const Tensor& x, const TransformerParams& params) {
    return linear(patchify(x, params.patch), params.projection, Tensor());
}

Tensor patchify_embed(const Tensor& x, const TransformerParams& params) {
    Tensor e = patch_embeddings(x, params);
    if (e.dim(1) != params.position.dim(0)) {
        throw ConfigError("image yields " + std::to_string(e.dim(1)) + " tokens, positional embedding holds " +
                          std::to_string(params.position.dim(0)));
    }
    return add(e, reshape(params.position, {1, params.position.dim(0), params.position.dim(1)}));
}

Tensor msa_block(const Tensor& t, const TransformerLayer& layer, std::size_t heads, Tensor* attention) {
    const std::size_t k = t.dim(2);
    if (heads == 0 || k % heads != 0) throw ConfigError("msa_block: embed width not divisible by head count");
    Tensor h = layer_norm(t, layer.norm1_gamma, layer.norm1_beta);
    Tensor q = split_heads(linear(h, layer.query_w, layer.query_b), heads);
    Tensor key = split_heads(linear(h, layer.key_w, layer.key_b), heads);
    Tensor v = split_heads(linear(h, layer.value_w, layer.value_b), heads);
    const double temperature = 1.0 / std::sqrt(static_cast<double>(k / heads));
    Tensor scores = scale(bmm(q, permute(key, {0, 2, 1})), temperature);
    Tensor weights = softmax(scores, 2);
    if (attention) *attention = weights;
    Tensor mixed = merge_heads(bmm(weights, v), heads);
    return add(linear(mixed, layer.out_w, layer.out_b), t);
}

Tensor mlp_block(const Tensor& t, const TransformerLayer& layer) {
    Tensor h = layer_norm(t, layer.norm2_gamma, layer.norm2_beta);
    Tensor hidden = relu(linear(h, layer.mlp1_w, layer.mlp1_b));
    return add(linear(hidden, layer.mlp2_w, layer.mlp2_b), t);
}

TokenSequence run_transformer(const Tensor& x, const TransformerParams& params) {
    TokenSequence seq;
    seq.tokens.push_back(patchify_embed(x, params));
    for (const TransformerLayer& layer : params.layers) {
        Tensor weights;
        Tensor mid = msa_block(seq.tokens.back(), layer, params.heads, &weights);
        seq.tokens.push_back(mlp_block(mid, layer));
        seq.attention.push_back(weights);
    }
    return seq;
}

Tensor icr_head(const Tensor& tokens, const TransformerParams& params, std::size_t height, std::size_t width) {
    const std::size_t b = tokens.dim(0), n = tokens.dim(1), k = tokens.dim(2), p = params.patch;
    if (height % p != 0 || width % p != 0 || (height / p) * (width / p) != n) {
        throw DimensionError("icr_head: " + std::to_string(n) + " tokens do not tile " + std::to_string(height) + "x" +
                             std::to_string(width) + " with patch " + std::to_string(p));
    }
    Tensor grid = permute(reshape(tokens, {b, height / p, width / p, k}), {0, 3, 1, 2});
    Tensor logits = conv2d(grid, params.icr_weight, params.icr_bias);
    return sigmoid(resize_nearest(logits, p));
}

Tensor ric_head(const Tensor& tokens, const TransformerParams& params) {
    return sigmoid(linear(tokens, params.ric_weight, params.ric_bias));
}

}  // namespace canet
