#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "treematch/data_model.hpp"
#include "treematch/embedder.hpp"
#include "treematch/errors.hpp"
#include "treematch/ops.hpp"
#include "treematch/rng.hpp"

namespace treematch {

namespace detail {

template <typename S>
ad::Tensor<S> xavier(std::size_t rows, std::size_t cols, std::uint64_t seed,
                     const std::string& name) {
    Rng rng(derive_seed(seed, name));
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::vector<S> v(rows * cols);
    for (auto& x : v) x = static_cast<S>(rng.uniform(-bound, bound));
    return ad::Tensor<S>::from_values({rows, cols}, std::move(v), true);
}

}  // namespace detail

// One pre-norm transformer encoder layer with per-head projection weights.
// Summing per-head outputs through their own output projections is the same
// computation as concatenating heads and applying one combined matrix.
template <typename S>
struct TransformerLayerParams {
    std::vector<ad::Tensor<S>> w_q, w_k, w_v;  // per head (n_e x d_h)
    std::vector<ad::Tensor<S>> b_q, b_k, b_v;  // per head (d_h)
    std::vector<ad::Tensor<S>> w_o;            // per head (d_h x n_e)
    ad::Tensor<S> b_o;                         // (n_e)
    ad::Tensor<S> ln1_gain, ln1_bias;          // (n_e)
    ad::Tensor<S> ln2_gain, ln2_bias;          // (n_e)
    ad::Tensor<S> ff_w1;                       // (n_e x ff)
    ad::Tensor<S> ff_b1;                       // (ff)
    ad::Tensor<S> ff_w2;                       // (ff x n_e)
    ad::Tensor<S> ff_b2;                       // (n_e)
};

template <typename S>
struct ResidualBlockParams {
    ad::Tensor<S> w1, w2;  // (n_m x n_m)
    ad::Tensor<S> b1, b2;  // (n_m)
};

template <typename S>
struct EncoderParams {
    std::vector<TransformerLayerParams<S>> layers;
    ad::Tensor<S> proj_w;  // (n_e x n_m)
    ad::Tensor<S> proj_b;  // (n_m)
    std::array<ResidualBlockParams<S>, 2> blocks;
    std::size_t heads = 4;

    static EncoderParams init(std::size_t n_e, std::size_t n_m, std::size_t heads,
                              std::size_t layer_count, std::uint64_t seed) {
        if (heads == 0 || n_e % heads != 0) {
            throw std::invalid_argument("EncoderParams: head count must divide n_e");
        }
        const std::size_t d_h = n_e / heads;
        const std::size_t ff = 4 * n_e;
        EncoderParams p;
        p.heads = heads;
        for (std::size_t l = 0; l < layer_count; ++l) {
            const std::string base = "enc.l" + std::to_string(l) + ".";
            TransformerLayerParams<S> layer;
            for (std::size_t h = 0; h < heads; ++h) {
                const std::string hb = base + "h" + std::to_string(h) + ".";
                layer.w_q.push_back(detail::xavier<S>(n_e, d_h, seed, hb + "wq"));
                layer.w_k.push_back(detail::xavier<S>(n_e, d_h, seed, hb + "wk"));
                layer.w_v.push_back(detail::xavier<S>(n_e, d_h, seed, hb + "wv"));
                layer.w_o.push_back(detail::xavier<S>(d_h, n_e, seed, hb + "wo"));
                layer.b_q.push_back(ad::Tensor<S>::zeros({d_h}, true));
                layer.b_k.push_back(ad::Tensor<S>::zeros({d_h}, true));
                layer.b_v.push_back(ad::Tensor<S>::zeros({d_h}, true));
            }
            layer.b_o = ad::Tensor<S>::zeros({n_e}, true);
            layer.ln1_gain = ad::Tensor<S>::from_values({n_e}, std::vector<S>(n_e, S(1)), true);
            layer.ln1_bias = ad::Tensor<S>::zeros({n_e}, true);
            layer.ln2_gain = ad::Tensor<S>::from_values({n_e}, std::vector<S>(n_e, S(1)), true);
            layer.ln2_bias = ad::Tensor<S>::zeros({n_e}, true);
            layer.ff_w1 = detail::xavier<S>(n_e, ff, seed, base + "ff_w1");
            layer.ff_b1 = ad::Tensor<S>::zeros({ff}, true);
            layer.ff_w2 = detail::xavier<S>(ff, n_e, seed, base + "ff_w2");
            layer.ff_b2 = ad::Tensor<S>::zeros({n_e}, true);
            p.layers.push_back(std::move(layer));
        }
        p.proj_w = detail::xavier<S>(n_e, n_m, seed, "enc.proj_w");
        p.proj_b = ad::Tensor<S>::zeros({n_m}, true);
        for (std::size_t b = 0; b < 2; ++b) {
            const std::string bb = "enc.res" + std::to_string(b) + ".";
            p.blocks[b].w1 = detail::xavier<S>(n_m, n_m, seed, bb + "w1");
            p.blocks[b].b1 = ad::Tensor<S>::zeros({n_m}, true);
            p.blocks[b].w2 = detail::xavier<S>(n_m, n_m, seed, bb + "w2");
            p.blocks[b].b2 = ad::Tensor<S>::zeros({n_m}, true);
        }
        return p;
    }

    std::vector<std::pair<std::string, ad::Tensor<S>>> named() {
        std::vector<std::pair<std::string, ad::Tensor<S>>> out;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string base = "enc.l" + std::to_string(l) + ".";
            auto& layer = layers[l];
            for (std::size_t h = 0; h < layer.w_q.size(); ++h) {
                const std::string hb = base + "h" + std::to_string(h) + ".";
                out.emplace_back(hb + "wq", layer.w_q[h]);
                out.emplace_back(hb + "wk", layer.w_k[h]);
                out.emplace_back(hb + "wv", layer.w_v[h]);
                out.emplace_back(hb + "wo", layer.w_o[h]);
                out.emplace_back(hb + "bq", layer.b_q[h]);
                out.emplace_back(hb + "bk", layer.b_k[h]);
                out.emplace_back(hb + "bv", layer.b_v[h]);
            }
            out.emplace_back(base + "bo", layer.b_o);
            out.emplace_back(base + "ln1_gain", layer.ln1_gain);
            out.emplace_back(base + "ln1_bias", layer.ln1_bias);
            out.emplace_back(base + "ln2_gain", layer.ln2_gain);
            out.emplace_back(base + "ln2_bias", layer.ln2_bias);
            out.emplace_back(base + "ff_w1", layer.ff_w1);
            out.emplace_back(base + "ff_b1", layer.ff_b1);
            out.emplace_back(base + "ff_w2", layer.ff_w2);
            out.emplace_back(base + "ff_b2", layer.ff_b2);
        }
        out.emplace_back("enc.proj_w", proj_w);
        out.emplace_back("enc.proj_b", proj_b);
        for (std::size_t b = 0; b < 2; ++b) {
            const std::string bb = "enc.res" + std::to_string(b) + ".";
            out.emplace_back(bb + "w1", blocks[b].w1);
            out.emplace_back(bb + "b1", blocks[b].b1);
            out.emplace_back(bb + "w2", blocks[b].w2);
            out.emplace_back(bb + "b2", blocks[b].b2);
        }
        return out;
    }
};

// Per-token embedding matrix (n_s x n_e): embedder output for unmasked
// positions, zero rows elsewhere. Token embeddings are frozen constants; the
// trainable stack starts at the transformer layers.
template <typename S>
ad::Tensor<S> embed_tokens(const CriteriaSentence& sentence, const Vocabulary& vocab,
                           const TextEmbedder& embedder) {
    bool any = false;
    for (auto b : sentence.mask) any = any || (b != 0);
    if (!any) throw DegenerateInputError("criterion '" + sentence.id + "': all tokens masked");

    const std::size_t n_s = sentence.tokens.size();
    const std::size_t n_e = embedder.dimension();
    std::vector<S> values(n_s * n_e, S(0));
    for (std::size_t i = 0; i < n_s; ++i) {
        if (!sentence.mask[i]) continue;
        const int id = sentence.tokens[i];
        const std::string& token =
            (id >= 0 && static_cast<std::size_t>(id) < vocab.tokens.size())
                ? vocab.tokens[static_cast<std::size_t>(id)]
                : vocab.tokens[0];
        const auto row = embedder.embed_token(token);
        for (std::size_t j = 0; j < n_e; ++j) values[i * n_e + j] = static_cast<S>(row[j]);
    }
    return ad::Tensor<S>::from_values({n_s, n_e}, std::move(values));
}

// y = x + W2 relu(W1 x + b1) + b2
template <typename S>
ad::Tensor<S> residual_block(ad::Graph<S>& g, ad::Tensor<S> x, ResidualBlockParams<S>& block) {
    auto hidden = ad::relu(g, ad::affine(g, x, block.w1, block.b1));
    return ad::add(g, x, ad::affine(g, hidden, block.w2, block.b2));
}

namespace detail {

template <typename S>
ad::Tensor<S> multi_head_attention(ad::Graph<S>& g, ad::Tensor<S> x,
                                   TransformerLayerParams<S>& layer, const ad::Mask& key_mask) {
    ad::Tensor<S> combined;
    for (std::size_t h = 0; h < layer.w_q.size(); ++h) {
        auto q = ad::affine(g, x, layer.w_q[h], layer.b_q[h]);
        auto k = ad::affine(g, x, layer.w_k[h], layer.b_k[h]);
        auto v = ad::affine(g, x, layer.w_v[h], layer.b_v[h]);
        auto head = ad::matmul(g, ad::scaled_dot_attention(g, q, k, v, key_mask), layer.w_o[h]);
        combined = h == 0 ? head : ad::add(g, combined, head);
    }
    return ad::add_rowvec(g, combined, layer.b_o);
}

template <typename S>
ad::Tensor<S> transformer_layer(ad::Graph<S>& g, ad::Tensor<S> x,
                                TransformerLayerParams<S>& layer, const ad::Mask& key_mask) {
    auto attn_in = ad::layer_norm(g, x, layer.ln1_gain, layer.ln1_bias);
    x = ad::add(g, x, multi_head_attention(g, attn_in, layer, key_mask));
    auto ff_in = ad::layer_norm(g, x, layer.ln2_gain, layer.ln2_bias);
    auto hidden = ad::relu(g, ad::affine(g, ff_in, layer.ff_w1, layer.ff_b1));
    return ad::add(g, x, ad::affine(g, hidden, layer.ff_w2, layer.ff_b2));
}

}  // namespace detail

// Full pipeline: token embeddings -> transformer layers (mask-aware
// attention) -> masked maxpool -> projection to the memory dimension -> two
// residual blocks. Masked positions feed neither attention nor the pool, so
// the query is independent of padding length.
template <typename S>
ad::Tensor<S> encode_criteria(ad::Graph<S>& g, const CriteriaSentence& sentence,
                              const Vocabulary& vocab, const TextEmbedder& embedder,
                              EncoderParams<S>& params) {
    auto x = embed_tokens<S>(sentence, vocab, embedder);
    ad::Mask mask(sentence.mask.begin(), sentence.mask.end());
    for (auto& layer : params.layers) {
        x = detail::transformer_layer(g, x, layer, mask);
    }
    auto pooled = ad::masked_maxpool(g, x, mask);
    auto q = ad::affine(g, pooled, params.proj_w, params.proj_b);
    q = residual_block(g, q, params.blocks[0]);
    q = residual_block(g, q, params.blocks[1]);
    return q;
}

}  // namespace treematch
