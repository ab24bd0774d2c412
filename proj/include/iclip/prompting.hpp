#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "iclip/errors.hpp"
#include "iclip/tensor.hpp"
#include "iclip/util.hpp"

namespace iclip {

// One interaction-aware prompting block: multi-head attention with the label
// embeddings as queries and the interaction feature token(s) as key/value,
// followed by a feed-forward network. Residuals are raw adds, no layer norm.
struct PromptBlockParams {
    std::vector<Tensor> w_q, w_k, w_v;  // per head: D x (D/H)
    Tensor w_o;                         // D x D
    Tensor ffn_w1;                      // D x F
    Tensor ffn_w2;                      // F x D

    std::size_t heads() const { return w_q.size(); }

    static PromptBlockParams zeros(std::size_t d, std::size_t heads, std::size_t ffn_hidden) {
        if (heads == 0 || d % heads != 0)
            throw UsageError("prompt block: head count must divide feature dim");
        if (ffn_hidden == 0) throw UsageError("prompt block: ffn_hidden must be positive");
        PromptBlockParams p;
        const std::size_t dh = d / heads;
        for (std::size_t h = 0; h < heads; ++h) {
            p.w_q.push_back(Tensor::zeros({d, dh}, true));
            p.w_k.push_back(Tensor::zeros({d, dh}, true));
            p.w_v.push_back(Tensor::zeros({d, dh}, true));
        }
        p.w_o = Tensor::zeros({d, d}, true);
        p.ffn_w1 = Tensor::zeros({d, ffn_hidden}, true);
        p.ffn_w2 = Tensor::zeros({ffn_hidden, d}, true);
        return p;
    }

    static PromptBlockParams init(std::size_t d, std::size_t heads, std::size_t ffn_hidden,
                                  std::mt19937_64& rng) {
        PromptBlockParams p = zeros(d, heads, ffn_hidden);
        const double bound = 1.0 / std::sqrt(static_cast<double>(d));
        auto fill = [&](Tensor& t) {
            for (double& v : t.values_mut()) v = uniform_sym(rng, bound);
        };
        for (std::size_t h = 0; h < heads; ++h) {
            fill(p.w_q[h]);
            fill(p.w_k[h]);
            fill(p.w_v[h]);
        }
        fill(p.w_o);
        fill(p.ffn_w1);
        fill(p.ffn_w2);
        return p;
    }
};

// C_bar = C + MSA(query=C, key=value=tokens); out = C_bar + FFN(C_bar).
// `tokens` is S x D; the default pipeline passes the single pooled
// interaction feature (S = 1), in which case every attention weight is 1.
inline Tensor prompt_block(const Tensor& labels, const Tensor& tokens,
                           const PromptBlockParams& p) {
    if (labels.rank() != 2 || tokens.rank() != 2 || labels.extent(1) != tokens.extent(1))
        throw DimensionError("prompt_block: label/token dim mismatch " +
                             shape_str(labels.shape()) + " vs " + shape_str(tokens.shape()));
    const std::size_t d = labels.extent(1);
    const std::size_t heads = p.heads();
    if (heads == 0 || d % heads != 0)
        throw DimensionError("prompt_block: head count must divide feature dim");
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(d / heads));

    std::vector<Tensor> head_outs;
    head_outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor q = matmul(labels, p.w_q[h]);   // L x dh
        Tensor k = matmul(tokens, p.w_k[h]);   // S x dh
        Tensor v = matmul(tokens, p.w_v[h]);   // S x dh
        Tensor att = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_dh));  // L x S
        head_outs.push_back(matmul(att, v));   // L x dh
    }
    Tensor msa = matmul(concat_cols(head_outs), p.w_o);
    Tensor c_bar = add(labels, msa);
    Tensor ffn = matmul(gelu(matmul(c_bar, p.ffn_w1)), p.ffn_w2);
    return add(c_bar, ffn);
}

// Final prompted labels: C_tilde = C + PromptStack(C, tokens).
// At zero init the stack output is C, so C_tilde = 2C and prompting is
// cosine-neutral.
inline Tensor prompt_labels(const Tensor& labels, const Tensor& tokens,
                            const std::vector<PromptBlockParams>& stack) {
    if (stack.empty()) throw UsageError("prompt_labels: at least one prompt block required");
    Tensor h = labels;
    for (const PromptBlockParams& block : stack) h = prompt_block(h, tokens, block);
    return add(labels, h);
}

}  // namespace iclip
