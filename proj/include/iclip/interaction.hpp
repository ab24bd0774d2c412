#pragma once

#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "iclip/errors.hpp"
#include "iclip/tensor.hpp"
#include "iclip/util.hpp"

namespace iclip {

enum class BlockKind { Person, Object, Context, Memory };

inline const char* to_string(BlockKind k) {
    switch (k) {
        case BlockKind::Person: return "person";
        case BlockKind::Object: return "object";
        case BlockKind::Context: return "context";
        case BlockKind::Memory: return "memory";
    }
    return "?";
}

inline BlockKind block_kind_from_string(const std::string& s) {
    if (s == "person") return BlockKind::Person;
    if (s == "object") return BlockKind::Object;
    if (s == "context") return BlockKind::Context;
    if (s == "memory") return BlockKind::Memory;
    throw UsageError("unknown interaction block kind '" + s + "'");
}

// Projection and layer-norm parameters of one interaction block.
// Projections carry no bias; LN carries affine gain/bias.
struct AttentionBlockParams {
    Tensor w_q, w_k, w_v;      // D x D
    Tensor ln_gain, ln_bias;   // D

    static AttentionBlockParams zeros(std::size_t d) {
        AttentionBlockParams p;
        p.w_q = Tensor::zeros({d, d}, true);
        p.w_k = Tensor::zeros({d, d}, true);
        p.w_v = Tensor::zeros({d, d}, true);
        p.ln_gain = Tensor::full({d}, 1.0, true);
        p.ln_bias = Tensor::zeros({d}, true);
        return p;
    }

    // Identity start: projections uniform in [-1/sqrt(D), 1/sqrt(D)] but the
    // LN gain is zero, so the attention branch contributes nothing until
    // training opens it. LN(x) with gain 1 has norm ~sqrt(D) regardless of
    // input scale, which would swamp unit-norm residuals at init.
    static AttentionBlockParams init(std::size_t d, std::mt19937_64& rng) {
        AttentionBlockParams p = zeros(d);
        const double bound = 1.0 / std::sqrt(static_cast<double>(d));
        for (Tensor* w : {&p.w_q, &p.w_k, &p.w_v})
            for (double& v : w->values_mut()) v = uniform_sym(rng, bound);
        for (double& v : p.ln_gain.values_mut()) v = 0.0;
        return p;
    }
};

// Enabled blocks in execution order, plus the memory window.
struct StackConfig {
    std::vector<BlockKind> order{BlockKind::Person, BlockKind::Object, BlockKind::Context,
                                 BlockKind::Memory};
    std::size_t memory_window = 4;

    void validate() const {
        std::set<BlockKind> seen;
        for (BlockKind k : order)
            if (!seen.insert(k).second)
                throw UsageError(std::string("stack order repeats block '") + to_string(k) + "'");
    }
};

inline constexpr double kLayerNormEps = 1e-5;

namespace detail_attn {

// h + LN(softmax(hWq (kvWk)^T / sqrt(D)) kvWv), the shared core of Eq-style
// residual attention blocks.
inline Tensor residual_attention(const Tensor& h, const Tensor& kv,
                                 const AttentionBlockParams& p) {
    const std::size_t d = h.extent(1);
    if (kv.extent(1) != d)
        throw DimensionError("interaction block: key/value dim " + shape_str(kv.shape()) +
                             " does not match person dim " + std::to_string(d));
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor q = matmul(h, p.w_q);
    Tensor k = matmul(kv, p.w_k);
    Tensor v = matmul(kv, p.w_v);
    Tensor att = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_d));
    Tensor out = matmul(att, v);
    return add(h, layer_norm(out, p.ln_gain, p.ln_bias, kLayerNormEps));
}

}  // namespace detail_attn

// Self-attention over the frame's person batch.
inline Tensor person_block(const Tensor& persons, const AttentionBlockParams& params) {
    if (persons.rank() != 2) throw DimensionError("person_block: N x D tensor required");
    return detail_attn::residual_attention(persons, persons, params);
}

// Cross-attention from the enhanced persons into object/context/memory
// features. An empty key set is a passthrough: softmax over zero keys is
// undefined and degenerate frames must not fail.
inline Tensor cross_block(const Tensor& persons, const Tensor& features,
                          const AttentionBlockParams& params) {
    if (!features.defined() || features.size() == 0) return persons;
    return detail_attn::residual_attention(persons, features, params);
}

// Inputs to one frame's stack pass. Undefined tensors mean "absent".
struct FrameFeatures {
    Tensor persons;  // N x D, N >= 1
    Tensor objects;  // M x D, may be undefined
    Tensor context;  // 1 x D
    Tensor memory;   // R x D, may be undefined
};

// Runs the enabled blocks in configured order, then mean-pools the enhanced
// persons with the (broadcast) frame context.
inline Tensor interaction_features(const FrameFeatures& f,
                                   const std::map<BlockKind, AttentionBlockParams>& blocks,
                                   const StackConfig& cfg) {
    cfg.validate();
    if (!f.persons.defined() || f.persons.rank() != 2)
        throw UsageError("interaction_features: persons must be a non-empty N x D tensor");
    if (!f.context.defined()) throw UsageError("interaction_features: context required");
    Tensor h = f.persons;
    for (BlockKind kind : cfg.order) {
        auto it = blocks.find(kind);
        if (it == blocks.end()) continue;  // block disabled
        switch (kind) {
            case BlockKind::Person: h = person_block(h, it->second); break;
            case BlockKind::Object: h = cross_block(h, f.objects, it->second); break;
            case BlockKind::Context: h = cross_block(h, f.context, it->second); break;
            case BlockKind::Memory: h = cross_block(h, f.memory, it->second); break;
        }
    }
    return mean_pool_pair(h, repeat_row(f.context, h.extent(0)));
}

}  // namespace iclip
