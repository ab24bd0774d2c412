#pragma once

#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "iclip/feature_store.hpp"
#include "iclip/interaction.hpp"
#include "iclip/prompting.hpp"

namespace iclip {

// How the prompting key/value token set is assembled per person.
//   Pooled: the single pooled interaction feature (the literal reading).
//   Parts:  interaction feature + frame context (+ mean object feature).
enum class PromptTokenMode { Pooled, Parts };

inline const char* to_string(PromptTokenMode m) {
    return m == PromptTokenMode::Pooled ? "pooled" : "parts";
}

inline PromptTokenMode prompt_token_mode_from_string(const std::string& s) {
    if (s == "pooled") return PromptTokenMode::Pooled;
    if (s == "parts") return PromptTokenMode::Parts;
    throw UsageError("unknown prompt token mode '" + s + "'");
}

struct PromptConfig {
    std::size_t blocks = 2;
    std::size_t heads = 4;
    std::size_t ffn_hidden = 0;  // 0 means 4*D
    PromptTokenMode token_mode = PromptTokenMode::Pooled;

    std::size_t hidden_for(std::size_t d) const { return ffn_hidden ? ffn_hidden : 4 * d; }
};

// Every learnable tensor of the visual stack and the prompting stack.
struct ModelParams {
    std::size_t dim = 0;
    bool use_iap = true;
    std::map<BlockKind, AttentionBlockParams> stack_blocks;
    std::vector<PromptBlockParams> prompt_blocks;

    // Visits parameters in a stable order under stable names; the order is
    // the checkpoint layout and the SGD update order.
    void for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
        for (auto& [kind, p] : stack_blocks) {
            const std::string base = std::string("stack.") + to_string(kind) + ".";
            fn(base + "w_q", p.w_q);
            fn(base + "w_k", p.w_k);
            fn(base + "w_v", p.w_v);
            fn(base + "ln_gain", p.ln_gain);
            fn(base + "ln_bias", p.ln_bias);
        }
        for (std::size_t b = 0; b < prompt_blocks.size(); ++b) {
            PromptBlockParams& p = prompt_blocks[b];
            const std::string base = "prompt." + std::to_string(b) + ".";
            for (std::size_t h = 0; h < p.heads(); ++h) {
                const std::string hb = base + "head." + std::to_string(h) + ".";
                fn(hb + "w_q", p.w_q[h]);
                fn(hb + "w_k", p.w_k[h]);
                fn(hb + "w_v", p.w_v[h]);
            }
            fn(base + "w_o", p.w_o);
            fn(base + "ffn_w1", p.ffn_w1);
            fn(base + "ffn_w2", p.ffn_w2);
        }
    }

    std::vector<Tensor> parameters() {
        std::vector<Tensor> out;
        for_each([&](const std::string&, Tensor& t) { out.push_back(t); });
        return out;
    }

    void zero_grads() {
        for_each([](const std::string&, Tensor& t) { t.zero_grad(); });
    }
};

inline ModelParams init_model(std::size_t d, const StackConfig& stack_cfg,
                              const PromptConfig& prompt_cfg, bool use_iap, std::uint64_t seed,
                              bool zero_init = false) {
    stack_cfg.validate();
    ModelParams m;
    m.dim = d;
    m.use_iap = use_iap;
    std::mt19937_64 rng(seed);
    for (BlockKind kind : stack_cfg.order)
        m.stack_blocks.emplace(kind, zero_init ? AttentionBlockParams::zeros(d)
                                               : AttentionBlockParams::init(d, rng));
    if (use_iap) {
        const std::size_t f = prompt_cfg.hidden_for(d);
        for (std::size_t b = 0; b < prompt_cfg.blocks; ++b)
            m.prompt_blocks.push_back(
                zero_init ? PromptBlockParams::zeros(d, prompt_cfg.heads, f)
                          : PromptBlockParams::init(d, prompt_cfg.heads, f, rng));
    }
    return m;
}

// ---------------------------------------------------------------------------
// Frame-level forward helpers shared by training and inference.

inline Tensor rows_tensor(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return Tensor();
    std::vector<double> flat;
    flat.reserve(rows.size() * rows[0].size());
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor::from(std::move(flat), {rows.size(), rows[0].size()});
}

// Builds the stack inputs for one frame and returns the N x D interaction
// features (row i belongs to persons[i]).
inline Tensor frame_interaction_features(const std::vector<PersonDet>& persons,
                                         const FrameBundle& bundle,
                                         const std::vector<std::vector<double>>& memory,
                                         const ModelParams& model, const StackConfig& cfg) {
    if (persons.empty()) throw UsageError("frame_interaction_features: no persons in frame");
    FrameFeatures f;
    {
        std::vector<std::vector<double>> rows;
        for (const PersonDet& p : persons) rows.push_back(p.feat);
        f.persons = rows_tensor(rows);
    }
    {
        std::vector<std::vector<double>> rows;
        for (const ObjectDet& o : select_objects(bundle)) rows.push_back(o.feat);
        f.objects = rows_tensor(rows);
    }
    f.context = Tensor::from(bundle.context, {1, bundle.context.size()});
    f.memory = rows_tensor(memory);
    return interaction_features(f, model.stack_blocks, cfg);
}

// Key/value token matrix for prompting one person.
inline Tensor prompt_tokens_for(const Tensor& person_feat, const FrameBundle& bundle,
                                PromptTokenMode mode) {
    if (mode == PromptTokenMode::Pooled) return person_feat;
    std::vector<Tensor> parts{person_feat,
                              Tensor::from(bundle.context, {1, bundle.context.size()})};
    const auto objects = select_objects(bundle);
    if (!objects.empty()) {
        std::vector<double> mean(bundle.context.size(), 0.0);
        for (const ObjectDet& o : objects)
            for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += o.feat[j];
        for (double& v : mean) v /= static_cast<double>(objects.size());
        parts.push_back(Tensor::from(std::move(mean), {1, bundle.context.size()}));
    }
    return concat_rows(parts);
}

// Prompted label matrix for one person, or the raw vocabulary when IAP is
// disabled.
inline Tensor prompted_labels_for(const Tensor& vocab_embeddings, const Tensor& person_feat,
                                  const FrameBundle& bundle, const ModelParams& model,
                                  PromptTokenMode mode) {
    if (!model.use_iap) return vocab_embeddings;
    return prompt_labels(vocab_embeddings, prompt_tokens_for(person_feat, bundle, mode),
                         model.prompt_blocks);
}

}  // namespace iclip
