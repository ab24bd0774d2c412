#pragma once

#include <random>
#include <string>
#include <vector>

#include "iclip/gradcheck.hpp"
#include "iclip/interaction.hpp"
#include "iclip/model.hpp"
#include "iclip/prompting.hpp"
#include "iclip/training.hpp"

namespace iclip {

namespace detail_gc {

inline Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng,
                            bool requires_grad = true, double span = 1.0) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    std::vector<double> v(n);
    for (double& x : v) x = uniform_sym(rng, span);
    return Tensor::from(std::move(v), std::move(shape), requires_grad);
}

// A generic scalar functional with nonzero gradient everywhere: sum of the
// elementwise product with a fixed random weight tensor.
inline Tensor weighted_sum(const Tensor& x, std::mt19937_64& rng) {
    std::size_t n = x.size();
    std::vector<double> w(n);
    for (double& v : w) v = uniform_range(rng, 0.5, 1.5);
    return sum(mul(x, Tensor::from(std::move(w), x.shape())));
}

}  // namespace detail_gc

// Per-op and end-to-end finite-difference rows for one seed. The matmul row
// uses a tighter threshold; everything else uses 1e-4.
inline std::vector<GradCheckRow> gradcheck_suite(std::uint64_t seed) {
    using detail_gc::random_tensor;
    std::vector<GradCheckRow> rows;
    std::mt19937_64 rng(seed);

    {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({4, 2}, rng);
        std::mt19937_64 wrng(seed + 1);
        rows.push_back({"matmul",
                        max_rel_grad_error(
                            [&]() {
                                std::mt19937_64 r = wrng;
                                return detail_gc::weighted_sum(matmul(a, b), r);
                            },
                            {a, b}),
                        1e-6});
    }
    {
        Tensor x = random_tensor({3, 5}, rng);
        std::mt19937_64 wrng(seed + 2);
        rows.push_back({"softmax_rows",
                        max_rel_grad_error(
                            [&]() {
                                std::mt19937_64 r = wrng;
                                return detail_gc::weighted_sum(softmax_rows(x), r);
                            },
                            {x})});
    }
    {
        Tensor x = random_tensor({2, 8}, rng);
        Tensor gain = random_tensor({8}, rng);
        Tensor bias = random_tensor({8}, rng);
        std::mt19937_64 wrng(seed + 3);
        rows.push_back({"layer_norm",
                        max_rel_grad_error(
                            [&]() {
                                std::mt19937_64 r = wrng;
                                return detail_gc::weighted_sum(layer_norm(x, gain, bias), r);
                            },
                            {x, gain, bias})});
    }
    {
        Tensor x = random_tensor({3, 5}, rng);
        for (double& v : x.values_mut()) v += (v >= 0 ? 0.5 : -0.5);  // keep rows off zero
        std::mt19937_64 wrng(seed + 4);
        rows.push_back({"l2_normalize",
                        max_rel_grad_error(
                            [&]() {
                                std::mt19937_64 r = wrng;
                                return detail_gc::weighted_sum(l2_normalize(x), r);
                            },
                            {x})});
    }
    {
        Tensor a = random_tensor({2, 6}, rng);
        Tensor b = random_tensor({2, 6}, rng);
        std::mt19937_64 wrng(seed + 5);
        rows.push_back({"mean_pool_pair",
                        max_rel_grad_error(
                            [&]() {
                                std::mt19937_64 r = wrng;
                                return detail_gc::weighted_sum(mean_pool_pair(a, b), r);
                            },
                            {a, b})});
    }
    {
        Tensor x = random_tensor({2, 7}, rng);
        std::mt19937_64 wrng(seed + 6);
        rows.push_back({"gelu",
                        max_rel_grad_error(
                            [&]() {
                                std::mt19937_64 r = wrng;
                                return detail_gc::weighted_sum(gelu(x), r);
                            },
                            {x})});
    }

    const std::size_t d = 8;
    StackConfig stack_cfg;  // P,O,C,M
    stack_cfg.memory_window = 1;
    PromptConfig prompt_cfg;
    prompt_cfg.blocks = 2;
    prompt_cfg.heads = 2;
    prompt_cfg.ffn_hidden = 16;
    ModelParams model = init_model(d, stack_cfg, prompt_cfg, true, seed + 7);
    // open the gated residuals so the projection gradients are generic
    for (auto& [kind, p] : model.stack_blocks) {
        for (double& v : p.ln_gain.values_mut()) v = uniform_range(rng, 0.5, 1.5);
        for (double& v : p.ln_bias.values_mut()) v = uniform_sym(rng, 0.2);
    }

    Tensor persons = random_tensor({2, d}, rng, false);
    Tensor objects = random_tensor({1, d}, rng, false);
    Tensor context = random_tensor({1, d}, rng, false);
    Tensor memory = random_tensor({2, d}, rng, false);

    {
        std::mt19937_64 wrng(seed + 8);
        rows.push_back(
            {"person_block",
             max_rel_grad_error(
                 [&]() {
                     std::mt19937_64 r = wrng;
                     return detail_gc::weighted_sum(
                         person_block(persons, model.stack_blocks.at(BlockKind::Person)), r);
                 },
                 {model.stack_blocks.at(BlockKind::Person).w_q,
                  model.stack_blocks.at(BlockKind::Person).w_k,
                  model.stack_blocks.at(BlockKind::Person).w_v,
                  model.stack_blocks.at(BlockKind::Person).ln_gain,
                  model.stack_blocks.at(BlockKind::Person).ln_bias})});
    }
    {
        std::mt19937_64 wrng(seed + 9);
        rows.push_back(
            {"cross_block",
             max_rel_grad_error(
                 [&]() {
                     std::mt19937_64 r = wrng;
                     return detail_gc::weighted_sum(
                         cross_block(persons, objects, model.stack_blocks.at(BlockKind::Object)),
                         r);
                 },
                 {model.stack_blocks.at(BlockKind::Object).w_q,
                  model.stack_blocks.at(BlockKind::Object).w_k,
                  model.stack_blocks.at(BlockKind::Object).w_v,
                  model.stack_blocks.at(BlockKind::Object).ln_gain,
                  model.stack_blocks.at(BlockKind::Object).ln_bias})});
    }

    auto stack_forward = [&]() {
        FrameFeatures f{persons, objects, context, memory};
        return interaction_features(f, model.stack_blocks, stack_cfg);
    };
    std::vector<Tensor> stack_leaves;
    for (auto& [kind, p] : model.stack_blocks)
        for (Tensor* t : {&p.w_q, &p.w_k, &p.w_v, &p.ln_gain, &p.ln_bias})
            stack_leaves.push_back(*t);
    {
        std::mt19937_64 wrng(seed + 10);
        rows.push_back({"interaction_features",
                        max_rel_grad_error(
                            [&]() {
                                std::mt19937_64 r = wrng;
                                return detail_gc::weighted_sum(stack_forward(), r);
                            },
                            stack_leaves)});
    }

    const std::size_t n_labels = 4;
    Tensor labels = random_tensor({n_labels, d}, rng, false);
    std::vector<Tensor> prompt_leaves;
    for (PromptBlockParams& p : model.prompt_blocks) {
        for (std::size_t h = 0; h < p.heads(); ++h)
            for (Tensor* t : {&p.w_q[h], &p.w_k[h], &p.w_v[h]}) prompt_leaves.push_back(*t);
        for (Tensor* t : {&p.w_o, &p.ffn_w1, &p.ffn_w2}) prompt_leaves.push_back(*t);
    }
    {
        std::mt19937_64 wrng(seed + 11);
        rows.push_back({"prompt_block",
                        max_rel_grad_error(
                            [&]() {
                                std::mt19937_64 r = wrng;
                                return detail_gc::weighted_sum(
                                    prompt_block(labels, context, model.prompt_blocks[0]), r);
                            },
                            prompt_leaves)});
    }
    {
        std::mt19937_64 wrng(seed + 12);
        rows.push_back({"prompt_labels",
                        max_rel_grad_error(
                            [&]() {
                                std::mt19937_64 r = wrng;
                                return detail_gc::weighted_sum(
                                    prompt_labels(labels, context, model.prompt_blocks), r);
                            },
                            prompt_leaves)});
    }
    {
        Tensor feats = random_tensor({3, d}, rng);
        std::vector<Tensor> prompted{random_tensor({n_labels, d}, rng),
                                     random_tensor({n_labels, d}, rng),
                                     random_tensor({n_labels, d}, rng)};
        const std::vector<std::size_t> targets{1, 0, 3};
        std::vector<Tensor> leaves{feats, prompted[0], prompted[1], prompted[2]};
        rows.push_back({"contrastive_loss",
                        max_rel_grad_error(
                            [&]() { return contrastive_loss(feats, prompted, targets, 0.5); },
                            leaves)});
    }
    // End to end: full stack + prompting + loss on a 3-person micro frame.
    {
        Tensor e2e_persons = random_tensor({3, d}, rng, false);
        const std::vector<std::size_t> targets{2, 0, 1};
        std::vector<Tensor> all_leaves = stack_leaves;
        all_leaves.insert(all_leaves.end(), prompt_leaves.begin(), prompt_leaves.end());
        auto build = [&]() {
            FrameFeatures f{e2e_persons, objects, context, memory};
            Tensor feats = interaction_features(f, model.stack_blocks, stack_cfg);
            std::vector<Tensor> prompted;
            for (std::size_t i = 0; i < 3; ++i)
                prompted.push_back(
                    prompt_labels(labels, take_row(feats, i), model.prompt_blocks));
            return contrastive_loss(feats, prompted, targets, 0.1);
        };
        rows.push_back({"end_to_end_loss", max_rel_grad_error(build, all_leaves)});
    }
    return rows;
}

}  // namespace iclip
