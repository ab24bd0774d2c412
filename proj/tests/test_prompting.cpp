#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "iclip/gradcheck_suite.hpp"
#include "iclip/model.hpp"
#include "iclip/prompting.hpp"

using namespace iclip;

namespace {

double cosine(const Tensor& a, std::size_t ra, const Tensor& b, std::size_t rb) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t j = 0; j < a.extent(1); ++j) {
        dot += a.at(ra, j) * b.at(rb, j);
        na += a.at(ra, j) * a.at(ra, j);
        nb += b.at(rb, j) * b.at(rb, j);
    }
    return dot / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("zero-initialized prompting doubles the labels exactly") {
    std::mt19937_64 rng(2);
    const std::size_t d = 8, L = 5;
    Tensor labels = detail_gc::random_tensor({L, d}, rng, false);
    Tensor token = detail_gc::random_tensor({1, d}, rng, false);
    std::vector<PromptBlockParams> stack{PromptBlockParams::zeros(d, 2, 16),
                                         PromptBlockParams::zeros(d, 2, 16)};
    Tensor out = prompt_labels(labels, token, stack);
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(out.values()[i] == 2.0 * labels.values()[i]);

    // doubling every row is cosine-neutral: similarity to any query unchanged
    for (std::size_t l = 0; l < L; ++l)
        CHECK(cosine(out, l, labels, l) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("single pooled token gives attention weight one") {
    // with one key, softmax is 1 regardless of the projections, so the MSA
    // output is the same value row for every label
    std::mt19937_64 rng(4);
    const std::size_t d = 8, L = 4;
    Tensor labels = detail_gc::random_tensor({L, d}, rng, false);
    Tensor token = detail_gc::random_tensor({1, d}, rng, false);
    PromptBlockParams p = PromptBlockParams::init(d, 2, 16, rng);
    // zero the FFN so the block output is labels + MSA only
    for (double& v : p.ffn_w1.values_mut()) v = 0.0;
    for (double& v : p.ffn_w2.values_mut()) v = 0.0;
    Tensor out = prompt_block(labels, token, p);
    // out - labels is the MSA output; all rows must be identical
    for (std::size_t l = 1; l < L; ++l)
        for (std::size_t j = 0; j < d; ++j)
            CHECK(out.at(l, j) - labels.at(l, j) ==
                  Catch::Approx(out.at(0, j) - labels.at(0, j)).margin(1e-12));
}

TEST_CASE("different interaction features give different prompted labels") {
    std::mt19937_64 rng(6);
    const std::size_t d = 8, L = 4;
    Tensor labels = detail_gc::random_tensor({L, d}, rng, false);
    Tensor ta = detail_gc::random_tensor({1, d}, rng, false);
    Tensor tb = detail_gc::random_tensor({1, d}, rng, false);
    std::mt19937_64 prng(7);
    std::vector<PromptBlockParams> stack{PromptBlockParams::init(d, 2, 16, prng)};
    Tensor oa = prompt_labels(labels, ta, stack);
    Tensor ob = prompt_labels(labels, tb, stack);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < oa.size(); ++i)
        max_diff = std::max(max_diff, std::abs(oa.values()[i] - ob.values()[i]));
    CHECK(max_diff > 1e-8);
}

TEST_CASE("label rows are processed independently") {
    // prompting a permuted vocabulary permutes the output the same way
    std::mt19937_64 rng(8);
    const std::size_t d = 8, L = 4;
    Tensor labels = detail_gc::random_tensor({L, d}, rng, false);
    Tensor token = detail_gc::random_tensor({1, d}, rng, false);
    std::mt19937_64 prng(9);
    std::vector<PromptBlockParams> stack{PromptBlockParams::init(d, 2, 16, prng),
                                         PromptBlockParams::init(d, 2, 16, prng)};
    Tensor out = prompt_labels(labels, token, stack);

    std::vector<double> v = labels.values();
    for (std::size_t j = 0; j < d; ++j) std::swap(v[0 * d + j], v[3 * d + j]);
    Tensor out_sw = prompt_labels(Tensor::from(std::move(v), {L, d}), token, stack);
    for (std::size_t j = 0; j < d; ++j) {
        CHECK(out.at(0, j) == Catch::Approx(out_sw.at(3, j)).margin(1e-12));
        CHECK(out.at(3, j) == Catch::Approx(out_sw.at(0, j)).margin(1e-12));
        CHECK(out.at(1, j) == Catch::Approx(out_sw.at(1, j)).margin(1e-12));
    }
}

TEST_CASE("prompt parameter validation") {
    CHECK_THROWS_AS(PromptBlockParams::zeros(8, 3, 16), UsageError);  // 3 does not divide 8
    CHECK_THROWS_AS(PromptBlockParams::zeros(8, 2, 0), UsageError);
    std::mt19937_64 rng(1);
    Tensor labels = detail_gc::random_tensor({2, 8}, rng, false);
    Tensor token = detail_gc::random_tensor({1, 6}, rng, false);
    PromptBlockParams p = PromptBlockParams::zeros(8, 2, 16);
    CHECK_THROWS_AS(prompt_block(labels, token, p), DimensionError);
    CHECK_THROWS_AS(prompt_labels(labels, labels, {}), UsageError);
}

TEST_CASE("token modes build the expected token sets") {
    std::mt19937_64 rng(10);
    const std::size_t d = 4;
    FrameBundle fb;
    fb.context = {1.0, 0.0, 0.0, 0.0};
    fb.persons.push_back({Box{0, 0, 10, 10}, 1.0, {0.0, 1.0, 0.0, 0.0}});
    fb.objects.push_back({Box{5, 5, 15, 15}, {0.0, 0.0, 1.0, 0.0}});
    fb.objects.push_back({Box{2, 2, 12, 12}, {0.0, 0.0, 0.0, 1.0}});
    Tensor feat = detail_gc::random_tensor({1, d}, rng, false);

    Tensor pooled = prompt_tokens_for(feat, fb, PromptTokenMode::Pooled);
    CHECK(pooled.extent(0) == 1);

    Tensor parts = prompt_tokens_for(feat, fb, PromptTokenMode::Parts);
    REQUIRE(parts.extent(0) == 3);  // feature, context, mean object
    CHECK(parts.at(1, 0) == 1.0);
    CHECK(parts.at(2, 2) == 0.5);
    CHECK(parts.at(2, 3) == 0.5);
}

TEST_CASE("disabled IAP returns the vocabulary unchanged") {
    std::mt19937_64 rng(11);
    const std::size_t d = 8;
    Tensor vocab = detail_gc::random_tensor({3, d}, rng, false);
    Tensor feat = detail_gc::random_tensor({1, d}, rng, false);
    FrameBundle fb;
    fb.context = std::vector<double>(d, 0.5);
    ModelParams m = init_model(d, StackConfig{}, PromptConfig{}, false, 1);
    Tensor out = prompted_labels_for(vocab, feat, fb, m, PromptTokenMode::Pooled);
    CHECK(out.values() == vocab.values());
}
