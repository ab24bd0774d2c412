#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "iclip/gradcheck_suite.hpp"
#include "iclip/interaction.hpp"
#include "iclip/model.hpp"

using namespace iclip;

namespace {

FrameFeatures random_frame(std::size_t n, std::size_t d, std::mt19937_64& rng) {
    FrameFeatures f;
    f.persons = detail_gc::random_tensor({n, d}, rng, false);
    f.objects = detail_gc::random_tensor({2, d}, rng, false);
    f.context = detail_gc::random_tensor({1, d}, rng, false);
    f.memory = detail_gc::random_tensor({3, d}, rng, false);
    return f;
}

}  // namespace

TEST_CASE("zero-initialized blocks are exact identities") {
    std::mt19937_64 rng(3);
    const std::size_t d = 8;
    FrameFeatures f = random_frame(2, d, rng);
    AttentionBlockParams zp = AttentionBlockParams::zeros(d);

    Tensor p = person_block(f.persons, zp);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p.values()[i] == f.persons.values()[i]);

    Tensor c = cross_block(f.persons, f.objects, zp);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c.values()[i] == f.persons.values()[i]);

    // full zero-init stack reduces to (persons + context) / 2 exactly
    StackConfig cfg;
    std::map<BlockKind, AttentionBlockParams> blocks;
    for (BlockKind k : cfg.order) blocks.emplace(k, AttentionBlockParams::zeros(d));
    Tensor out = interaction_features(f, blocks, cfg);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t j = 0; j < d; ++j)
            CHECK(out.at(r, j) == (f.persons.at(r, j) + f.context.at(0, j)) / 2.0);
}

TEST_CASE("single person frame works") {
    std::mt19937_64 rng(5);
    const std::size_t d = 8;
    FrameFeatures f = random_frame(1, d, rng);
    StackConfig cfg;
    ModelParams m = init_model(d, cfg, PromptConfig{}, false, 9);
    Tensor out = interaction_features(f, m.stack_blocks, cfg);
    REQUIRE(out.shape() == std::vector<std::size_t>({1, d}));
    check_finite(out, "single person");
}

TEST_CASE("empty object and memory sets are passthroughs") {
    std::mt19937_64 rng(6);
    const std::size_t d = 8;
    FrameFeatures f = random_frame(2, d, rng);
    StackConfig cfg;
    ModelParams m = init_model(d, cfg, PromptConfig{}, false, 10);
    for (auto& [kind, p] : m.stack_blocks)
        for (double& v : p.ln_gain.values_mut()) v = 1.0;

    FrameFeatures bare = f;
    bare.objects = Tensor();
    bare.memory = Tensor();
    Tensor full_out = interaction_features(bare, m.stack_blocks, cfg);

    StackConfig pc_only;
    pc_only.order = {BlockKind::Person, BlockKind::Context};
    std::map<BlockKind, AttentionBlockParams> pc_blocks{
        {BlockKind::Person, m.stack_blocks.at(BlockKind::Person)},
        {BlockKind::Context, m.stack_blocks.at(BlockKind::Context)}};
    Tensor pc_out = interaction_features(bare, pc_blocks, pc_only);
    for (std::size_t i = 0; i < full_out.size(); ++i)
        CHECK(full_out.values()[i] == Catch::Approx(pc_out.values()[i]).margin(1e-14));
}

TEST_CASE("person permutation equivariance") {
    std::mt19937_64 rng(8);
    const std::size_t d = 8, n = 3;
    FrameFeatures f = random_frame(n, d, rng);
    StackConfig cfg;
    ModelParams m = init_model(d, cfg, PromptConfig{}, false, 20);
    for (auto& [kind, p] : m.stack_blocks)
        for (double& v : p.ln_gain.values_mut()) v = 1.0;

    Tensor out = interaction_features(f, m.stack_blocks, cfg);

    // swap persons 0 and 2
    FrameFeatures g = f;
    std::vector<double> swapped = f.persons.values();
    for (std::size_t j = 0; j < d; ++j) std::swap(swapped[0 * d + j], swapped[2 * d + j]);
    g.persons = Tensor::from(std::move(swapped), {n, d});
    Tensor out_sw = interaction_features(g, m.stack_blocks, cfg);

    for (std::size_t j = 0; j < d; ++j) {
        CHECK(out.at(0, j) == Catch::Approx(out_sw.at(2, j)).margin(1e-10));
        CHECK(out.at(2, j) == Catch::Approx(out_sw.at(0, j)).margin(1e-10));
        CHECK(out.at(1, j) == Catch::Approx(out_sw.at(1, j)).margin(1e-10));
    }
}

TEST_CASE("stack order changes the result") {
    std::mt19937_64 rng(9);
    const std::size_t d = 8;
    FrameFeatures f = random_frame(2, d, rng);
    StackConfig a;  // P,O,C,M
    StackConfig b = a;
    b.order = {BlockKind::Context, BlockKind::Object, BlockKind::Person, BlockKind::Memory};
    ModelParams m = init_model(d, a, PromptConfig{}, false, 30);
    for (auto& [kind, p] : m.stack_blocks)
        for (double& v : p.ln_gain.values_mut()) v = 1.0;  // open the gates
    Tensor oa = interaction_features(f, m.stack_blocks, a);
    Tensor ob = interaction_features(f, m.stack_blocks, b);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < oa.size(); ++i)
        max_diff = std::max(max_diff, std::abs(oa.values()[i] - ob.values()[i]));
    CHECK(max_diff > 1e-8);
}

TEST_CASE("duplicate block in order is rejected") {
    StackConfig cfg;
    cfg.order = {BlockKind::Person, BlockKind::Person};
    CHECK_THROWS_AS(cfg.validate(), UsageError);
}

TEST_CASE("marker row stays aligned through the stack") {
    // person 0 carries a huge marker; its output row must dominate too,
    // which pins row order through every block.
    const std::size_t d = 8;
    std::mt19937_64 rng(12);
    FrameFeatures f = random_frame(2, d, rng);
    std::vector<double> v = f.persons.values();
    for (std::size_t j = 0; j < d; ++j) v[j] = 100.0 + double(j);
    f.persons = Tensor::from(std::move(v), {2, d});
    StackConfig cfg;
    ModelParams m = init_model(d, cfg, PromptConfig{}, false, 40);
    for (auto& [kind, p] : m.stack_blocks)
        for (double& v : p.ln_gain.values_mut()) v = 1.0;
    Tensor out = interaction_features(f, m.stack_blocks, cfg);
    double n0 = 0.0, n1 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        n0 += out.at(0, j) * out.at(0, j);
        n1 += out.at(1, j) * out.at(1, j);
    }
    CHECK(n0 > 100.0 * n1);
}

TEST_CASE("dimension mismatch between persons and keys throws") {
    std::mt19937_64 rng(13);
    Tensor persons = detail_gc::random_tensor({2, 8}, rng, false);
    Tensor bad_kv = detail_gc::random_tensor({2, 6}, rng, false);
    AttentionBlockParams p = AttentionBlockParams::zeros(8);
    CHECK_THROWS_AS(cross_block(persons, bad_kv, p), DimensionError);
}

TEST_CASE("block kind string round-trip") {
    for (BlockKind k : {BlockKind::Person, BlockKind::Object, BlockKind::Context,
                        BlockKind::Memory})
        CHECK(block_kind_from_string(to_string(k)) == k);
    CHECK_THROWS_AS(block_kind_from_string("frame"), UsageError);
}
