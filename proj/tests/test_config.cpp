#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "iclip/ablation.hpp"
#include "iclip/run_config.hpp"

using namespace iclip;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
    return (fs::temp_directory_path() / ("iclip_test_" + name)).string();
}

}  // namespace

TEST_CASE("default config validates and digests are stable") {
    RunConfig cfg;
    cfg.validate();
    CHECK(cfg.digest() == RunConfig{}.digest());
    RunConfig other;
    other.seed = 2;
    CHECK(cfg.digest() != other.digest());
}

TEST_CASE("config json round-trip") {
    RunConfig cfg;
    cfg.dim = 16;
    cfg.order = {"context", "person"};
    cfg.temperature = 0.07;
    RunConfig back = RunConfig::from_json(cfg.to_json());
    CHECK(back.digest() == cfg.digest());
    CHECK(back.order == cfg.order);
}

TEST_CASE("config file loading and errors") {
    const std::string p = tmp_path("config.json");
    {
        std::ofstream out(p);
        out << R"({"dim": 16, "heads": 2, "temperature": 0.05})";
    }
    RunConfig cfg = RunConfig::load(p);
    CHECK(cfg.dim == 16);
    CHECK(cfg.heads == 2);
    CHECK(cfg.labels == 24);  // untouched fields keep defaults

    {
        std::ofstream out(p);
        out << R"({"dim": 16, "unknown_knob": 3})";
    }
    CHECK_THROWS_AS(RunConfig::load(p), UsageError);

    {
        std::ofstream out(p);
        out << R"({"dim": "wide"})";
    }
    CHECK_THROWS_AS(RunConfig::load(p), UsageError);

    {
        std::ofstream out(p);
        out << "not json";
    }
    CHECK_THROWS_AS(RunConfig::load(p), FormatError);
    CHECK_THROWS_AS(RunConfig::load(tmp_path("missing_config.json")), IoError);
}

TEST_CASE("config validation rejects bad values") {
    auto expect_bad = [](auto mutate) {
        RunConfig cfg;
        mutate(cfg);
        CHECK_THROWS_AS(cfg.validate(), UsageError);
    };
    expect_bad([](RunConfig& c) { c.dim = 0; });
    expect_bad([](RunConfig& c) { c.heads = 5; });  // must divide dim = 32... 5 does not
    expect_bad([](RunConfig& c) { c.split_ratio = 1.0; });
    expect_bad([](RunConfig& c) { c.temperature = 0.0; });
    expect_bad([](RunConfig& c) { c.conf_threshold = 1.5; });
    expect_bad([](RunConfig& c) { c.order = {"person", "person"}; });
    expect_bad([](RunConfig& c) { c.order = {"frame"}; });
    expect_bad([](RunConfig& c) { c.score_mode = "argmax"; });
    expect_bad([](RunConfig& c) { c.prompt_tokens = "everything"; });
    expect_bad([](RunConfig& c) { c.warmup_iterations = c.iterations + 1; });
    expect_bad([](RunConfig& c) { c.batch_size = 1; });
}

TEST_CASE("ablation matrix has the expected fourteen rows") {
    auto rows = ablation_matrix();
    REQUIRE(rows.size() == 14);

    auto units = ablation_unit_rows();
    REQUIRE(units.size() == 8);
    CHECK(units[0].id == "units_P");
    CHECK(units[0].order == std::vector<BlockKind>{BlockKind::Person});
    CHECK_FALSE(units[0].use_iap);
    CHECK(units[1].id == "units_P_iap");
    CHECK(units[1].use_iap);
    CHECK(units[7].order.size() == 4);

    auto order = ablation_order_rows();
    REQUIRE(order.size() == 6);
    std::set<std::string> ids;
    for (const auto& r : order) {
        CHECK(ids.insert(r.id).second);  // all permutations distinct
        REQUIRE(r.order.size() == 4);
        CHECK(r.order.back() == BlockKind::Memory);
        CHECK_FALSE(r.use_iap);
    }
}

TEST_CASE("ablation dry run produces one result per row without artifacts") {
    SynthConfig scfg;
    scfg.n_labels = 6;
    scfg.dim = 8;
    scfg.videos = 1;
    scfg.frames_per_video = 1;
    SynthOutput synth = synthesize(scfg);
    SplitSpec split = make_split(synth.vocab, 0.75, 1);
    RunConfig cfg;
    cfg.dim = 8;
    cfg.heads = 2;
    const std::string dir = tmp_path("ablate_dry");
    fs::remove_all(dir);
    auto results = run_ablation(synth.frames, synth.ground_truth, synth.vocab, split, cfg, dir,
                                /*dry_run=*/true);
    CHECK(results.size() == 14);
    CHECK_FALSE(fs::exists(dir));
}
