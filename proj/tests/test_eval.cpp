#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "iclip/ablation.hpp"
#include "iclip/eval.hpp"

using namespace iclip;

namespace {

using GtMap = std::map<std::pair<std::string, long>, std::vector<Box>>;

DetectionRecord det(const std::string& vid, long t, Box b, double score,
                    const std::string& label = "x") {
    return {vid, t, b, label, score};
}

// Independent AP oracle. Matching is re-derived from scratch; the envelope
// integral is replaced by the equivalent per-true-positive form
// AP = (1/G) * sum over TP ranks k of max_{j >= k} precision(j).
double ap_oracle(std::vector<DetectionRecord> dets, const GtMap& gt, double iou_threshold) {
    std::size_t total_gt = 0;
    for (const auto& [k, v] : gt) total_gt += v.size();
    if (total_gt == 0 || dets.empty()) return 0.0;
    std::stable_sort(dets.begin(), dets.end(),
                     [](const auto& a, const auto& b) { return a.score > b.score; });
    GtMap pool = gt;
    std::vector<int> tp(dets.size(), 0);
    for (std::size_t r = 0; r < dets.size(); ++r) {
        auto it = pool.find({dets[r].video_id, dets[r].frame_idx});
        if (it == pool.end()) continue;
        double best_iou = 0.0;
        std::size_t best = it->second.size();
        for (std::size_t g = 0; g < it->second.size(); ++g) {
            const double iou = box_iou(dets[r].box, it->second[g]);
            if (iou >= iou_threshold && iou > best_iou) {
                best_iou = iou;
                best = g;
            }
        }
        if (best < it->second.size()) {
            it->second.erase(it->second.begin() + static_cast<long>(best));
            tp[r] = 1;
        }
    }
    double ap = 0.0;
    std::size_t cum = 0;
    std::vector<double> prec(dets.size());
    for (std::size_t r = 0; r < dets.size(); ++r) {
        cum += static_cast<std::size_t>(tp[r]);
        prec[r] = double(cum) / double(r + 1);
    }
    for (std::size_t r = 0; r < dets.size(); ++r) {
        if (!tp[r]) continue;
        double best = 0.0;
        for (std::size_t j = r; j < dets.size(); ++j) best = std::max(best, prec[j]);
        ap += best / double(total_gt);
    }
    return ap;
}

}  // namespace

TEST_CASE("AP hand cases") {
    const Box g{0, 0, 10, 10};
    GtMap gt{{{"v", 0}, {g}}};

    SECTION("one perfect detection") {
        CHECK(frame_ap({det("v", 0, g, 0.9)}, gt, 0.5) == Catch::Approx(1.0).margin(1e-15));
    }
    SECTION("false positive outranks the true positive") {
        std::vector<DetectionRecord> dets{det("v", 0, Box{50, 50, 60, 60}, 0.9),
                                          det("v", 0, g, 0.8)};
        CHECK(frame_ap(dets, gt, 0.5) == Catch::Approx(0.5).margin(1e-15));
    }
    SECTION("true positive outranks the false positive") {
        std::vector<DetectionRecord> dets{det("v", 0, g, 0.9),
                                          det("v", 0, Box{50, 50, 60, 60}, 0.8)};
        CHECK(frame_ap(dets, gt, 0.5) == Catch::Approx(1.0).margin(1e-15));
    }
    SECTION("missed GT caps recall") {
        GtMap gt2{{{"v", 0}, {g, Box{100, 100, 110, 110}}}};
        CHECK(frame_ap({det("v", 0, g, 0.9)}, gt2, 0.5) == Catch::Approx(0.5).margin(1e-15));
    }
    SECTION("each GT can be matched at most once") {
        // two detections on the same single GT: second one is a false positive
        std::vector<DetectionRecord> dets{det("v", 0, g, 0.9), det("v", 0, g, 0.8)};
        CHECK(frame_ap(dets, gt, 0.5) == Catch::Approx(1.0).margin(1e-15));
        GtMap gt2{{{"v", 0}, {g, Box{100, 100, 110, 110}}}};
        // ... and recall stays at 1/2, so AP = 0.5
        CHECK(frame_ap(dets, gt2, 0.5) == Catch::Approx(0.5).margin(1e-15));
    }
    SECTION("greedy picks the highest-IoU ground truth") {
        Box g2{2, 0, 12, 10};
        GtMap gt2{{{"v", 0}, {g, g2}}};
        // detection closer to g2; a second detection then still matches g
        std::vector<DetectionRecord> dets{det("v", 0, Box{2, 0, 12, 10}, 0.9),
                                          det("v", 0, Box{0, 0, 10, 10}, 0.8)};
        CHECK(frame_ap(dets, gt2, 0.5) == Catch::Approx(1.0).margin(1e-15));
    }
    SECTION("zero GT returns zero") { CHECK(frame_ap({det("v", 0, g, 1.0)}, {}, 0.5) == 0.0); }
    SECTION("no detections returns zero") {
        CHECK(frame_ap({}, gt, 0.5) == 0.0);
    }
    SECTION("bad threshold") { CHECK_THROWS_AS(frame_ap({}, gt, 0.0), UsageError); }
}

TEST_CASE("AP is invariant under monotone score transforms") {
    std::mt19937_64 rng(5);
    const Box g{0, 0, 10, 10};
    GtMap gt{{{"v", 0}, {g, Box{20, 20, 30, 30}}}};
    std::vector<DetectionRecord> dets;
    for (int i = 0; i < 6; ++i)
        dets.push_back(det("v", 0,
                           Box{uniform_range(rng, 0.0, 20.0), 0.0,
                               uniform_range(rng, 21.0, 40.0), 10.0},
                           uniform01(rng)));
    const double base = frame_ap(dets, gt, 0.3);
    for (DetectionRecord& d : dets) d.score = std::exp(3.0 * d.score) + 7.0;
    CHECK(frame_ap(dets, gt, 0.3) == Catch::Approx(base).margin(1e-12));
}

TEST_CASE("frame_ap matches the brute-force oracle on random micro-instances") {
    std::mt19937_64 rng(99);
    auto rand_box = [&](double span) {
        const double x = uniform_range(rng, 0.0, span), y = uniform_range(rng, 0.0, span);
        return Box{x, y, x + uniform_range(rng, 2.0, 10.0), y + uniform_range(rng, 2.0, 10.0)};
    };
    for (int inst = 0; inst < 200; ++inst) {
        GtMap gt;
        const int n_gt = 1 + int(uniform01(rng) * 3.0);
        for (int g = 0; g < n_gt; ++g) {
            const long t = long(uniform01(rng) * 2.0);
            gt[{"v", t}].push_back(rand_box(12.0));
        }
        std::vector<DetectionRecord> dets;
        const int n_det = int(uniform01(rng) * 5.0);
        for (int d = 0; d < n_det; ++d) {
            // quantized scores so ties happen regularly
            const double score = std::floor(uniform01(rng) * 4.0) / 4.0;
            dets.push_back(det("v", long(uniform01(rng) * 2.0), rand_box(12.0), score));
        }
        INFO("instance " << inst);
        CHECK(frame_ap(dets, gt, 0.3) ==
              Catch::Approx(ap_oracle(dets, gt, 0.3)).margin(1e-12));
    }
}

TEST_CASE("evaluate flags zero-GT classes and excludes them from mAP") {
    std::vector<GroundTruthRecord> gts;
    GroundTruthRecord r;
    r.video_id = "v";
    r.frame_idx = 0;
    r.boxes.push_back({Box{0, 0, 10, 10}, "a"});
    gts.push_back(r);

    std::vector<DetectionRecord> dets{det("v", 0, Box{0, 0, 10, 10}, 0.9, "a"),
                                      det("v", 0, Box{0, 0, 10, 10}, 0.4, "b")};
    EvalReport rep = evaluate(dets, gts, {"a", "b"}, 0.5);
    CHECK(rep.per_class.at("a").in_map);
    CHECK_FALSE(rep.per_class.at("b").in_map);
    CHECK(rep.classes_in_map == 1);
    CHECK(rep.map == Catch::Approx(1.0).margin(1e-15));

    CHECK_THROWS_AS(evaluate({det("v", 0, Box{0, 0, 1, 1}, 0.5, "ghost")}, gts, {"a"}, 0.5),
                    UsageError);
}

TEST_CASE("detections round-trip") {
    namespace fs = std::filesystem;
    const std::string p = (fs::temp_directory_path() / "iclip_test_dets.jsonl").string();
    std::vector<DetectionRecord> dets{det("v", 3, Box{1, 2, 3, 4}, 0.25, "a"),
                                      det("w", 0, Box{0, 0, 5, 5}, 0.75, "b")};
    save_detections(p, dets, "dg");
    auto loaded = load_detections(p);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].video_id == "v");
    CHECK(loaded[0].frame_idx == 3);
    CHECK(loaded[0].box.x2 == 3.0);
    CHECK(loaded[1].score == 0.75);
}

TEST_CASE("baseline scoring gives every person the same class distribution") {
    FrameBundle fb;
    fb.video_id = "v";
    fb.context = {1.0, 0.0, 0.0, 0.0};
    fb.persons.push_back({Box{0, 0, 10, 10}, 0.8, {0, 1, 0, 0}});
    fb.persons.push_back({Box{20, 20, 30, 30}, 0.5, {0, 0, 1, 0}});

    LabelVocabulary vocab;
    vocab.labels.push_back({"a", {1, 0, 0, 0}});
    vocab.labels.push_back({"b", {0, 1, 0, 0}});
    TestVocab tv = TestVocab::from(vocab, {"a", "b"});

    auto recs = score_frame_baseline(fb, fb.persons, tv, 0.05);
    REQUIRE(recs.size() == 4);
    // scores divide by conf to recover the shared distribution
    CHECK(recs[0].score / 0.8 == Catch::Approx(recs[2].score / 0.5).margin(1e-12));
    CHECK(recs[1].score / 0.8 == Catch::Approx(recs[3].score / 0.5).margin(1e-12));
    // context points at label a
    CHECK(recs[0].score > recs[1].score);
}

TEST_CASE("model scoring differentiates persons and respects dims") {
    SynthConfig cfg;
    cfg.n_labels = 6;
    cfg.dim = 16;
    cfg.videos = 2;
    cfg.frames_per_video = 3;
    cfg.sigma = 0.1;
    SynthOutput synth = synthesize(cfg);
    SplitSpec split = make_split(synth.vocab, 0.75, 1);

    TrainConfig tcfg;
    tcfg.iterations = 2;
    tcfg.warmup_iterations = 0;
    tcfg.temperature = 0.1;
    StackConfig scfg;
    PromptConfig pcfg;
    pcfg.ffn_hidden = 32;
    TrainResult tr = train(synth.frames, synth.ground_truth, synth.vocab, split, scfg, pcfg,
                           true, tcfg);

    TestVocab tv = TestVocab::from(synth.vocab, split.test_labels);
    const FrameBundle& fb = synth.frames[0];
    auto recs = score_frame(fb, fb.persons, {}, tr.checkpoint, tv);
    CHECK(recs.size() == fb.persons.size() * split.test_labels.size());
    // two persons with different features should not share a distribution
    bool differ = false;
    for (std::size_t j = 0; j < split.test_labels.size(); ++j)
        differ = differ || std::abs(recs[j].score - recs[j + split.test_labels.size()].score) >
                               1e-9;
    CHECK(differ);

    // dim mismatch between vocabulary and checkpoint
    LabelVocabulary small;
    small.labels.push_back({"t", {1.0, 0.0}});
    TestVocab bad = TestVocab::from(small, {"t"});
    CHECK_THROWS_AS(score_frame(fb, fb.persons, {}, tr.checkpoint, bad), FormatError);
}

TEST_CASE("score modes rank identically") {
    FrameBundle fb;
    fb.video_id = "v";
    fb.context = {0.6, 0.8, 0.0};
    fb.persons.push_back({Box{0, 0, 10, 10}, 1.0, {1, 0, 0}});
    LabelVocabulary vocab;
    vocab.labels.push_back({"a", {1, 0, 0}});
    vocab.labels.push_back({"b", {0, 1, 0}});
    vocab.labels.push_back({"c", {0, 0, 1}});
    TestVocab tv = TestVocab::from(vocab, {"a", "b", "c"});
    auto sm = score_frame_baseline(fb, fb.persons, tv, 0.1, ScoreMode::Softmax);
    auto cs = score_frame_baseline(fb, fb.persons, tv, 0.1, ScoreMode::Cosine);
    auto rank = [](const std::vector<DetectionRecord>& r) {
        std::vector<std::size_t> idx(r.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(),
                  [&](std::size_t a, std::size_t b) { return r[a].score > r[b].score; });
        return idx;
    };
    CHECK(rank(sm) == rank(cs));
    for (const auto& d : cs) {
        CHECK(d.score >= 0.0);
        CHECK(d.score <= 1.0);
    }
}
