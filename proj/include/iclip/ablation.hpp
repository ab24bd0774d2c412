#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "iclip/eval.hpp"
#include "iclip/run_config.hpp"
#include "iclip/training.hpp"

namespace iclip {

struct AblationRowSpec {
    std::string id;
    std::vector<BlockKind> order;
    bool use_iap = false;
};

namespace detail_ablate {

inline std::string order_tag(const std::vector<BlockKind>& order) {
    std::string tag;
    for (BlockKind k : order) tag += static_cast<char>(std::toupper(to_string(k)[0]));
    return tag;
}

}  // namespace detail_ablate

// Unit-importance rows: {P}, {P,C}, {P,C,O}, {P,C,O,M}, each with and
// without prompting (8 configurations).
inline std::vector<AblationRowSpec> ablation_unit_rows() {
    using K = BlockKind;
    const std::vector<std::vector<K>> subsets{
        {K::Person},
        {K::Person, K::Context},
        {K::Person, K::Object, K::Context},
        {K::Person, K::Object, K::Context, K::Memory}};
    std::vector<AblationRowSpec> rows;
    for (const auto& order : subsets)
        for (bool iap : {false, true})
            rows.push_back({"units_" + detail_ablate::order_tag(order) +
                                (iap ? "_iap" : ""),
                            order, iap});
    return rows;
}

// Order-study rows: the six permutations of person/object/context with
// memory pinned last, without prompting.
inline std::vector<AblationRowSpec> ablation_order_rows() {
    using K = BlockKind;
    std::vector<K> heads{K::Person, K::Object, K::Context};
    std::sort(heads.begin(), heads.end());
    std::vector<AblationRowSpec> rows;
    do {
        std::vector<K> order = heads;
        order.push_back(K::Memory);
        rows.push_back({"order_" + detail_ablate::order_tag(order), order, false});
    } while (std::next_permutation(heads.begin(), heads.end()));
    return rows;
}

inline std::vector<AblationRowSpec> ablation_matrix() {
    auto rows = ablation_unit_rows();
    auto order = ablation_order_rows();
    rows.insert(rows.end(), order.begin(), order.end());
    return rows;
}

struct AblationRowResult {
    AblationRowSpec spec;
    double map = 0.0;
};

// Scores one trained configuration on the test split's unseen classes.
inline EvalReport run_model_eval(const std::vector<FrameBundle>& frames,
                                 const std::vector<GroundTruthRecord>& gts,
                                 const LabelVocabulary& vocab, const SplitSpec& split,
                                 const Checkpoint& ck, double conf_threshold,
                                 double iou_threshold, ScoreMode mode,
                                 std::vector<DetectionRecord>* detections_out = nullptr) {
    const TestVocab tv = TestVocab::from(vocab, split.test_labels);
    std::map<std::string, std::vector<FrameBundle>> by_video;
    for (const FrameBundle& fb : frames) by_video[fb.video_id].push_back(fb);
    MemoryWindow window{ck.stack_cfg.memory_window};
    std::vector<DetectionRecord> dets;
    for (const FrameBundle& fb : frames) {
        const auto persons = filter_persons(fb, conf_threshold);
        if (persons.empty()) continue;
        const auto memory = memory_contexts(by_video[fb.video_id], fb.frame_idx, window);
        const auto recs = score_frame(fb, persons, memory, ck, tv, mode);
        dets.insert(dets.end(), recs.begin(), recs.end());
    }
    if (detections_out) *detections_out = dets;
    EvalReport report = evaluate(dets, gts, split.test_labels, iou_threshold);
    report.split_id = split.id();
    return report;
}

inline EvalReport run_baseline_eval(const std::vector<FrameBundle>& frames,
                                    const std::vector<GroundTruthRecord>& gts,
                                    const LabelVocabulary& vocab, const SplitSpec& split,
                                    double conf_threshold, double iou_threshold, double tau,
                                    ScoreMode mode,
                                    std::vector<DetectionRecord>* detections_out = nullptr) {
    const TestVocab tv = TestVocab::from(vocab, split.test_labels);
    std::vector<DetectionRecord> dets;
    for (const FrameBundle& fb : frames) {
        const auto persons = filter_persons(fb, conf_threshold);
        if (persons.empty()) continue;
        const auto recs = score_frame_baseline(fb, persons, tv, tau, mode);
        dets.insert(dets.end(), recs.begin(), recs.end());
    }
    if (detections_out) *detections_out = dets;
    EvalReport report = evaluate(dets, gts, split.test_labels, iou_threshold);
    report.split_id = split.id();
    return report;
}

// Trains and evaluates every ablation row. Each row writes its artifacts to
// its own subdirectory of `out_dir`, so rows can be re-run independently.
inline std::vector<AblationRowResult> run_ablation(const std::vector<FrameBundle>& frames,
                                                   const std::vector<GroundTruthRecord>& gts,
                                                   const LabelVocabulary& vocab,
                                                   const SplitSpec& split, const RunConfig& base,
                                                   const std::string& out_dir,
                                                   bool dry_run = false) {
    namespace fs = std::filesystem;
    const auto rows = ablation_matrix();
    std::vector<AblationRowResult> results;
    nlohmann::json table = nlohmann::json::array();
    for (const AblationRowSpec& row : rows) {
        if (dry_run) {
            results.push_back({row, 0.0});
            continue;
        }
        RunConfig cfg = base;
        cfg.order.clear();
        for (BlockKind k : row.order) cfg.order.push_back(to_string(k));
        cfg.use_iap = row.use_iap;
        cfg.validate();

        TrainResult tr = train(frames, gts, vocab, split, cfg.stack_config(),
                               cfg.prompt_config(), cfg.use_iap, cfg.train_config(),
                               cfg.digest());
        std::vector<DetectionRecord> dets;
        EvalReport report = run_model_eval(frames, gts, vocab, split, tr.checkpoint,
                                           cfg.conf_threshold, cfg.iou_threshold,
                                           score_mode_from_string(cfg.score_mode), &dets);
        report.config_digest = cfg.digest();

        if (!out_dir.empty()) {
            const fs::path dir = fs::path(out_dir) / row.id;
            fs::create_directories(dir);
            save_checkpoint((dir / "checkpoint.json").string(), tr.checkpoint);
            save_loss_trace((dir / "loss_trace.csv").string(), tr.trace);
            save_detections((dir / "detections.jsonl").string(), dets, cfg.digest());
            save_report((dir / "report.json").string(), report);
        }
        results.push_back({row, report.map});
        table.push_back({{"row", row.id},
                         {"order", cfg.order},
                         {"iap", row.use_iap},
                         {"map", report.map}});
    }
    if (!dry_run && !out_dir.empty()) {
        std::ofstream out(fs::path(out_dir) / "ablation.json");
        if (!out) throw IoError("cannot write ablation table in " + out_dir);
        out << nlohmann::json{{"format", "iclip-ablation"},
                              {"version", 1},
                              {"split_id", split.id()},
                              {"config_digest", base.digest()},
                              {"rows", table}}
                   .dump(2)
            << "\n";
    }
    return results;
}

}  // namespace iclip
