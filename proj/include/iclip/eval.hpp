#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "iclip/errors.hpp"
#include "iclip/feature_store.hpp"
#include "iclip/model.hpp"
#include "iclip/training.hpp"

namespace iclip {

struct DetectionRecord {
    std::string video_id;
    long frame_idx = 0;
    Box box;
    std::string label_name;
    double score = 0.0;
};

// How per-label scores are produced from cosine similarities.
//   Softmax: softmax over the test labels at the training temperature.
//   Cosine:  raw cosine mapped to [0,1] via (cos+1)/2 (rank-equivalent).
enum class ScoreMode { Softmax, Cosine };

inline const char* to_string(ScoreMode m) {
    return m == ScoreMode::Softmax ? "softmax" : "cosine";
}

inline ScoreMode score_mode_from_string(const std::string& s) {
    if (s == "softmax") return ScoreMode::Softmax;
    if (s == "cosine") return ScoreMode::Cosine;
    throw UsageError("unknown score mode '" + s + "'");
}

// Test-label subset of a vocabulary, in split order.
struct TestVocab {
    std::vector<std::string> names;
    Tensor embeddings;  // L_test x D

    static TestVocab from(const LabelVocabulary& vocab, const std::vector<std::string>& names) {
        TestVocab tv;
        tv.names = names;
        std::vector<std::vector<double>> rows;
        for (const std::string& n : names) {
            const int i = vocab.index_of(n);
            if (i < 0) throw UsageError("test label '" + n + "' not in vocabulary");
            rows.push_back(vocab.labels[static_cast<std::size_t>(i)].embedding);
        }
        tv.embeddings = rows_tensor(rows);
        return tv;
    }
};

namespace detail_eval {

inline std::vector<double> label_probs(const Tensor& sims /*1 x L*/, double tau,
                                       ScoreMode mode) {
    if (mode == ScoreMode::Cosine) {
        std::vector<double> out(sims.size());
        for (std::size_t j = 0; j < out.size(); ++j) out[j] = (sims.values()[j] + 1.0) / 2.0;
        return out;
    }
    return softmax_rows(scale(sims, 1.0 / tau)).values();
}

}  // namespace detail_eval

// Model inference for one frame: per person, interaction feature -> prompted
// test labels -> cosine -> class probabilities; detection score is
// person confidence times class probability. `persons` must already be
// confidence-filtered.
inline std::vector<DetectionRecord> score_frame(const FrameBundle& bundle,
                                                const std::vector<PersonDet>& persons,
                                                const std::vector<std::vector<double>>& memory,
                                                const Checkpoint& ck, const TestVocab& tv,
                                                ScoreMode mode = ScoreMode::Softmax) {
    std::vector<DetectionRecord> out;
    if (persons.empty()) return out;
    if (tv.embeddings.extent(1) != ck.dim)
        throw FormatError("score_frame: vocabulary dim " +
                          std::to_string(tv.embeddings.extent(1)) +
                          " does not match checkpoint dim " + std::to_string(ck.dim));
    Tensor feats = frame_interaction_features(persons, bundle, memory, ck.params, ck.stack_cfg);
    for (std::size_t i = 0; i < persons.size(); ++i) {
        Tensor row = take_row(feats, i);
        Tensor labels = prompted_labels_for(tv.embeddings, row, bundle, ck.params,
                                            ck.prompt_cfg.token_mode);
        Tensor sims = matmul(l2_normalize(row), transpose(l2_normalize(labels)));
        const auto probs = detail_eval::label_probs(sims, ck.temperature, mode);
        for (std::size_t j = 0; j < tv.names.size(); ++j)
            out.push_back({bundle.video_id, bundle.frame_idx, persons[i].box, tv.names[j],
                           persons[i].conf * probs[j]});
    }
    return out;
}

// Whole-frame baseline: the context embedding scores every test label and
// every person box in the frame carries the same class distribution.
inline std::vector<DetectionRecord> score_frame_baseline(const FrameBundle& bundle,
                                                         const std::vector<PersonDet>& persons,
                                                         const TestVocab& tv, double tau,
                                                         ScoreMode mode = ScoreMode::Softmax) {
    std::vector<DetectionRecord> out;
    if (persons.empty()) return out;
    Tensor ctx = Tensor::from(bundle.context, {1, bundle.context.size()});
    Tensor sims = matmul(l2_normalize(ctx), transpose(l2_normalize(tv.embeddings)));
    const auto probs = detail_eval::label_probs(sims, tau, mode);
    for (const PersonDet& p : persons)
        for (std::size_t j = 0; j < tv.names.size(); ++j)
            out.push_back(
                {bundle.video_id, bundle.frame_idx, p.box, tv.names[j], p.conf * probs[j]});
    return out;
}

// ---------------------------------------------------------------------------
// PASCAL-style frame AP

// Average precision for one class: detections sorted by score (stable),
// greedy matching to the highest-IoU unmatched GT in the same frame, area
// under the precision envelope (all-point interpolation).
inline double frame_ap(const std::vector<DetectionRecord>& detections,
                       const std::map<std::pair<std::string, long>, std::vector<Box>>& gt,
                       double iou_threshold) {
    if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
        throw UsageError("frame_ap: iou threshold must be in (0,1)");
    std::size_t total_gt = 0;
    for (const auto& [key, boxes] : gt) total_gt += boxes.size();
    if (total_gt == 0) return 0.0;  // callers exclude zero-GT classes from mAP
    if (detections.empty()) return 0.0;

    std::vector<std::size_t> order(detections.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return detections[a].score > detections[b].score;
    });

    std::map<std::pair<std::string, long>, std::vector<bool>> matched;
    for (const auto& [key, boxes] : gt) matched[key].assign(boxes.size(), false);

    std::vector<int> tp(order.size(), 0);
    for (std::size_t r = 0; r < order.size(); ++r) {
        const DetectionRecord& det = detections[order[r]];
        auto it = gt.find({det.video_id, det.frame_idx});
        if (it == gt.end()) continue;
        const std::vector<Box>& boxes = it->second;
        std::vector<bool>& used = matched[it->first];
        double best_iou = 0.0;
        std::size_t best = boxes.size();
        for (std::size_t g = 0; g < boxes.size(); ++g) {
            if (used[g]) continue;
            const double iou = box_iou(det.box, boxes[g]);
            if (iou >= iou_threshold && iou > best_iou) {  // ties keep the lowest GT index
                best_iou = iou;
                best = g;
            }
        }
        if (best < boxes.size()) {
            used[best] = true;
            tp[r] = 1;
        }
    }

    // precision envelope, all-point interpolation
    std::vector<double> prec(order.size()), rec(order.size());
    std::size_t cum_tp = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        cum_tp += static_cast<std::size_t>(tp[r]);
        prec[r] = static_cast<double>(cum_tp) / static_cast<double>(r + 1);
        rec[r] = static_cast<double>(cum_tp) / static_cast<double>(total_gt);
    }
    for (std::size_t r = order.size() - 1; r-- > 0;) prec[r] = std::max(prec[r], prec[r + 1]);
    double ap = 0.0, prev_rec = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        ap += (rec[r] - prev_rec) * prec[r];
        prev_rec = rec[r];
    }
    return ap;
}

struct ClassAp {
    double ap = 0.0;
    std::size_t gt_count = 0;
    std::size_t det_count = 0;
    bool in_map = false;  // classes without GT are excluded and flagged
};

struct EvalReport {
    std::map<std::string, ClassAp> per_class;
    double map = 0.0;
    std::size_t classes_in_map = 0;
    std::string split_id;
    std::string config_digest;
};

inline EvalReport evaluate(const std::vector<DetectionRecord>& detections,
                           const std::vector<GroundTruthRecord>& gts,
                           const std::vector<std::string>& test_labels,
                           double iou_threshold = 0.5) {
    std::set<std::string> allowed(test_labels.begin(), test_labels.end());
    for (const DetectionRecord& d : detections)
        if (!allowed.count(d.label_name))
            throw UsageError("evaluate: detection names unknown label '" + d.label_name + "'");

    std::map<std::string, std::vector<DetectionRecord>> dets_by_class;
    for (const DetectionRecord& d : detections) dets_by_class[d.label_name].push_back(d);
    std::map<std::string, std::map<std::pair<std::string, long>, std::vector<Box>>> gt_by_class;
    for (const GroundTruthRecord& r : gts)
        for (const GtBox& b : r.boxes)
            if (allowed.count(b.label_name))
                gt_by_class[b.label_name][{r.video_id, r.frame_idx}].push_back(b.box);

    EvalReport report;
    double ap_sum = 0.0;
    for (const std::string& name : test_labels) {
        ClassAp c;
        const auto& dets = dets_by_class[name];
        c.det_count = dets.size();
        auto git = gt_by_class.find(name);
        if (git != gt_by_class.end()) {
            for (const auto& [key, boxes] : git->second) c.gt_count += boxes.size();
        }
        if (c.gt_count > 0) {
            c.ap = frame_ap(dets, git->second, iou_threshold);
            c.in_map = true;
            ap_sum += c.ap;
            ++report.classes_in_map;
        }
        report.per_class[name] = c;
    }
    report.map = report.classes_in_map ? ap_sum / static_cast<double>(report.classes_in_map)
                                       : 0.0;
    return report;
}

// ---------------------------------------------------------------------------
// Detections and report files

inline void save_detections(const std::string& path,
                            const std::vector<DetectionRecord>& detections,
                            const std::string& digest = "") {
    using nlohmann::json;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    json header{{"format", "iclip-detections"}, {"version", 1}};
    if (!digest.empty()) header["digest"] = digest;
    out << header.dump() << "\n";
    for (const DetectionRecord& d : detections)
        out << json{{"video_id", d.video_id},
                    {"frame_idx", d.frame_idx},
                    {"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}},
                    {"label_name", d.label_name},
                    {"score", d.score}}
                   .dump()
            << "\n";
}

inline std::vector<DetectionRecord> load_detections(const std::string& path) {
    using nlohmann::json;
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<DetectionRecord> out;
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
        }
        if (!header_seen) {
            if (j.value("format", "") != "iclip-detections" || j.value("version", 0) != 1)
                throw FormatError(path + ":1: missing iclip-detections header");
            header_seen = true;
            continue;
        }
        try {
            DetectionRecord d;
            d.video_id = j.at("video_id").get<std::string>();
            d.frame_idx = j.at("frame_idx").get<long>();
            const auto& b = j.at("box");
            d.box = Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                        b.at(3).get<double>()};
            d.label_name = j.at("label_name").get<std::string>();
            d.score = j.at("score").get<double>();
            out.push_back(std::move(d));
        } catch (const json::exception& e) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline void save_report(const std::string& path, const EvalReport& report) {
    using nlohmann::json;
    json classes = json::object();
    for (const auto& [name, c] : report.per_class)
        classes[name] = json{{"ap", c.ap},
                             {"gt", c.gt_count},
                             {"detections", c.det_count},
                             {"in_map", c.in_map}};
    json j{{"format", "iclip-report"},
           {"version", 1},
           {"map", report.map},
           {"classes_in_map", report.classes_in_map},
           {"classes", classes},
           {"split_id", report.split_id},
           {"config_digest", report.config_digest},
           {"conventions",
            "all-point interpolated AP; detection score = person conf x class probability"}};
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << "\n";
}

}  // namespace iclip
