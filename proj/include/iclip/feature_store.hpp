#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "iclip/errors.hpp"
#include "iclip/geometry.hpp"
#include "iclip/util.hpp"

namespace iclip {

struct PersonDet {
    Box box;
    double conf = 1.0;
    std::vector<double> feat;
};

struct ObjectDet {
    Box box;
    std::vector<double> feat;
};

// One frame's worth of precomputed embeddings: whole-frame context, person
// crops with detector confidences, and object crops.
struct FrameBundle {
    std::string video_id;
    long frame_idx = 0;
    std::vector<double> context;
    std::vector<PersonDet> persons;
    std::vector<ObjectDet> objects;
};

struct LabelEntry {
    std::string name;
    std::vector<double> embedding;
};

// Ordered label names with their base text embeddings; the order is the
// canonical label index everywhere downstream.
struct LabelVocabulary {
    std::vector<LabelEntry> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return labels.empty() ? 0 : labels[0].embedding.size(); }

    int index_of(const std::string& name) const {
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i].name == name) return static_cast<int>(i);
        return -1;
    }

    // Stable content hash over names and embedding bytes.
    std::string hash() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& l : labels) {
            h = fnv1a64(l.name, h);
            h = fnv1a64(std::string_view("\0", 1), h);
            for (double v : l.embedding) {
                char buf[sizeof(double)];
                std::memcpy(buf, &v, sizeof(double));
                h = fnv1a64(std::string_view(buf, sizeof(double)), h);
            }
        }
        return to_hex(h);
    }
};

struct GtBox {
    Box box;
    std::string label_name;
};

struct GroundTruthRecord {
    std::string video_id;
    long frame_idx = 0;
    std::vector<GtBox> boxes;
};

// Half-width of the temporal neighborhood used by the memory block.
struct MemoryWindow {
    std::size_t half_width = 4;
};

// ---------------------------------------------------------------------------
// Line-record fixture files. Every file starts with a header line
// {"dim":D,"format":"iclip-fixture","version":1} followed by one JSON record
// per line; nlohmann::json sorts keys, so serialization is deterministic.

namespace detail_io {

using nlohmann::json;

inline json header_json(std::size_t dim, const std::string& digest) {
    json h{{"format", "iclip-fixture"}, {"version", 1}, {"dim", dim}};
    if (!digest.empty()) h["digest"] = digest;
    return h;
}

inline std::size_t parse_header(const json& j, const std::string& path) {
    if (!j.is_object() || j.value("format", "") != "iclip-fixture")
        throw FormatError(path + ":1: missing iclip-fixture header");
    if (j.value("version", 0) != 1)
        throw FormatError(path + ":1: unsupported fixture version");
    const auto dim = j.value("dim", 0u);
    if (dim == 0) throw FormatError(path + ":1: header dim must be positive");
    return dim;
}

inline std::string loc(const std::string& path, std::size_t line) {
    return path + ":" + std::to_string(line) + ": ";
}

inline Box parse_box(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 4) throw FormatError(where + "box must be [x1,y1,x2,y2]");
    Box b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
    if (b.x1 >= b.x2) throw FormatError(where + "box: x1 >= x2");
    if (b.y1 >= b.y2) throw FormatError(where + "box: y1 >= y2");
    return b;
}

inline std::vector<double> parse_vec(const json& j, std::size_t dim, const std::string& where) {
    if (!j.is_array()) throw FormatError(where + "expected an array of reals");
    std::vector<double> v = j.get<std::vector<double>>();
    if (v.size() != dim)
        throw FormatError(where + "embedding length " + std::to_string(v.size()) +
                          " does not match dataset dim " + std::to_string(dim));
    return v;
}

inline json box_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

// Shared line-by-line reader; `record` is called for each non-header line.
template <typename Fn>
inline void read_records(const std::string& path, std::size_t* dim_out, Fn&& record) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    std::size_t dim = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(loc(path, lineno) + "bad JSON: " + e.what());
        }
        if (!header_seen) {
            dim = parse_header(j, path);
            header_seen = true;
            continue;
        }
        record(j, lineno, dim);
    }
    if (dim_out) *dim_out = dim;
}

}  // namespace detail_io

inline void save_frames(const std::string& path, const std::vector<FrameBundle>& bundles,
                        std::size_t dim, const std::string& digest = "") {
    using nlohmann::json;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << detail_io::header_json(dim, digest).dump() << "\n";
    for (const FrameBundle& fb : bundles) {
        json persons = json::array();
        for (const PersonDet& p : fb.persons)
            persons.push_back(
                {{"box", detail_io::box_json(p.box)}, {"conf", p.conf}, {"feat", p.feat}});
        json objects = json::array();
        for (const ObjectDet& o : fb.objects)
            objects.push_back({{"box", detail_io::box_json(o.box)}, {"feat", o.feat}});
        json rec{{"video_id", fb.video_id},
                 {"frame_idx", fb.frame_idx},
                 {"context", fb.context},
                 {"persons", persons},
                 {"objects", objects}};
        out << rec.dump() << "\n";
    }
}

inline std::vector<FrameBundle> load_frames(const std::string& path) {
    using nlohmann::json;
    std::vector<FrameBundle> out;
    detail_io::read_records(path, nullptr, [&](const json& j, std::size_t lineno,
                                               std::size_t dim) {
        const std::string where = detail_io::loc(path, lineno);
        FrameBundle fb;
        try {
            fb.video_id = j.at("video_id").get<std::string>();
            fb.frame_idx = j.at("frame_idx").get<long>();
        } catch (const json::exception& e) {
            throw FormatError(where + e.what());
        }
        if (fb.frame_idx < 0) throw FormatError(where + "frame_idx must be non-negative");
        fb.context = detail_io::parse_vec(j.at("context"), dim, where + "context: ");
        for (const json& pj : j.value("persons", json::array())) {
            PersonDet p;
            p.box = detail_io::parse_box(pj.at("box"), where + "person ");
            p.conf = pj.at("conf").get<double>();
            if (p.conf < 0.0 || p.conf > 1.0)
                throw FormatError(where + "person conf outside [0,1]");
            p.feat = detail_io::parse_vec(pj.at("feat"), dim, where + "person feat: ");
            fb.persons.push_back(std::move(p));
        }
        for (const json& oj : j.value("objects", json::array())) {
            ObjectDet o;
            o.box = detail_io::parse_box(oj.at("box"), where + "object ");
            o.feat = detail_io::parse_vec(oj.at("feat"), dim, where + "object feat: ");
            fb.objects.push_back(std::move(o));
        }
        out.push_back(std::move(fb));
    });
    std::stable_sort(out.begin(), out.end(), [](const FrameBundle& a, const FrameBundle& b) {
        return std::tie(a.video_id, a.frame_idx) < std::tie(b.video_id, b.frame_idx);
    });
    return out;
}

inline void save_labels(const std::string& path, const LabelVocabulary& vocab,
                        const std::string& digest = "") {
    using nlohmann::json;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << detail_io::header_json(vocab.dim(), digest).dump() << "\n";
    for (const LabelEntry& l : vocab.labels)
        out << json{{"name", l.name}, {"embedding", l.embedding}}.dump() << "\n";
}

inline LabelVocabulary load_labels(const std::string& path) {
    using nlohmann::json;
    LabelVocabulary vocab;
    std::set<std::string> seen;
    detail_io::read_records(path, nullptr, [&](const json& j, std::size_t lineno,
                                               std::size_t dim) {
        const std::string where = detail_io::loc(path, lineno);
        LabelEntry l;
        try {
            l.name = j.at("name").get<std::string>();
        } catch (const json::exception& e) {
            throw FormatError(where + e.what());
        }
        if (!seen.insert(l.name).second)
            throw FormatError(where + "duplicate label name '" + l.name + "'");
        l.embedding = detail_io::parse_vec(j.at("embedding"), dim, where + "embedding: ");
        vocab.labels.push_back(std::move(l));
    });
    return vocab;
}

inline void save_ground_truth(const std::string& path,
                              const std::vector<GroundTruthRecord>& records, std::size_t dim,
                              const std::string& digest = "") {
    using nlohmann::json;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << detail_io::header_json(dim, digest).dump() << "\n";
    for (const GroundTruthRecord& r : records) {
        json boxes = json::array();
        for (const GtBox& b : r.boxes)
            boxes.push_back({{"box", detail_io::box_json(b.box)}, {"label_name", b.label_name}});
        out << json{{"video_id", r.video_id}, {"frame_idx", r.frame_idx}, {"boxes", boxes}}.dump()
            << "\n";
    }
}

inline std::vector<GroundTruthRecord> load_ground_truth(const std::string& path) {
    using nlohmann::json;
    std::vector<GroundTruthRecord> out;
    detail_io::read_records(path, nullptr, [&](const json& j, std::size_t lineno, std::size_t) {
        const std::string where = detail_io::loc(path, lineno);
        GroundTruthRecord r;
        try {
            r.video_id = j.at("video_id").get<std::string>();
            r.frame_idx = j.at("frame_idx").get<long>();
        } catch (const json::exception& e) {
            throw FormatError(where + e.what());
        }
        for (const json& bj : j.at("boxes")) {
            GtBox g;
            g.box = detail_io::parse_box(bj.at("box"), where + "gt ");
            g.label_name = bj.at("label_name").get<std::string>();
            r.boxes.push_back(std::move(g));
        }
        out.push_back(std::move(r));
    });
    std::stable_sort(out.begin(), out.end(),
                     [](const GroundTruthRecord& a, const GroundTruthRecord& b) {
                         return std::tie(a.video_id, a.frame_idx) <
                                std::tie(b.video_id, b.frame_idx);
                     });
    return out;
}

// ---------------------------------------------------------------------------
// Frame-level filters

// Keep objects whose box overlaps at least one person box (IoU > 0),
// preserving relative order.
inline std::vector<ObjectDet> select_objects(const FrameBundle& bundle) {
    std::vector<ObjectDet> kept;
    for (const ObjectDet& o : bundle.objects) {
        for (const PersonDet& p : bundle.persons) {
            if (box_iou(o.box, p.box) > 0.0) {
                kept.push_back(o);
                break;
            }
        }
    }
    return kept;
}

// Inference-time confidence filter (strict >); training persons come from
// ground truth with conf = 1 and bypass this.
inline std::vector<PersonDet> filter_persons(const FrameBundle& bundle, double threshold) {
    if (threshold < 0.0 || threshold > 1.0)
        throw UsageError("filter_persons: threshold must be in [0,1]");
    std::vector<PersonDet> kept;
    for (const PersonDet& p : bundle.persons)
        if (p.conf > threshold) kept.push_back(p);
    return kept;
}

// Context embeddings of frames with |idx - frame_idx| <= T, current frame
// excluded, in temporal order. `video_frames` must be one video, sorted.
inline std::vector<std::vector<double>> memory_contexts(
    const std::vector<FrameBundle>& video_frames, long frame_idx, const MemoryWindow& window) {
    const long t = static_cast<long>(window.half_width);
    std::vector<std::vector<double>> out;
    for (const FrameBundle& fb : video_frames) {
        if (fb.frame_idx == frame_idx) continue;
        if (fb.frame_idx >= frame_idx - t && fb.frame_idx <= frame_idx + t)
            out.push_back(fb.context);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic fixtures

struct SynthConfig {
    std::size_t n_labels = 24;
    std::size_t dim = 32;
    std::size_t videos = 24;
    std::size_t frames_per_video = 12;
    std::size_t persons_per_frame = 2;
    double alpha = 1.0;          // label signal in person features
    double sigma = 0.5;          // isotropic Gaussian noise
    double object_signal = 0.5;  // label signal in object features
    std::uint64_t seed = 1;
};

struct SynthOutput {
    std::vector<FrameBundle> frames;
    LabelVocabulary vocab;
    std::vector<GroundTruthRecord> ground_truth;
};

namespace detail_synth {

inline std::vector<double> normalized(std::vector<double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    const double n = std::sqrt(s);
    if (!(n > 1e-12)) throw NumericError("synthesize: zero-norm vector");
    for (double& x : v) x /= n;
    return v;
}

inline std::vector<double> random_unit(std::size_t d, std::mt19937_64& rng,
                                       GaussianSampler& gauss) {
    std::vector<double> v(d);
    for (double& x : v) x = gauss(rng);
    return normalized(std::move(v));
}

inline std::string padded(const std::string& prefix, std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%03zu", i);
    return prefix + buf;
}

}  // namespace detail_synth

// Deterministic stand-in for CLIP feature extraction. Each video hosts a
// fixed set of actors with distinct labels; person features carry an
// alpha-weighted label direction plus noise, context features mix the
// frame's actors, objects carry a weaker label signal.
inline SynthOutput synthesize(const SynthConfig& cfg) {
    if (cfg.n_labels < 2) throw UsageError("synthesize: n_labels must be >= 2");
    if (cfg.dim < 4) throw UsageError("synthesize: dim must be >= 4");
    if (cfg.videos == 0 || cfg.frames_per_video == 0 || cfg.persons_per_frame == 0)
        throw UsageError("synthesize: videos, frames_per_video, persons_per_frame must be positive");
    if (cfg.sigma < 0.0 || cfg.alpha < 0.0 || cfg.object_signal < 0.0)
        throw UsageError("synthesize: alpha, sigma, object_signal must be non-negative");

    std::mt19937_64 rng(cfg.seed);
    GaussianSampler gauss;
    SynthOutput out;

    for (std::size_t l = 0; l < cfg.n_labels; ++l)
        out.vocab.labels.push_back({detail_synth::padded("action_", l),
                                    detail_synth::random_unit(cfg.dim, rng, gauss)});

    const double canvas_w = 320.0, canvas_h = 240.0;

    auto noisy_signal = [&](double weight, const std::vector<double>& dir) {
        if (cfg.sigma == 0.0) return dir;  // exact noise-free limit
        std::vector<double> v(cfg.dim);
        for (std::size_t j = 0; j < cfg.dim; ++j)
            v[j] = weight * dir[j] + cfg.sigma * gauss(rng);
        return detail_synth::normalized(std::move(v));
    };

    for (std::size_t v = 0; v < cfg.videos; ++v) {
        const std::string video_id = detail_synth::padded("video_", v);

        // actor labels: distinct within the video when possible
        std::vector<std::size_t> perm(cfg.n_labels);
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        for (std::size_t i = perm.size() - 1; i > 0; --i)
            std::swap(perm[i], perm[static_cast<std::size_t>(uniform01(rng) * (i + 1))]);
        std::vector<std::size_t> actor_labels(cfg.persons_per_frame);
        for (std::size_t a = 0; a < cfg.persons_per_frame; ++a)
            actor_labels[a] = perm[a % cfg.n_labels];

        std::vector<Box> actor_base(cfg.persons_per_frame);
        for (Box& b : actor_base) {
            const double w = uniform_range(rng, 40.0, 80.0);
            const double h = uniform_range(rng, 40.0, 80.0);
            b.x1 = uniform_range(rng, 0.0, canvas_w - w);
            b.y1 = uniform_range(rng, 0.0, canvas_h - h);
            b.x2 = b.x1 + w;
            b.y2 = b.y1 + h;
        }

        for (std::size_t t = 0; t < cfg.frames_per_video; ++t) {
            FrameBundle fb;
            fb.video_id = video_id;
            fb.frame_idx = static_cast<long>(t);
            GroundTruthRecord gt;
            gt.video_id = video_id;
            gt.frame_idx = fb.frame_idx;

            std::vector<double> ctx_target(cfg.dim, 0.0);
            for (std::size_t a = 0; a < cfg.persons_per_frame; ++a) {
                const auto& label_dir = out.vocab.labels[actor_labels[a]].embedding;
                const double dx = uniform_sym(rng, 3.0), dy = uniform_sym(rng, 3.0);
                Box box{std::max(0.0, actor_base[a].x1 + dx),
                        std::max(0.0, actor_base[a].y1 + dy),
                        std::min(canvas_w, actor_base[a].x2 + dx),
                        std::min(canvas_h, actor_base[a].y2 + dy)};

                fb.persons.push_back({box, 1.0, noisy_signal(cfg.alpha, label_dir)});
                gt.boxes.push_back({box, out.vocab.labels[actor_labels[a]].name});
                for (std::size_t j = 0; j < cfg.dim; ++j)
                    ctx_target[j] += cfg.alpha * label_dir[j];

                if (cfg.object_signal > 0.0 || cfg.sigma > 0.0) {
                    // overlap the actor box so select_objects keeps it
                    Box obox{box.x1 + box.width() / 3.0, box.y1 + box.height() / 3.0,
                             std::min(canvas_w, box.x2 + box.width() / 3.0),
                             std::min(canvas_h, box.y2 + box.height() / 3.0)};
                    std::vector<double> of(cfg.dim);
                    double norm2 = 0.0;
                    for (std::size_t j = 0; j < cfg.dim; ++j) {
                        of[j] = cfg.object_signal * label_dir[j] +
                                (cfg.sigma > 0.0 ? cfg.sigma * gauss(rng) : 0.0);
                        norm2 += of[j] * of[j];
                    }
                    if (norm2 > 1e-24)
                        fb.objects.push_back({obox, detail_synth::normalized(std::move(of))});
                }
            }
            for (std::size_t j = 0; j < cfg.dim; ++j)
                ctx_target[j] /= static_cast<double>(cfg.persons_per_frame);
            if (cfg.sigma > 0.0)
                for (std::size_t j = 0; j < cfg.dim; ++j) ctx_target[j] += cfg.sigma * gauss(rng);
            fb.context = detail_synth::normalized(std::move(ctx_target));

            out.frames.push_back(std::move(fb));
            out.ground_truth.push_back(std::move(gt));
        }
    }
    return out;
}

}  // namespace iclip
