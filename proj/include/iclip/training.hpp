#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "iclip/errors.hpp"
#include "iclip/feature_store.hpp"
#include "iclip/model.hpp"
#include "iclip/util.hpp"

namespace iclip {

// ---------------------------------------------------------------------------
// Zero-shot label splits

struct SplitSpec {
    double ratio = 0.75;
    std::uint64_t seed = 1;
    std::vector<std::string> train_labels;
    std::vector<std::string> test_labels;

    // Stable identifier over the split content.
    std::string id() const {
        std::uint64_t h = fnv1a64(std::to_string(ratio));
        h = fnv1a64(std::to_string(seed), h);
        for (const auto& n : train_labels) h = fnv1a64(n + "|", h);
        h = fnv1a64("/", h);
        for (const auto& n : test_labels) h = fnv1a64(n + "|", h);
        return to_hex(h);
    }
};

// Seed-deterministic shuffle; the first floor(ratio * L) labels train.
inline SplitSpec make_split(const LabelVocabulary& vocab, double ratio, std::uint64_t seed) {
    const std::size_t total = vocab.size();
    if (!(ratio > 0.0 && ratio < 1.0)) throw UsageError("make_split: ratio must be in (0,1)");
    const std::size_t n_train = static_cast<std::size_t>(std::floor(ratio * total));
    if (n_train < 1 || total - n_train < 1)
        throw UsageError("make_split: degenerate ratio leaves an empty side");
    std::vector<std::size_t> perm(total);
    for (std::size_t i = 0; i < total; ++i) perm[i] = i;
    std::mt19937_64 rng(seed);
    for (std::size_t i = total - 1; i > 0; --i)
        std::swap(perm[i], perm[static_cast<std::size_t>(uniform01(rng) * (i + 1))]);
    SplitSpec s;
    s.ratio = ratio;
    s.seed = seed;
    for (std::size_t i = 0; i < total; ++i) {
        const std::string& name = vocab.labels[perm[i]].name;
        (i < n_train ? s.train_labels : s.test_labels).push_back(name);
    }
    return s;
}

inline void save_split(const std::string& path, const SplitSpec& s) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    nlohmann::json j{{"ratio", s.ratio},
                     {"seed", s.seed},
                     {"train", s.train_labels},
                     {"test", s.test_labels}};
    out << j.dump(2) << "\n";
}

inline SplitSpec load_split(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": bad JSON: " + e.what());
    }
    SplitSpec s;
    try {
        s.ratio = j.at("ratio").get<double>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.train_labels = j.at("train").get<std::vector<std::string>>();
        s.test_labels = j.at("test").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
    std::set<std::string> train(s.train_labels.begin(), s.train_labels.end());
    for (const auto& n : s.test_labels)
        if (train.count(n)) throw FormatError(path + ": label '" + n + "' on both sides");
    return s;
}

// ---------------------------------------------------------------------------
// Loss and schedule

struct TrainConfig {
    std::size_t iterations = 400;
    std::size_t warmup_iterations = 40;
    double base_lr = 0.0002;
    std::size_t batch_size = 8;  // person boxes per step
    double temperature = 0.01;
    std::uint64_t seed = 1;

    void validate() const {
        if (warmup_iterations > iterations)
            throw UsageError("train config: warmup_iterations exceeds iterations");
        if (!(temperature > 0.0)) throw UsageError("train config: temperature must be positive");
        if (batch_size < 2) throw UsageError("train config: batch_size must be >= 2");
    }
};

// Linear ramp 0 -> base_lr over the warmup, constant afterwards.
inline double lr_at(std::size_t step, const TrainConfig& cfg) {
    if (cfg.warmup_iterations > 0 && step < cfg.warmup_iterations)
        return cfg.base_lr * static_cast<double>(step) /
               static_cast<double>(cfg.warmup_iterations);
    return cfg.base_lr;
}

// InfoNCE over L2-normalized features against each person's own prompted
// label set: -(1/N) sum_i log softmax_j(p_i . c_ij / tau)[target_i].
inline Tensor contrastive_loss(const Tensor& features, const std::vector<Tensor>& prompted,
                               const std::vector<std::size_t>& targets, double tau) {
    if (!(tau > 0.0)) throw UsageError("contrastive_loss: temperature must be positive");
    if (features.rank() != 2)
        throw DimensionError("contrastive_loss: features must be N x D");
    const std::size_t n = features.extent(0);
    if (prompted.size() != n || targets.size() != n)
        throw UsageError("contrastive_loss: batch size mismatch between features (" +
                         std::to_string(n) + "), prompted sets (" +
                         std::to_string(prompted.size()) + ") and targets (" +
                         std::to_string(targets.size()) + ")");
    const std::size_t l = prompted[0].extent(0);
    for (std::size_t i = 0; i < n; ++i)
        if (targets[i] >= l)
            throw UsageError("contrastive_loss: target " + std::to_string(targets[i]) +
                             " out of range for " + std::to_string(l) + " labels");
    Tensor p = l2_normalize(features);
    std::vector<Tensor> sim_rows;
    sim_rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        sim_rows.push_back(matmul(take_row(p, i), transpose(l2_normalize(prompted[i]))));
    Tensor logits = scale(concat_rows(sim_rows), 1.0 / tau);
    Tensor picked = gather_rows(softmax_rows(logits), targets);
    Tensor loss = scale(sum(elem_log(picked)), -1.0 / static_cast<double>(n));
    check_finite(loss, "contrastive_loss");
    return loss;
}

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
    std::size_t dim = 0;
    StackConfig stack_cfg;
    PromptConfig prompt_cfg;
    ModelParams params;
    double temperature = 0.01;
    std::string vocab_hash;
    std::string config_digest;
};

inline void save_checkpoint(const std::string& path, Checkpoint& ck) {
    using nlohmann::json;
    json order = json::array();
    for (BlockKind k : ck.stack_cfg.order) order.push_back(to_string(k));
    json params = json::object();
    ck.params.for_each([&](const std::string& name, Tensor& t) {
        params[name] = json{{"shape", t.shape()}, {"values", t.values()}};
    });
    json j{{"format", "iclip-checkpoint"},
           {"version", 1},
           {"dim", ck.dim},
           {"stack", json{{"order", order}, {"memory_window", ck.stack_cfg.memory_window}}},
           {"prompt", json{{"blocks", ck.prompt_cfg.blocks},
                           {"heads", ck.prompt_cfg.heads},
                           {"ffn_hidden", ck.prompt_cfg.hidden_for(ck.dim)},
                           {"token_mode", to_string(ck.prompt_cfg.token_mode)}}},
           {"use_iap", ck.params.use_iap},
           {"temperature", ck.temperature},
           {"vocab_hash", ck.vocab_hash},
           {"config_digest", ck.config_digest},
           {"params", params}};
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << "\n";
}

inline Checkpoint load_checkpoint(const std::string& path) {
    using nlohmann::json;
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(path + ": bad JSON: " + e.what());
    }
    if (j.value("format", "") != "iclip-checkpoint" || j.value("version", 0) != 1)
        throw FormatError(path + ": not a version-1 iclip checkpoint");
    Checkpoint ck;
    try {
        ck.dim = j.at("dim").get<std::size_t>();
        ck.stack_cfg.order.clear();
        for (const auto& s : j.at("stack").at("order"))
            ck.stack_cfg.order.push_back(block_kind_from_string(s.get<std::string>()));
        ck.stack_cfg.memory_window = j.at("stack").at("memory_window").get<std::size_t>();
        ck.prompt_cfg.blocks = j.at("prompt").at("blocks").get<std::size_t>();
        ck.prompt_cfg.heads = j.at("prompt").at("heads").get<std::size_t>();
        ck.prompt_cfg.ffn_hidden = j.at("prompt").at("ffn_hidden").get<std::size_t>();
        ck.prompt_cfg.token_mode =
            prompt_token_mode_from_string(j.at("prompt").at("token_mode").get<std::string>());
        ck.temperature = j.at("temperature").get<double>();
        ck.vocab_hash = j.at("vocab_hash").get<std::string>();
        ck.config_digest = j.at("config_digest").get<std::string>();
        const bool use_iap = j.at("use_iap").get<bool>();
        ck.params = init_model(ck.dim, ck.stack_cfg, ck.prompt_cfg, use_iap, 0, true);
        const json& params = j.at("params");
        std::size_t found = 0;
        ck.params.for_each([&](const std::string& name, Tensor& t) {
            if (!params.contains(name))
                throw FormatError(path + ": missing parameter '" + name + "'");
            const json& pj = params.at(name);
            const auto shape = pj.at("shape").get<std::vector<std::size_t>>();
            if (shape != t.shape())
                throw FormatError(path + ": parameter '" + name + "' has shape " +
                                  shape_str(shape) + ", expected " + shape_str(t.shape()));
            t.values_mut() = pj.at("values").get<std::vector<double>>();
            ++found;
        });
        if (found != params.size())
            throw FormatError(path + ": checkpoint carries unexpected extra parameters");
    } catch (const json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
    return ck;
}

// ---------------------------------------------------------------------------
// Training loop

struct LossPoint {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
};

inline void save_loss_trace(const std::string& path, const std::vector<LossPoint>& trace) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "step,lr,loss\n";
    char buf[128];
    for (const LossPoint& p : trace) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", p.step, p.lr, p.loss);
        out << buf;
    }
}

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<LossPoint> trace;
};

namespace detail_train {

// One supervised person box: its frame, GT-backed detection and train-label
// index.
struct Sample {
    std::size_t frame = 0;   // index into the training frame list
    std::size_t person = 0;  // row in that frame's person batch
    std::size_t target = 0;  // index into split.train_labels
};

struct TrainFrame {
    const FrameBundle* bundle = nullptr;
    std::vector<PersonDet> persons;  // GT boxes, conf = 1, matched features
    std::vector<std::vector<double>> memory;
};

}  // namespace detail_train

// Contrastive SGD over the stack and prompting parameters. Deterministic
// given config.seed. Batches sample frames uniformly until batch_size boxes
// are gathered; when the whole pool fits in one batch the loop degenerates
// to full-batch gradient descent in canonical order.
inline TrainResult train(const std::vector<FrameBundle>& frames,
                         const std::vector<GroundTruthRecord>& gts,
                         const LabelVocabulary& vocab, const SplitSpec& split,
                         const StackConfig& stack_cfg, const PromptConfig& prompt_cfg,
                         bool use_iap, const TrainConfig& cfg,
                         const std::string& config_digest = "") {
    cfg.validate();
    stack_cfg.validate();

    std::map<std::string, std::size_t> train_index;
    for (std::size_t i = 0; i < split.train_labels.size(); ++i) {
        if (vocab.index_of(split.train_labels[i]) < 0)
            throw UsageError("train: split label '" + split.train_labels[i] +
                             "' not in vocabulary");
        train_index[split.train_labels[i]] = i;
    }

    // Group frames per video for the memory window, and index by location.
    std::map<std::string, std::vector<FrameBundle>> by_video;
    for (const FrameBundle& fb : frames) by_video[fb.video_id].push_back(fb);
    std::map<std::pair<std::string, long>, const FrameBundle*> at;
    for (const FrameBundle& fb : frames) at[{fb.video_id, fb.frame_idx}] = &fb;

    // Training persons are the GT boxes (conf = 1) with the feature of the
    // best-overlapping detected person; frames without any train-label box
    // are excluded.
    std::vector<detail_train::TrainFrame> tframes;
    std::vector<detail_train::Sample> pool;
    MemoryWindow window{stack_cfg.memory_window};
    for (const GroundTruthRecord& gt : gts) {
        auto it = at.find({gt.video_id, gt.frame_idx});
        if (it == at.end()) continue;
        const FrameBundle& fb = *it->second;
        detail_train::TrainFrame tf;
        tf.bundle = &fb;
        std::vector<int> labels;  // train index or -1 for test-label persons
        for (const GtBox& g : gt.boxes) {
            double best = 0.0;
            const PersonDet* match = nullptr;
            for (const PersonDet& p : fb.persons) {
                const double iou = box_iou(g.box, p.box);
                if (iou > best) {
                    best = iou;
                    match = &p;
                }
            }
            if (!match || best <= 0.5) continue;  // no usable feature for this GT box
            tf.persons.push_back({g.box, 1.0, match->feat});
            auto li = train_index.find(g.label_name);
            labels.push_back(li == train_index.end() ? -1 : static_cast<int>(li->second));
        }
        if (tf.persons.empty()) continue;
        bool any_train = false;
        for (int l : labels) any_train = any_train || l >= 0;
        if (!any_train) continue;  // test-only frame, invisible during training
        tf.memory = memory_contexts(by_video[gt.video_id], gt.frame_idx, window);
        const std::size_t fi = tframes.size();
        for (std::size_t p = 0; p < labels.size(); ++p)
            if (labels[p] >= 0)
                pool.push_back({fi, p, static_cast<std::size_t>(labels[p])});
        tframes.push_back(std::move(tf));
    }
    if (pool.empty()) throw UsageError("train: empty training set");

    // Frozen text embeddings of the training labels, in split order.
    std::vector<std::vector<double>> c_rows;
    for (const std::string& name : split.train_labels)
        c_rows.push_back(vocab.labels[static_cast<std::size_t>(vocab.index_of(name))].embedding);
    const Tensor c_train = rows_tensor(c_rows);

    TrainResult result;
    result.checkpoint.dim = vocab.dim();
    result.checkpoint.stack_cfg = stack_cfg;
    result.checkpoint.prompt_cfg = prompt_cfg;
    result.checkpoint.temperature = cfg.temperature;
    result.checkpoint.vocab_hash = vocab.hash();
    result.checkpoint.config_digest = config_digest;
    result.checkpoint.params =
        init_model(vocab.dim(), stack_cfg, prompt_cfg, use_iap, cfg.seed);
    ModelParams& model = result.checkpoint.params;

    std::mt19937_64 batch_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    const bool full_batch = pool.size() <= cfg.batch_size;

    for (std::size_t step = 0; step < cfg.iterations; ++step) {
        std::vector<detail_train::Sample> batch;
        if (full_batch) {
            batch = pool;
        } else {
            std::set<std::size_t> used_frames;
            while (batch.size() < cfg.batch_size) {
                const std::size_t fi =
                    static_cast<std::size_t>(uniform01(batch_rng) * tframes.size());
                if (!used_frames.insert(fi).second) continue;
                for (const detail_train::Sample& s : pool)
                    if (s.frame == fi && batch.size() < cfg.batch_size) batch.push_back(s);
            }
        }

        // One stack pass per distinct frame in the batch.
        std::map<std::size_t, Tensor> frame_feats;
        for (const detail_train::Sample& s : batch)
            if (!frame_feats.count(s.frame)) {
                const detail_train::TrainFrame& tf = tframes[s.frame];
                frame_feats.emplace(s.frame,
                                    frame_interaction_features(tf.persons, *tf.bundle,
                                                               tf.memory, model, stack_cfg));
            }

        std::vector<Tensor> feat_rows, prompted;
        std::vector<std::size_t> targets;
        for (const detail_train::Sample& s : batch) {
            Tensor row = take_row(frame_feats.at(s.frame), s.person);
            feat_rows.push_back(row);
            prompted.push_back(prompted_labels_for(c_train, row, *tframes[s.frame].bundle,
                                                   model, prompt_cfg.token_mode));
            targets.push_back(s.target);
        }
        Tensor loss =
            contrastive_loss(concat_rows(feat_rows), prompted, targets, cfg.temperature);

        model.zero_grads();
        backward(loss);
        const double lr = lr_at(step, cfg);
        model.for_each([&](const std::string&, Tensor& t) {
            if (!t.has_grad()) return;
            auto& v = t.values_mut();
            const auto& g = t.grad();
            for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
        });
        result.trace.push_back({step, lr, loss.values()[0]});
    }
    return result;
}

}  // namespace iclip
