#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "iclip/errors.hpp"
#include "iclip/eval.hpp"
#include "iclip/feature_store.hpp"
#include "iclip/interaction.hpp"
#include "iclip/model.hpp"
#include "iclip/training.hpp"
#include "iclip/util.hpp"

namespace iclip {

// One flat configuration for the whole workflow; command-line flags override
// file values and the digest is computed over the merged result.
struct RunConfig {
    // fixture synthesis
    std::size_t labels = 24;
    std::size_t dim = 32;
    std::size_t videos = 24;
    std::size_t frames_per_video = 12;
    std::size_t persons_per_frame = 2;
    double alpha = 1.0;
    double sigma = 0.5;
    double object_signal = 0.5;
    // split
    double split_ratio = 0.75;
    // stack
    std::vector<std::string> order{"person", "object", "context", "memory"};
    std::size_t memory_window = 4;
    // prompting
    bool use_iap = true;
    std::size_t prompt_blocks = 2;
    std::size_t heads = 4;
    std::size_t ffn_hidden = 0;  // 0 -> 4*dim
    std::string prompt_tokens = "pooled";
    // training
    std::size_t iterations = 400;
    std::size_t warmup_iterations = 40;
    double base_lr = 0.0002;
    std::size_t batch_size = 8;
    double temperature = 0.01;
    // inference / evaluation
    double conf_threshold = 0.2;
    double iou_threshold = 0.5;
    std::string score_mode = "softmax";
    // shared
    std::uint64_t seed = 1;

    void validate() const {
        auto positive = [](std::size_t v, const char* name) {
            if (v == 0) throw UsageError(std::string("config: ") + name + " must be positive");
        };
        positive(labels, "labels");
        positive(dim, "dim");
        positive(videos, "videos");
        positive(frames_per_video, "frames_per_video");
        positive(persons_per_frame, "persons_per_frame");
        positive(prompt_blocks, "prompt_blocks");
        positive(heads, "heads");
        if (dim % heads != 0) throw UsageError("config: heads must divide dim");
        if (alpha < 0.0 || sigma < 0.0 || object_signal < 0.0)
            throw UsageError("config: alpha, sigma, object_signal must be non-negative");
        if (!(split_ratio > 0.0 && split_ratio < 1.0))
            throw UsageError("config: split_ratio must be in (0,1)");
        if (!(temperature > 0.0)) throw UsageError("config: temperature must be positive");
        if (conf_threshold < 0.0 || conf_threshold > 1.0)
            throw UsageError("config: conf_threshold must be in [0,1]");
        if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
            throw UsageError("config: iou_threshold must be in (0,1)");
        if (warmup_iterations > iterations)
            throw UsageError("config: warmup_iterations exceeds iterations");
        if (batch_size < 2) throw UsageError("config: batch_size must be >= 2");
        stack_config().validate();           // rejects duplicate blocks
        prompt_token_mode_from_string(prompt_tokens);
        score_mode_from_string(score_mode);
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"labels", labels},
                              {"dim", dim},
                              {"videos", videos},
                              {"frames_per_video", frames_per_video},
                              {"persons_per_frame", persons_per_frame},
                              {"alpha", alpha},
                              {"sigma", sigma},
                              {"object_signal", object_signal},
                              {"split_ratio", split_ratio},
                              {"order", order},
                              {"memory_window", memory_window},
                              {"use_iap", use_iap},
                              {"prompt_blocks", prompt_blocks},
                              {"heads", heads},
                              {"ffn_hidden", ffn_hidden},
                              {"prompt_tokens", prompt_tokens},
                              {"iterations", iterations},
                              {"warmup_iterations", warmup_iterations},
                              {"base_lr", base_lr},
                              {"batch_size", batch_size},
                              {"temperature", temperature},
                              {"conf_threshold", conf_threshold},
                              {"iou_threshold", iou_threshold},
                              {"score_mode", score_mode},
                              {"seed", seed}};
    }

    // Stable hash of the merged effective config; stamped on every output.
    std::string digest() const { return to_hex(fnv1a64(to_json().dump())); }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig c;
        auto get = [&](const char* key, auto& slot) {
            if (!j.contains(key)) return;
            try {
                slot = j.at(key).get<std::decay_t<decltype(slot)>>();
            } catch (const nlohmann::json::exception&) {
                throw UsageError(std::string("config: bad value for field '") + key + "'");
            }
        };
        get("labels", c.labels);
        get("dim", c.dim);
        get("videos", c.videos);
        get("frames_per_video", c.frames_per_video);
        get("persons_per_frame", c.persons_per_frame);
        get("alpha", c.alpha);
        get("sigma", c.sigma);
        get("object_signal", c.object_signal);
        get("split_ratio", c.split_ratio);
        get("order", c.order);
        get("memory_window", c.memory_window);
        get("use_iap", c.use_iap);
        get("prompt_blocks", c.prompt_blocks);
        get("heads", c.heads);
        get("ffn_hidden", c.ffn_hidden);
        get("prompt_tokens", c.prompt_tokens);
        get("iterations", c.iterations);
        get("warmup_iterations", c.warmup_iterations);
        get("base_lr", c.base_lr);
        get("batch_size", c.batch_size);
        get("temperature", c.temperature);
        get("conf_threshold", c.conf_threshold);
        get("iou_threshold", c.iou_threshold);
        get("score_mode", c.score_mode);
        get("seed", c.seed);
        for (auto it = j.begin(); it != j.end(); ++it)
            if (!c.to_json().contains(it.key()))
                throw UsageError("config: unknown field '" + it.key() + "'");
        return c;
    }

    static RunConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path + ": bad JSON: " + e.what());
        }
        return from_json(j);
    }

    SynthConfig synth_config() const {
        return SynthConfig{labels,         dim,   videos, frames_per_video, persons_per_frame,
                           alpha,          sigma, object_signal, seed};
    }

    StackConfig stack_config() const {
        StackConfig s;
        s.order.clear();
        for (const std::string& n : order) s.order.push_back(block_kind_from_string(n));
        s.memory_window = memory_window;
        return s;
    }

    PromptConfig prompt_config() const {
        PromptConfig p;
        p.blocks = prompt_blocks;
        p.heads = heads;
        p.ffn_hidden = ffn_hidden;
        p.token_mode = prompt_token_mode_from_string(prompt_tokens);
        return p;
    }

    TrainConfig train_config() const {
        return TrainConfig{iterations, warmup_iterations, base_lr, batch_size, temperature,
                           seed};
    }
};

}  // namespace iclip
