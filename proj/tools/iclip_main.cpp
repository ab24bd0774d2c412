// iclip: fixture synthesis, zero-shot splits, contrastive training,
// inference/evaluation, gradient checking and the ablation matrix, all on
// precomputed embedding fixtures.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "iclip/ablation.hpp"
#include "iclip/eval.hpp"
#include "iclip/feature_store.hpp"
#include "iclip/gradcheck_suite.hpp"
#include "iclip/run_config.hpp"
#include "iclip/training.hpp"

namespace fs = std::filesystem;
using namespace iclip;

namespace {

int log_level() {
    const char* v = std::getenv("ICLIP_LOG");
    return v ? std::atoi(v) : 1;
}

void info(const std::string& msg) {
    if (log_level() > 0) std::cout << msg << "\n";
}

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir = ".";
};

RunConfig effective_config(const CommonOpts& opts) {
    RunConfig cfg = opts.config_path.empty() ? RunConfig{} : RunConfig::load(opts.config_path);
    if (opts.seed) cfg.seed = *opts.seed;
    return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "JSON config file; flags override it");
    cmd->add_option("--seed", opts.seed, "override the config seed");
    cmd->add_option("--out", opts.out_dir, "output directory");
}

std::map<std::string, std::vector<FrameBundle>> group_by_video(
    const std::vector<FrameBundle>& frames) {
    std::map<std::string, std::vector<FrameBundle>> by_video;
    for (const FrameBundle& fb : frames) by_video[fb.video_id].push_back(fb);
    return by_video;
}

int cmd_synth(const CommonOpts& opts, const RunConfig& overrides_applied) {
    RunConfig cfg = overrides_applied;
    cfg.validate();
    const std::string digest = cfg.digest();
    SynthOutput synth = synthesize(cfg.synth_config());
    fs::create_directories(opts.out_dir);
    const fs::path dir(opts.out_dir);
    save_frames((dir / "frames.jsonl").string(), synth.frames, cfg.dim, digest);
    save_labels((dir / "labels.jsonl").string(), synth.vocab, digest);
    save_ground_truth((dir / "ground_truth.jsonl").string(), synth.ground_truth, cfg.dim,
                      digest);
    info("wrote " + (dir / "frames.jsonl").string());
    info("wrote " + (dir / "labels.jsonl").string());
    info("wrote " + (dir / "ground_truth.jsonl").string());
    info("config digest " + digest);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"iCLIP zero-shot action detection workbench"};
    app.require_subcommand(1);

    CommonOpts synth_opts, split_opts, train_opts, eval_opts, grad_opts, ablate_opts;

    // synth
    auto* synth = app.add_subcommand("synth", "generate synthetic embedding fixtures");
    add_common(synth, synth_opts);
    std::optional<std::size_t> synth_labels, synth_dim;
    synth->add_option("--labels", synth_labels, "number of action labels");
    synth->add_option("--dim", synth_dim, "embedding dimension");

    // split
    auto* split = app.add_subcommand("split", "generate a zero-shot label split");
    add_common(split, split_opts);
    std::string split_labels_path;
    std::optional<double> split_ratio;
    split->add_option("--labels-file", split_labels_path, "labels fixture")->required();
    split->add_option("--ratio", split_ratio, "train fraction");

    // train
    auto* train_cmd = app.add_subcommand("train", "train the interaction + prompting stack");
    add_common(train_cmd, train_opts);
    std::string tr_frames, tr_labels, tr_gt, tr_split;
    std::optional<std::size_t> tr_iterations;
    train_cmd->add_option("--frames", tr_frames, "frames fixture")->required();
    train_cmd->add_option("--labels-file", tr_labels, "labels fixture")->required();
    train_cmd->add_option("--gt", tr_gt, "ground-truth fixture")->required();
    train_cmd->add_option("--split", tr_split, "split file")->required();
    train_cmd->add_option("--iterations", tr_iterations, "override training iterations");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "run inference and frame-mAP evaluation");
    add_common(eval_cmd, eval_opts);
    std::string ev_frames, ev_labels, ev_gt, ev_split, ev_checkpoint;
    bool ev_baseline = false;
    eval_cmd->add_option("--frames", ev_frames, "frames fixture")->required();
    eval_cmd->add_option("--labels-file", ev_labels, "labels fixture")->required();
    eval_cmd->add_option("--gt", ev_gt, "ground-truth fixture")->required();
    eval_cmd->add_option("--split", ev_split, "split file")->required();
    eval_cmd->add_option("--checkpoint", ev_checkpoint, "trained checkpoint");
    eval_cmd->add_flag("--baseline", ev_baseline, "score with the whole-frame baseline");

    // gradcheck
    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every operation");
    add_common(grad, grad_opts);
    std::size_t grad_seeds = 20;
    bool grad_inject = false;
    grad->add_option("--seeds", grad_seeds, "number of random seeds");
    grad->add_flag("--inject-error", grad_inject, "corrupt one gradient (negative control)");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "unit-importance, order and IAP ablations");
    add_common(ablate, ablate_opts);
    std::string ab_frames, ab_labels, ab_gt, ab_split;
    bool ab_dry_run = false;
    ablate->add_option("--frames", ab_frames, "frames fixture")->required();
    ablate->add_option("--labels-file", ab_labels, "labels fixture")->required();
    ablate->add_option("--gt", ab_gt, "ground-truth fixture")->required();
    ablate->add_option("--split", ab_split, "split file")->required();
    ablate->add_flag("--dry-run", ab_dry_run, "print the configuration matrix only");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            RunConfig cfg = effective_config(synth_opts);
            if (synth_labels) cfg.labels = *synth_labels;
            if (synth_dim) cfg.dim = *synth_dim;
            return cmd_synth(synth_opts, cfg);
        }

        if (split->parsed()) {
            RunConfig cfg = effective_config(split_opts);
            if (split_ratio) cfg.split_ratio = *split_ratio;
            cfg.validate();
            const LabelVocabulary vocab = load_labels(split_labels_path);
            const SplitSpec spec = make_split(vocab, cfg.split_ratio, cfg.seed);
            fs::create_directories(split_opts.out_dir);
            const std::string path = (fs::path(split_opts.out_dir) / "split.json").string();
            save_split(path, spec);
            info("wrote " + path + " (" + std::to_string(spec.train_labels.size()) + " train / " +
                 std::to_string(spec.test_labels.size()) + " test)");
            return 0;
        }

        if (train_cmd->parsed()) {
            RunConfig cfg = effective_config(train_opts);
            if (tr_iterations) {
                cfg.iterations = *tr_iterations;
                cfg.warmup_iterations = std::min(cfg.warmup_iterations, cfg.iterations);
            }
            cfg.validate();
            const auto frames = load_frames(tr_frames);
            const auto vocab = load_labels(tr_labels);
            const auto gts = load_ground_truth(tr_gt);
            const auto spec = load_split(tr_split);
            TrainResult result = train(frames, gts, vocab, spec, cfg.stack_config(),
                                       cfg.prompt_config(), cfg.use_iap, cfg.train_config(),
                                       cfg.digest());
            fs::create_directories(train_opts.out_dir);
            const fs::path dir(train_opts.out_dir);
            save_checkpoint((dir / "checkpoint.json").string(), result.checkpoint);
            save_loss_trace((dir / "loss_trace.csv").string(), result.trace);
            info("wrote " + (dir / "checkpoint.json").string());
            if (!result.trace.empty())
                info("final loss " + std::to_string(result.trace.back().loss));
            return 0;
        }

        if (eval_cmd->parsed()) {
            RunConfig cfg = effective_config(eval_opts);
            cfg.validate();
            const auto frames = load_frames(ev_frames);
            const auto vocab = load_labels(ev_labels);
            const auto gts = load_ground_truth(ev_gt);
            const auto spec = load_split(ev_split);
            const ScoreMode mode = score_mode_from_string(cfg.score_mode);
            std::vector<DetectionRecord> dets;
            EvalReport report;
            std::string digest;
            if (ev_baseline) {
                RunConfig bcfg = cfg;
                bcfg.use_iap = false;  // the baseline has no trained parameters
                digest = to_hex(fnv1a64("baseline:" + bcfg.to_json().dump()));
                report = run_baseline_eval(frames, gts, vocab, spec, cfg.conf_threshold,
                                           cfg.iou_threshold, cfg.temperature, mode, &dets);
            } else {
                if (ev_checkpoint.empty())
                    throw UsageError("eval: --checkpoint required unless --baseline is given");
                Checkpoint ck = load_checkpoint(ev_checkpoint);
                if (ck.vocab_hash != vocab.hash())
                    throw FormatError("eval: checkpoint vocabulary hash does not match " +
                                      ev_labels);
                digest = cfg.digest();
                report = run_model_eval(frames, gts, vocab, spec, ck, cfg.conf_threshold,
                                        cfg.iou_threshold, mode, &dets);
            }
            report.config_digest = digest;
            fs::create_directories(eval_opts.out_dir);
            const fs::path dir(eval_opts.out_dir);
            save_detections((dir / "detections.jsonl").string(), dets, digest);
            save_report((dir / "report.json").string(), report);
            std::printf("split %s  mAP %.4f\n", report.split_id.c_str(), report.map);
            for (const auto& [name, c] : report.per_class)
                std::printf("  %-16s AP %.4f  (gt %zu, det %zu%s)\n", name.c_str(), c.ap,
                            c.gt_count, c.det_count, c.in_map ? "" : ", no GT: excluded");
            return 0;
        }

        if (grad->parsed()) {
            gradcheck_sabotage() = grad_inject;
            std::uint64_t base_seed = grad_opts.seed.value_or(1);
            std::map<std::string, double> worst;
            for (std::size_t s = 0; s < grad_seeds; ++s)
                for (const GradCheckRow& row : gradcheck_suite(base_seed + s)) {
                    auto [it, fresh] = worst.emplace(row.name, row.max_rel_err);
                    if (!fresh) it->second = std::max(it->second, row.max_rel_err);
                }
            bool all_pass = true;
            for (const GradCheckRow& row : gradcheck_suite(base_seed)) {
                const double err = worst.at(row.name);
                const bool pass = err < row.threshold;
                all_pass = all_pass && pass;
                std::printf("%-22s max_rel_err %.3e  threshold %.0e  %s\n", row.name.c_str(),
                            err, row.threshold, pass ? "PASS" : "FAIL");
            }
            return all_pass ? 0 : 2;
        }

        if (ablate->parsed()) {
            RunConfig cfg = effective_config(ablate_opts);
            cfg.validate();
            if (ab_dry_run) {
                for (const AblationRowSpec& row : ablation_matrix()) {
                    std::string order;
                    for (BlockKind k : row.order) order += std::string(to_string(k)) + " ";
                    std::printf("%-16s order: %-32s iap: %s\n", row.id.c_str(), order.c_str(),
                                row.use_iap ? "yes" : "no");
                }
                return 0;
            }
            const auto frames = load_frames(ab_frames);
            const auto vocab = load_labels(ab_labels);
            const auto gts = load_ground_truth(ab_gt);
            const auto spec = load_split(ab_split);
            const auto results =
                run_ablation(frames, gts, vocab, spec, cfg, ablate_opts.out_dir);
            for (const AblationRowResult& r : results)
                std::printf("%-16s mAP %.4f\n", r.spec.id.c_str(), r.map);
            return 0;
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DimensionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
