#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dgseg/controller.hpp"
#include "dgseg/datasynth.hpp"
#include "dgseg/depth.hpp"
#include "dgseg/eval.hpp"
#include "dgseg/model.hpp"
#include "dgseg/nn.hpp"

namespace dgseg {

/// One row of metrics.csv for a training iteration.
struct IterationRecord {
    int stage = 0;
    long iter = 0;  // global step number, 1-based
    double loss_l = 0.0;
    double loss_u_rgb = 0.0;
    double loss_u_depth = 0.0;
    double lambda_d = 0.0;
    double mu_t = 0.0;
    double sigma2_t = 0.0;
    double loss_total = 0.0;  // objective actually differentiated
    std::string teacher_hash;
    std::string student_hash;
};

struct EvalRecord {
    int stage = 0;
    long iter = 0;
    ApResult result;
};

struct TrainState {
    int stage = 0;        // stage in progress or last completed
    long iteration = 0;   // global iterations completed
    std::optional<SegModel> teacher;
    std::optional<SegModel> student;
    nn::AdamW optimizer;
    ControllerState controller;
};

struct TrainHooks {
    /// Called after every optimizer step (and EMA update in stage 3).
    std::function<void(const IterationRecord&, const TrainState&)> on_iteration;
    /// Called when a stage has been set up, before its first iteration.
    std::function<void(int stage, const TrainState&)> on_stage_start;
};

struct TrainOptions {
    std::filesystem::path out_dir;  // empty = keep everything in memory
    bool resume = false;
    std::optional<std::filesystem::path> dump_pseudo;
    bool log_progress = false;
    /// Refuse to resume from checkpoints written under a different config.
    bool check_config_hash = true;
    TrainHooks hooks;
};

struct TrainResult {
    ApResult final_eval;
    std::vector<EvalRecord> evals;
    std::vector<IterationRecord> iterations;
};

/// Frozen depth features per (image id, flipped) pair, computed on first use.
class DepthFeatureCache {
public:
    DepthFeatureCache(const Dataset& data, std::uint64_t depth_seed) : data_(data), extractor_(depth_seed) {}
    const FeatureMap& get(int id, bool flipped);

private:
    const Dataset& data_;
    DepthFeatureExtractor extractor_;
    std::map<std::pair<int, bool>, FeatureMap> cache_;
};

/// Three-stage teacher/student training:
///   1. teacher trained on the labeled split;
///   2. fresh student trained on labeled + pseudo-labeled data, teacher frozen;
///   3. teacher <- student, then student training continues with an EMA teacher
///      (and depth fusion switched on when DF is enabled).
/// Every stage derives its random streams from (seed, stage), so resuming from
/// a stage checkpoint continues bit-exactly.
class Trainer {
public:
    Trainer(Config cfg, const Dataset& data, TrainOptions opts);

    /// Runs (or resumes) all three stages and the final evaluation.
    TrainResult run();

    void stage1();
    void stage2();
    void stage3();

    /// Loads a stage checkpoint into the current state. The checkpoint's
    /// config hash is available afterwards via loaded_config_hash().
    void load_stage(const std::filesystem::path& ckpt_dir);
    void save_stage(const std::filesystem::path& ckpt_dir) const;

    /// AP of `model` on the validation ids (capped by eval_max_images).
    ApResult evaluate(const SegModel& model);
    ApResult evaluate(const SegModel& model, const std::vector<int>& ids);

    const std::string& loaded_config_hash() const { return loaded_config_hash_; }
    TrainState& state() { return state_; }
    const Config& config() const { return cfg_; }
    const TrainResult& result() const { return result_; }

    /// Model evaluated after each stage: stage 1 teacher, stage 2 student, stage 3 teacher.
    const SegModel& eval_model() const;

private:
    class Sampler {
    public:
        Sampler(std::vector<int> ids, Rng rng) : ids_(std::move(ids)), rng_(std::move(rng)) {}
        std::vector<int> next(int n);

    private:
        std::vector<int> ids_, order_;
        std::size_t pos_ = 0;
        Rng rng_;
    };

    /// Supervised loss and gradient on a labeled batch (gradient scaled by `weight`).
    double labeled_pass(SegModel& model, const std::vector<int>& ids, Rng& aug, double weight, nn::Gradients& g);
    IterationRecord semi_iteration(int stage, Sampler& labeled, Sampler& unlabeled, Rng& aug);
    void after_iteration(IterationRecord rec);
    void maybe_eval(bool force);
    void write_metrics_header();
    void append_metrics_row(const std::string& row);
    void dump_pseudo(int stage, const std::vector<int>& ids, const std::vector<InstanceSet>& rgb,
                     const std::vector<InstanceSet>& depth) const;
    std::filesystem::path ckpt_dir(int stage) const;
    int stage_iters(int stage) const { return cfg_.stage_iters[static_cast<std::size_t>(stage - 1)]; }

    Config cfg_;
    const Dataset& data_;
    TrainOptions opts_;
    DepthFeatureCache depth_;
    const SplitManifest* split_ = nullptr;
    TrainState state_;
    TrainResult result_;
    bool dumped_this_interval_ = false;
    std::string loaded_config_hash_;
};

/// Runs a full training into `out_dir` (config.json, metrics.csv, ckpt_stage{1,2,3}/, eval.json).
TrainResult train(const Config& cfg, const Dataset& data, const std::filesystem::path& out_dir, bool resume = false,
                  std::optional<std::filesystem::path> dump_pseudo = std::nullopt, bool log_progress = false);

/// metrics.csv helpers.
std::string metrics_header();
std::string format_iteration_row(const IterationRecord& r);
std::string format_eval_row(const EvalRecord& r);

}  // namespace dgseg
