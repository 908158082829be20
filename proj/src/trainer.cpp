#include "dgseg/trainer.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dgseg/checkpoint.hpp"
#include "dgseg/objective.hpp"
#include "dgseg/pseudo.hpp"

namespace dgseg {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DataError("cannot write " + p.string());
    out << text;
}

}  // namespace

std::string metrics_header() {
    return "stage,iter,loss_l,loss_u_rgb,loss_u_depth,lambda_d,mu_t,sigma2_t,teacher_hash,student_hash,ap,ap50";
}

std::string format_iteration_row(const IterationRecord& r) {
    std::ostringstream s;
    s << r.stage << ',' << r.iter << ',' << num(r.loss_l) << ',' << num(r.loss_u_rgb) << ',' << num(r.loss_u_depth)
      << ',' << num(r.lambda_d) << ',' << num(r.mu_t) << ',' << num(r.sigma2_t) << ',' << r.teacher_hash << ','
      << r.student_hash << ",,";
    return s.str();
}

std::string format_eval_row(const EvalRecord& r) {
    std::ostringstream s;
    s << r.stage << ',' << r.iter << ",,,,,,,,," << num(r.result.ap) << ',' << num(r.result.ap50);
    return s.str();
}

const FeatureMap& DepthFeatureCache::get(int id, bool flipped) {
    const auto key = std::make_pair(id, flipped);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const auto& depth = data_.get(id).depth;
    FeatureMap f = extractor_(flipped ? hflip(depth.rgb) : depth.rgb);
    return cache_.emplace(key, std::move(f)).first->second;
}

std::vector<int> Trainer::Sampler::next(int n) {
    if (ids_.empty()) throw DataError("trainer: cannot sample from an empty split");
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(n));
    while (static_cast<int>(out.size()) < n) {
        if (pos_ >= order_.size()) {
            order_ = ids_;
            rng_.shuffle(order_);
            pos_ = 0;
        }
        out.push_back(order_[pos_++]);
    }
    return out;
}

Trainer::Trainer(Config cfg, const Dataset& data, TrainOptions opts)
    : cfg_(std::move(cfg)), data_(data), opts_(std::move(opts)), depth_(data, cfg_.depth_seed) {
    cfg_.validate();
    if (data_.canvas != cfg_.canvas)
        throw DataError("trainer: dataset canvas " + std::to_string(data_.canvas) + " differs from config canvas " +
                        std::to_string(cfg_.canvas));
    split_ = &data_.split(cfg_.label_fraction);
    state_.controller = ControllerState::fresh(cfg_);
}

const SegModel& Trainer::eval_model() const {
    if (state_.stage == 2 && state_.student) return *state_.student;
    if (state_.teacher) return *state_.teacher;
    throw std::runtime_error("trainer: no model to evaluate");
}

fs::path Trainer::ckpt_dir(int stage) const { return opts_.out_dir / ("ckpt_stage" + std::to_string(stage)); }

// ---------------------------------------------------------------------------

double Trainer::labeled_pass(SegModel& model, const std::vector<int>& ids, Rng& aug, double weight, nn::Gradients& g) {
    const double scale = weight / static_cast<double>(ids.size());
    double total = 0.0;
    ForwardCache cache;
    for (int id : ids) {
        const auto& s = data_.get(id);
        const auto a = augment(s.image, s.gt, AugMode::weak, aug, data_.mean);
        const FeatureMap* fd = model.fusion_active() ? &depth_.get(id, a.params.flip) : nullptr;
        const auto pred = model.forward(a.image, fd, &cache);
        const auto lg = image_loss_grad(pred, a.gt, cfg_);
        total += lg.value;
        model.backward(cache, lg.d_class_logits * scale, lg.d_mask_logits * scale, g);
    }
    return total / static_cast<double>(ids.size());
}

IterationRecord Trainer::semi_iteration(int stage, Sampler& labeled, Sampler& unlabeled, Rng& aug) {
    SegModel& student = *state_.student;
    const SegModel& teacher = *state_.teacher;
    const int B = cfg_.batch_size;
    auto g = nn::Gradients::zeros_like(student.params());

    IterationRecord rec;
    rec.stage = stage;
    const auto lab_ids = labeled.next(B);
    rec.loss_l = labeled_pass(student, lab_ids, aug, cfg_.lambda_l, g);

    // Teacher pass on weak views; pseudo-labels are constants from here on.
    const auto unl_ids = unlabeled.next(B);
    std::vector<PairedViews> views;
    std::vector<DualPseudo> pseudo;
    std::vector<double> confidences;
    for (int id : unl_ids) {
        const auto& s = data_.get(id);
        views.push_back(augment_pair(s.image, s.gt, aug, data_.mean));
        const bool flip = views.back().params.flip;
        const Image depth_rgb = flip ? hflip(s.depth.rgb) : s.depth.rgb;
        const FeatureMap* fd = teacher.fusion_active() ? &depth_.get(id, flip) : nullptr;
        pseudo.push_back(dual_pseudo(teacher, views.back().weak, depth_rgb, fd, cfg_));
        const auto top = top_confidences(pseudo.back().rgb, cfg_.controller_topk);
        confidences.insert(confidences.end(), top.begin(), top.end());
    }

    double lambda_d = cfg_.lambda_d_fixed;
    const bool use_controller =
        cfg_.components.ds && cfg_.components.dc && cfg_.lambda_d_mode == LambdaDMode::controller;
    if (use_controller) {
        state_.controller = update(state_.controller, confidences);
        lambda_d = depth_weight(state_.controller, confidences);
    }
    const double ld = effective_lambda_d(cfg_, lambda_d);
    rec.lambda_d = ld;
    rec.mu_t = state_.controller.mu_t;
    rec.sigma2_t = state_.controller.sigma2_t;

    // Student pass on strong views.
    const double scale = cfg_.lambda_u / static_cast<double>(B);
    double sum_rgb = 0.0, sum_depth = 0.0;
    ForwardCache cache;
    for (std::size_t i = 0; i < unl_ids.size(); ++i) {
        const int id = unl_ids[i];
        const FeatureMap* fd = student.fusion_active() ? &depth_.get(id, views[i].params.flip) : nullptr;
        const auto pred = student.forward(views[i].strong, fd, &cache);
        const auto l_rgb = image_loss_grad(pred, pseudo[i].rgb, cfg_);
        sum_rgb += l_rgb.value;
        RowMatrix d_class = cfg_.lambda_l * l_rgb.d_class_logits;
        RowMatrix d_mask = cfg_.lambda_l * l_rgb.d_mask_logits;
        if (cfg_.components.ds) {
            const auto l_depth = image_loss_grad(pred, pseudo[i].depth, cfg_);
            sum_depth += l_depth.value;
            if (ld != 0.0) {
                d_class += ld * l_depth.d_class_logits;
                d_mask += ld * l_depth.d_mask_logits;
            }
        }
        student.backward(cache, d_class * scale, d_mask * scale, g);
    }
    rec.loss_u_rgb = sum_rgb / B;
    rec.loss_u_depth = sum_depth / B;
    rec.loss_total = semi_loss(rec.loss_l, unsup_loss(rec.loss_u_rgb, rec.loss_u_depth, cfg_, lambda_d), cfg_);

    if (opts_.dump_pseudo && !dumped_this_interval_) {
        std::vector<InstanceSet> rgb, depth;
        for (const auto& p : pseudo) {
            rgb.push_back(p.rgb);
            depth.push_back(p.depth);
        }
        dump_pseudo(stage, unl_ids, rgb, depth);
        dumped_this_interval_ = true;
    }

    state_.optimizer.step(student.params(), g, student.trainable_mask());
    if (stage == 3) nn::ema_update(state_.teacher->params(), student.params(), cfg_.alpha_ema);
    return rec;
}

void Trainer::after_iteration(IterationRecord rec) {
    ++state_.iteration;
    rec.iter = state_.iteration;
    if (state_.teacher) rec.teacher_hash = nn::hash_params(state_.teacher->params());
    if (state_.student) rec.student_hash = nn::hash_params(state_.student->params());
    append_metrics_row(format_iteration_row(rec));
    if (opts_.hooks.on_iteration) opts_.hooks.on_iteration(rec, state_);
    if (opts_.log_progress && state_.iteration % 100 == 0)
        std::cerr << "[train] stage " << rec.stage << " iter " << rec.iter << " loss_l " << rec.loss_l << " loss_u_rgb "
                  << rec.loss_u_rgb << " loss_u_depth " << rec.loss_u_depth << " lambda_d " << rec.lambda_d << "\n";
    result_.iterations.push_back(std::move(rec));
    maybe_eval(false);
}

void Trainer::maybe_eval(bool force) {
    const bool due = cfg_.eval_interval > 0 && state_.iteration % cfg_.eval_interval == 0;
    if (due) dumped_this_interval_ = false;
    if (!due && !force) return;
    if (!result_.evals.empty() && result_.evals.back().iter == state_.iteration &&
        result_.evals.back().stage == state_.stage)
        return;
    EvalRecord e;
    e.stage = state_.stage;
    e.iter = state_.iteration;
    e.result = evaluate(eval_model());
    append_metrics_row(format_eval_row(e));
    if (opts_.log_progress)
        std::cerr << "[eval] stage " << e.stage << " iter " << e.iter << " AP " << e.result.ap << " AP50 "
                  << e.result.ap50 << "\n";
    result_.evals.push_back(std::move(e));
}

ApResult Trainer::evaluate(const SegModel& model) {
    std::vector<int> ids = data_.val_ids;
    if (cfg_.eval_max_images > 0 && static_cast<int>(ids.size()) > cfg_.eval_max_images)
        ids.resize(static_cast<std::size_t>(cfg_.eval_max_images));
    return evaluate(model, ids);
}

ApResult Trainer::evaluate(const SegModel& model, const std::vector<int>& ids) {
    if (ids.empty()) throw DataError("evaluation split is empty");
    std::vector<InstanceSet> preds, gts;
    for (int id : ids) {
        const auto& s = data_.get(id);
        const FeatureMap* fd = model.fusion_active() ? &depth_.get(id, false) : nullptr;
        preds.push_back(detections(model.forward(s.image, fd)));
        gts.push_back(s.gt);
    }
    return evaluate_ap(preds, gts, cfg_.num_classes);
}

// ---------------------------------------------------------------------------

void Trainer::stage1() {
    state_.stage = 1;
    Rng init(cfg_.seed, "init_teacher");
    state_.teacher.emplace(cfg_, init);
    state_.student.reset();
    state_.optimizer = nn::AdamW(state_.teacher->params(), {cfg_.lr, cfg_.weight_decay, cfg_.backbone_lr_multiplier});
    state_.controller = ControllerState::fresh(cfg_);
    Sampler labeled(split_->labeled_ids, Rng(cfg_.seed, "labeled", 1));
    Rng aug(cfg_.seed, "augment", 1);
    if (opts_.hooks.on_stage_start) opts_.hooks.on_stage_start(1, state_);

    SegModel& teacher = *state_.teacher;
    for (int i = 0; i < stage_iters(1); ++i) {
        auto g = nn::Gradients::zeros_like(teacher.params());
        IterationRecord rec;
        rec.stage = 1;
        rec.loss_l = labeled_pass(teacher, labeled.next(cfg_.batch_size), aug, 1.0, g);
        rec.loss_total = rec.loss_l;
        rec.mu_t = state_.controller.mu_t;
        rec.sigma2_t = state_.controller.sigma2_t;
        state_.optimizer.step(teacher.params(), g, teacher.trainable_mask());
        after_iteration(std::move(rec));
    }
    maybe_eval(true);
}

void Trainer::stage2() {
    if (!state_.teacher) throw DataError("stage 2 needs a stage-1 teacher checkpoint");
    state_.stage = 2;
    Rng init(cfg_.seed, "init_student");
    state_.student.emplace(cfg_, init);
    state_.optimizer = nn::AdamW(state_.student->params(), {cfg_.lr, cfg_.weight_decay, cfg_.backbone_lr_multiplier});
    state_.controller = ControllerState::fresh(cfg_);
    Sampler labeled(split_->labeled_ids, Rng(cfg_.seed, "labeled", 2));
    Sampler unlabeled(split_->unlabeled_ids, Rng(cfg_.seed, "unlabeled", 2));
    Rng aug(cfg_.seed, "augment", 2);
    dumped_this_interval_ = false;
    if (opts_.hooks.on_stage_start) opts_.hooks.on_stage_start(2, state_);
    for (int i = 0; i < stage_iters(2); ++i) after_iteration(semi_iteration(2, labeled, unlabeled, aug));
    maybe_eval(true);
}

void Trainer::stage3() {
    if (!state_.student) throw DataError("stage 3 needs a stage-2 student checkpoint");
    state_.stage = 3;
    SegModel& student = *state_.student;
    if (cfg_.components.df && !student.fusion_active()) {
        student.reset_fusion_identity();
        student.set_fusion_active(true);
    }
    state_.teacher = student;
    Sampler labeled(split_->labeled_ids, Rng(cfg_.seed, "labeled", 3));
    Sampler unlabeled(split_->unlabeled_ids, Rng(cfg_.seed, "unlabeled", 3));
    Rng aug(cfg_.seed, "augment", 3);
    dumped_this_interval_ = false;
    if (opts_.hooks.on_stage_start) opts_.hooks.on_stage_start(3, state_);
    for (int i = 0; i < stage_iters(3); ++i) after_iteration(semi_iteration(3, labeled, unlabeled, aug));
    maybe_eval(true);
}

// ---------------------------------------------------------------------------

void Trainer::save_stage(const fs::path& dir) const {
    CheckpointData ck;
    ck.stage = state_.stage;
    ck.iteration = state_.iteration;
    ck.config_hash = config_hash(cfg_);
    ck.controller = state_.controller;
    if (state_.teacher) ck.teacher = state_.teacher->params();
    if (state_.student) ck.student = state_.student->params();
    ck.fusion_active = state_.student ? state_.student->fusion_active()
                                      : (state_.teacher && state_.teacher->fusion_active());
    ck.adam_m = state_.optimizer.first_moments();
    ck.adam_v = state_.optimizer.second_moments();
    ck.adam_t = state_.optimizer.step_counts();
    const auto& templ = state_.teacher ? state_.teacher->params() : state_.student->params();
    save_checkpoint(dir, ck, templ);
}

void Trainer::load_stage(const fs::path& dir) {
    Rng dummy(0);
    SegModel templ(cfg_, dummy);
    auto ck = load_checkpoint(dir, templ.params());
    loaded_config_hash_ = ck.config_hash;
    state_.stage = ck.stage;
    state_.iteration = ck.iteration;
    state_.controller = ck.controller;
    state_.teacher.reset();
    state_.student.reset();
    if (ck.teacher) {
        state_.teacher.emplace(templ);
        state_.teacher->load_parameters(*ck.teacher);
        state_.teacher->set_fusion_active(ck.stage == 3 && ck.fusion_active);
    }
    if (ck.student) {
        state_.student.emplace(templ);
        state_.student->load_parameters(*ck.student);
        state_.student->set_fusion_active(ck.stage == 3 && ck.fusion_active);
    }
    state_.optimizer = nn::AdamW(templ.params(), {cfg_.lr, cfg_.weight_decay, cfg_.backbone_lr_multiplier});
    if (!ck.adam_t.empty()) {
        state_.optimizer.first_moments() = std::move(ck.adam_m);
        state_.optimizer.second_moments() = std::move(ck.adam_v);
        state_.optimizer.step_counts() = std::move(ck.adam_t);
    }
}

void Trainer::write_metrics_header() {
    if (opts_.out_dir.empty()) return;
    write_file(opts_.out_dir / "metrics.csv", metrics_header() + "\n");
}

void Trainer::append_metrics_row(const std::string& row) {
    if (opts_.out_dir.empty()) return;
    std::ofstream out(opts_.out_dir / "metrics.csv", std::ios::app | std::ios::binary);
    out << row << "\n";
}

void Trainer::dump_pseudo(int stage, const std::vector<int>& ids, const std::vector<InstanceSet>& rgb,
                          const std::vector<InstanceSet>& depth) const {
    fs::create_directories(*opts_.dump_pseudo);
    nlohmann::json j;
    j["stage"] = stage;
    j["iteration"] = state_.iteration + 1;
    j["images"] = nlohmann::json::object();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        j["images"][std::to_string(ids[i])] = {{"rgb", instances_to_json(rgb[i])}, {"depth", instances_to_json(depth[i])}};
    }
    write_file(*opts_.dump_pseudo / ("stage" + std::to_string(stage) + "_iter" + std::to_string(state_.iteration + 1) + ".json"),
               j.dump(1) + "\n");
}

TrainResult Trainer::run() {
    int done = 0;
    if (!opts_.out_dir.empty()) {
        fs::create_directories(opts_.out_dir);
        write_file(opts_.out_dir / "config.json", serialize_config(cfg_));
        if (opts_.resume) {
            for (int s = 3; s >= 1; --s) {
                if (fs::exists(ckpt_dir(s) / "manifest.json")) {
                    done = s;
                    break;
                }
            }
        }
        if (done > 0) {
            load_stage(ckpt_dir(done));
            if (opts_.check_config_hash && loaded_config_hash_ != config_hash(cfg_))
                throw ConfigError("resume: " + ckpt_dir(done).string() + " was written with a different config");
            // Keep metrics rows of completed stages only.
            std::ifstream in(opts_.out_dir / "metrics.csv");
            std::string line, kept = metrics_header() + "\n";
            std::getline(in, line);
            while (std::getline(in, line)) {
                const int stage = std::atoi(line.c_str());
                if (stage < 1 || stage > done) continue;
                kept += line + "\n";
                std::vector<std::string> f;
                std::stringstream ss(line);
                std::string cell;
                while (std::getline(ss, cell, ',')) f.push_back(cell);
                if (f.size() >= 12 && f[2].empty() && !f[10].empty()) {
                    EvalRecord e;
                    e.stage = stage;
                    e.iter = std::atol(f[1].c_str());
                    e.result.ap = std::stod(f[10]);
                    e.result.ap50 = std::stod(f[11]);
                    result_.evals.push_back(e);
                }
            }
            write_file(opts_.out_dir / "metrics.csv", kept);
        } else {
            write_metrics_header();
        }
    }
    if (done < 1) {
        stage1();
        if (!opts_.out_dir.empty()) save_stage(ckpt_dir(1));
    }
    if (done < 2) {
        stage2();
        if (!opts_.out_dir.empty()) save_stage(ckpt_dir(2));
    }
    if (done < 3) {
        stage3();
        if (!opts_.out_dir.empty()) save_stage(ckpt_dir(3));
    }
    result_.final_eval = evaluate(eval_model());
    if (!opts_.out_dir.empty()) {
        auto j = ap_to_json(result_.final_eval);
        j["stage"] = state_.stage;
        j["iteration"] = state_.iteration;
        write_file(opts_.out_dir / "eval.json", j.dump(2) + "\n");
    }
    return result_;
}

TrainResult train(const Config& cfg, const Dataset& data, const fs::path& out_dir, bool resume,
                  std::optional<fs::path> dump_pseudo, bool log_progress) {
    TrainOptions opts;
    opts.out_dir = out_dir;
    opts.resume = resume;
    opts.dump_pseudo = std::move(dump_pseudo);
    opts.log_progress = log_progress;
    Trainer t(cfg, data, std::move(opts));
    return t.run();
}

}  // namespace dgseg
