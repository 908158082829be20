#include "dgseg/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dgseg/checkpoint.hpp"
#include "dgseg/plot.hpp"
#include "dgseg/trainer.hpp"

namespace dgseg {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& text) {
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot write " + p.string());
        out << text;
    }
    fs::rename(tmp, p);
}

std::vector<double> parse_fractions(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t used = 0;
            const double f = std::stod(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
            if (!(f > 0.0 && f <= 1.0)) throw ConfigError("label fraction " + tok + " is outside (0, 1]");
            out.push_back(f);
        } catch (const std::invalid_argument&) {
            throw ConfigError("cannot parse label fraction '" + tok + "'");
        }
    }
    if (out.empty()) throw ConfigError("--fractions needs at least one value");
    return out;
}

Config base_config(const std::string& config_path, const std::optional<long long>& seed) {
    Config cfg = config_path.empty() ? Config{} : load_config(config_path);
    if (seed) {
        if (*seed < 0) throw ConfigError("--seed must be non-negative");
        cfg.seed = static_cast<std::uint64_t>(*seed);
    }
    cfg.validate();
    return cfg;
}

void copy_stage1(const fs::path& from, const fs::path& to) {
    fs::create_directories(to);
    fs::remove_all(to / "ckpt_stage1");
    fs::copy(from / "ckpt_stage1", to / "ckpt_stage1", fs::copy_options::recursive);
    std::ifstream in(from / "metrics.csv");
    std::string line, kept;
    std::getline(in, line);
    kept = line + "\n";
    while (std::getline(in, line))
        if (std::atoi(line.c_str()) == 1) kept += line + "\n";
    write_text(to / "metrics.csv", kept);
}

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
    return buf;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// --- commands ---------------------------------------------------------------

struct GenDataArgs {
    std::string out, config;
    int num_images = 500;
    int num_val = 100;
    std::optional<long long> seed;
    int canvas = 64;
    std::string fractions = "0.05,0.10";
    bool force = false;
};

int cmd_gen_data(const GenDataArgs& a) {
    if (a.num_images <= 0) throw ConfigError("--num-images must be positive");
    if (a.num_val < 0) throw ConfigError("--num-val must be non-negative");
    Config cfg = base_config(a.config, a.seed);
    cfg.canvas = a.canvas;
    cfg.validate();
    const auto fractions = parse_fractions(a.fractions);
    const fs::path out(a.out);
    if (fs::exists(out) && !fs::is_empty(out)) {
        if (!a.force) throw ConfigError("output directory " + out.string() + " is not empty (use --force)");
        fs::remove_all(out);
    }
    const Dataset data = generate_dataset(a.num_images, a.num_val, fractions, cfg);
    write_dataset(data, out);
    std::cout << "wrote " << data.train_ids.size() << " train and " << data.val_ids.size() << " val images to "
              << out.string() << "\n";
    return kExitOk;
}

struct TrainArgs {
    std::string config, data, out, resume, dump_pseudo, components;
    std::optional<long long> seed;
    bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
    Config cfg = base_config(a.config, a.seed);
    if (!a.components.empty()) cfg.components = parse_components(a.components);
    std::string out = a.out;
    if (!a.resume.empty()) {
        if (!out.empty() && fs::weakly_canonical(out) != fs::weakly_canonical(a.resume))
            throw ConfigError("--resume and --out name different run directories");
        out = a.resume;
    }
    if (out.empty()) throw ConfigError("--out is required");
    const Dataset data = load_dataset(a.data);
    TrainOptions opts;
    opts.out_dir = out;
    opts.resume = !a.resume.empty();
    if (!a.dump_pseudo.empty()) opts.dump_pseudo = fs::path(a.dump_pseudo);
    opts.log_progress = !a.quiet;
    Trainer trainer(cfg, data, std::move(opts));
    const auto r = trainer.run();
    std::cout << "final AP " << pct(r.final_eval.ap) << " AP50 " << pct(r.final_eval.ap50) << " (" << out << ")\n";
    return kExitOk;
}

struct EvalArgs {
    std::string checkpoint, data, split = "val", config, out;
};

int cmd_eval(const EvalArgs& a) {
    const fs::path ckpt(a.checkpoint);
    fs::path config_path = a.config;
    if (config_path.empty()) {
        config_path = ckpt.parent_path() / "config.json";
        if (!fs::exists(config_path))
            throw ConfigError("no --config given and " + config_path.string() + " does not exist");
    }
    const Config cfg = load_config(config_path);
    const Dataset data = load_dataset(a.data);
    std::vector<int> ids;
    if (a.split == "val")
        ids = data.val_ids;
    else if (a.split == "train")
        ids = data.train_ids;
    else
        throw ConfigError("--split must be 'val' or 'train'");

    Trainer trainer(cfg, data, TrainOptions{});
    trainer.load_stage(ckpt);
    if (trainer.loaded_config_hash() != config_hash(cfg))
        std::cerr << "dgseg: warning: checkpoint config hash differs from " << config_path.string() << "\n";
    const auto r = trainer.evaluate(trainer.eval_model(), ids);
    auto j = ap_to_json(r);
    j["stage"] = trainer.state().stage;
    j["iteration"] = trainer.state().iteration;
    j["split"] = a.split;
    const fs::path out = a.out.empty() ? ckpt / "eval.json" : fs::path(a.out);
    write_text(out, j.dump(2) + "\n");
    std::cout << "stage " << trainer.state().stage << " AP " << pct(r.ap) << " AP50 " << pct(r.ap50) << "\n";
    return kExitOk;
}

struct AblateArgs {
    std::string config, data, out;
    std::vector<std::string> components;
    std::optional<long long> seed;
    bool quiet = false;
};

int cmd_ablate(const AblateArgs& a) {
    const Config cfg = base_config(a.config, a.seed);
    std::vector<Components> combos;
    for (const auto& s : a.components) combos.push_back(parse_components(s));
    if (combos.empty()) combos = default_ablation_combinations();
    const Dataset data = load_dataset(a.data);
    const auto rows = run_ablation(cfg, data, a.out, combos, !a.quiet);
    write_text(fs::path(a.out) / "ablation.csv", ablation_csv(rows));
    const auto table = ablation_table(rows);
    write_text(fs::path(a.out) / "ablation.txt", table);
    std::cout << table;
    return kExitOk;
}

struct PlotArgs {
    std::vector<std::string> metrics;
    std::string ablation, out;
};

int cmd_plot(const PlotArgs& a) {
    std::vector<std::pair<std::string, fs::path>> runs;
    for (const auto& m : a.metrics) {
        const auto eq = m.find('=');
        if (eq != std::string::npos) {
            runs.emplace_back(m.substr(0, eq), m.substr(eq + 1));
        } else {
            const fs::path p(m);
            const auto parent = p.has_parent_path() ? p.parent_path().filename().string() : std::string{};
            runs.emplace_back(parent.empty() ? p.stem().string() : parent, p);
        }
    }
    if (!a.ablation.empty()) {
        const fs::path dir(a.ablation);
        std::ifstream in(dir / "ablation.csv");
        if (!in) throw DataError("no ablation.csv in " + dir.string());
        std::string line;
        std::getline(in, line);
        long row = 1;
        while (std::getline(in, line)) {
            ++row;
            if (line.empty()) continue;
            std::vector<std::string> f;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ',')) f.push_back(cell);
            if (f.size() < 7) throw DataError((dir / "ablation.csv").string() + ": row " + std::to_string(row) + ": too few fields");
            runs.emplace_back(f[0], dir / f[6] / "metrics.csv");
        }
    }
    if (runs.empty()) throw ConfigError("plot needs --metrics or --ablation");
    const auto out = emit_plots(runs, a.out);
    std::cout << "wrote " << out.ap_curve.string() << " and " << out.loss_curve.string() << "\n";
    return kExitOk;
}

}  // namespace

// --- ablation -------------------------------------------------------------------

std::vector<Components> default_ablation_combinations() {
    return {{false, false, false}, {true, false, false}, {true, true, false}, {true, false, true}, {true, true, true}};
}

std::string run_dir_name(const Components& c) {
    std::string s = components_label(c);
    for (auto& ch : s) ch = ch == '+' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
}

std::vector<AblationRow> run_ablation(const Config& base, const Dataset& data, const fs::path& out_dir,
                                      const std::vector<Components>& combos, bool log_progress) {
    if (combos.empty()) throw ConfigError("ablation needs at least one component combination");
    fs::create_directories(out_dir);
    std::vector<AblationRow> rows;
    fs::path first;
    for (const auto& c : combos) {
        Config cfg = base;
        cfg.components = c;
        AblationRow row;
        row.components = c;
        row.label = components_label(c);
        row.run_dir = out_dir / run_dir_name(c);
        TrainOptions opts;
        opts.out_dir = row.run_dir;
        opts.log_progress = log_progress;
        if (!first.empty()) {
            copy_stage1(first, row.run_dir);
            opts.resume = true;
            opts.check_config_hash = false;
        } else {
            fs::remove_all(row.run_dir);
        }
        if (log_progress) std::cerr << "[ablate] " << row.label << "\n";
        Trainer trainer(cfg, data, std::move(opts));
        row.result = trainer.run().final_eval;
        if (first.empty()) first = row.run_dir;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string s = "label,ds,df,dc,ap,ap50,run_dir\n";
    for (const auto& r : rows)
        s += r.label + "," + std::to_string(r.components.ds) + "," + std::to_string(r.components.df) + "," +
             std::to_string(r.components.dc) + "," + num(r.result.ap) + "," + num(r.result.ap50) + "," +
             r.run_dir.filename().string() + "\n";
    return s;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::ostringstream s;
    s << " DS  DF  DC |     AP    AP50\n";
    s << "------------+---------------\n";
    for (const auto& r : rows) {
        char buf[96];
        std::snprintf(buf, sizeof buf, " %s   %s   %s  | %6s  %6s\n", r.components.ds ? "x" : "-",
                      r.components.df ? "x" : "-", r.components.dc ? "x" : "-", pct(r.result.ap).c_str(),
                      pct(r.result.ap50).c_str());
        s << buf;
    }
    return s.str();
}

// --- entry point ----------------------------------------------------------------

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Depth-guided semi-supervised instance segmentation on synthetic shapes", "dgseg"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    GenDataArgs g;
    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic shapes dataset");
    gen->add_option("--out", g.out, "Output directory")->required();
    gen->add_option("--num-images", g.num_images, "Number of training images");
    gen->add_option("--num-val", g.num_val, "Number of validation images");
    gen->add_option("--seed", g.seed, "Seed (overrides the config)");
    gen->add_option("--canvas", g.canvas, "Canvas side in pixels");
    gen->add_option("--fractions", g.fractions, "Comma-separated labeled fractions, one split manifest each");
    gen->add_option("--config", g.config, "Config JSON (shape count and size limits)");
    gen->add_flag("--force", g.force, "Replace a non-empty output directory");

    TrainArgs t;
    auto* train = app.add_subcommand("train", "Run the three-stage teacher/student training");
    train->add_option("--config", t.config, "Config JSON (defaults when omitted)");
    train->add_option("--data", t.data, "Dataset directory")->required();
    train->add_option("--out", t.out, "Run directory");
    train->add_option("--resume", t.resume, "Resume the run directory from its last stage checkpoint");
    train->add_option("--seed", t.seed, "Seed (overrides the config)");
    train->add_option("--components", t.components, "Component override: none or a list of ds,df,dc");
    train->add_option("--dump-pseudo", t.dump_pseudo, "Directory for pseudo-label dumps");
    train->add_flag("--quiet", t.quiet, "No progress output");

    EvalArgs e;
    auto* eval = app.add_subcommand("eval", "Evaluate a stage checkpoint");
    eval->add_option("--checkpoint", e.checkpoint, "Stage checkpoint directory")->required();
    eval->add_option("--data", e.data, "Dataset directory")->required();
    eval->add_option("--split", e.split, "val or train");
    eval->add_option("--config", e.config, "Config JSON (default: config.json next to the checkpoint)");
    eval->add_option("--out", e.out, "Output JSON (default: <checkpoint>/eval.json)");

    AblateArgs ab;
    auto* ablate = app.add_subcommand("ablate", "Train one run per component combination");
    ablate->add_option("--config", ab.config, "Config JSON (defaults when omitted)");
    ablate->add_option("--data", ab.data, "Dataset directory")->required();
    ablate->add_option("--out", ab.out, "Output directory")->required();
    ablate->add_option("--components", ab.components,
                       "Combination (repeatable): none or ds,df,dc subsets; default: none, ds, ds+df, ds+dc, ds+df+dc")
        ->take_all();
    ablate->add_option("--seed", ab.seed, "Seed shared by all combinations (overrides the config)");
    ablate->add_flag("--quiet", ab.quiet, "No progress output");

    PlotArgs p;
    auto* plot = app.add_subcommand("plot", "Render AP and unsupervised loss curves");
    plot->add_option("--metrics", p.metrics, "metrics.csv path, optionally label=path (repeatable)")->take_all();
    plot->add_option("--ablation", p.ablation, "Ablation output directory");
    plot->add_option("--out", p.out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::CallForAllHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        std::cerr << "dgseg: error: " << ex.what() << "\n";
        return kExitUsage;
    }

    try {
        if (*gen) return cmd_gen_data(g);
        if (*train) return cmd_train(t);
        if (*eval) return cmd_eval(e);
        if (*ablate) return cmd_ablate(ab);
        if (*plot) return cmd_plot(p);
    } catch (const ConfigError& ex) {
        std::cerr << "dgseg: error: " << ex.what() << "\n";
        return kExitUsage;
    } catch (const DataError& ex) {
        std::cerr << "dgseg: error: " << ex.what() << "\n";
        return kExitData;
    } catch (const std::exception& ex) {
        std::cerr << "dgseg: error: " << ex.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace dgseg
