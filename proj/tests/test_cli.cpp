#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dgseg/core.hpp"
#include "oracles.hpp"

using namespace dgseg;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Run cli(const fs::path& dir, const std::string& args) {
    const auto log = dir / "cli.log";
    const std::string cmd = std::string("\"") + DGSEG_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(log);
    return r;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

fs::path tiny_config(const fs::path& dir) {
    Config cfg;
    cfg.canvas = 32;
    cfg.num_queries = 6;
    cfg.batch_size = 2;
    cfg.stage_iters = {2, 2, 2};
    cfg.eval_interval = 0;
    cfg.eval_max_images = 3;
    cfg.label_fraction = 0.25;
    cfg.alpha_C = 0.3;
    cfg.alpha_S = 2;
    const auto p = dir / "tiny.json";
    std::ofstream(p) << serialize_config(cfg);
    return p;
}

}  // namespace

TEST_CASE("help lists the subcommands and defaults") {
    const auto dir = oracle::scratch_dir("cli_help");
    const Run top = cli(dir, "--help");
    CHECK(top.code == 0);
    for (const auto* s : {"gen-data", "train", "eval", "ablate", "plot"}) CHECK(top.out.find(s) != std::string::npos);
    const Run gen = cli(dir, "gen-data --help");
    CHECK(gen.code == 0);
    CHECK(gen.out.find("500") != std::string::npos);
    CHECK(gen.out.find("0.05,0.10") != std::string::npos);
}

TEST_CASE("usage errors exit with 1") {
    const auto dir = oracle::scratch_dir("cli_usage");
    CHECK(cli(dir, "").code == 1);
    CHECK(cli(dir, "frobnicate").code == 1);
    CHECK(cli(dir, "gen-data --out " + q(dir / "d") + " --num-images 0").code == 1);
    CHECK(cli(dir, "gen-data --out " + q(dir / "d") + " --fractions 0.05,1.5").code == 1);
    CHECK(cli(dir, "train --data " + q(dir / "d") + " --out " + q(dir / "r") + " --components ds,xy").code == 1);
    CHECK(cli(dir, "plot --out " + q(dir / "p")).code == 1);
}

TEST_CASE("gen-data is byte-reproducible and refuses to overwrite") {
    const auto dir = oracle::scratch_dir("cli_gen");
    const std::string common = " --num-images 6 --num-val 2 --canvas 32 --seed 3 --fractions 0.5";
    const Run a = cli(dir, "gen-data --out " + q(dir / "a") + common);
    REQUIRE(a.code == 0);
    REQUIRE(cli(dir, "gen-data --out " + q(dir / "b") + common).code == 0);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
        if (!e.is_regular_file()) continue;
        ++files;
        const auto rel = fs::relative(e.path(), dir / "a");
        CHECK(slurp(e.path()) == slurp(dir / "b" / rel));
    }
    CHECK(files > 8);

    const Run again = cli(dir, "gen-data --out " + q(dir / "a") + common);
    CHECK(again.code == 1);
    CHECK(again.out.find("--force") != std::string::npos);
    CHECK(cli(dir, "gen-data --out " + q(dir / "a") + common + " --force").code == 0);
}

TEST_CASE("train, eval, ablate and plot end to end") {
    const auto dir = oracle::scratch_dir("cli_e2e");
    const auto cfg = tiny_config(dir);
    REQUIRE(cli(dir, "gen-data --out " + q(dir / "data") + " --num-images 8 --num-val 3 --canvas 32 --fractions 0.25")
                .code == 0);

    const Run bad = cli(dir, "train --data " + q(dir / "nowhere") + " --out " + q(dir / "r") + " --config " + q(cfg));
    CHECK(bad.code == 2);

    const Run train = cli(dir, "train --quiet --data " + q(dir / "data") + " --out " + q(dir / "run") + " --config " + q(cfg));
    REQUIRE(train.code == 0);
    CHECK(train.out.find("final AP") != std::string::npos);
    CHECK(fs::exists(dir / "run" / "metrics.csv"));
    CHECK(fs::exists(dir / "run" / "ckpt_stage3" / "manifest.json"));

    const Run eval = cli(dir, "eval --checkpoint " + q(dir / "run" / "ckpt_stage3") + " --data " + q(dir / "data"));
    REQUIRE(eval.code == 0);
    const auto j = nlohmann::json::parse(slurp(dir / "run" / "ckpt_stage3" / "eval.json"));
    CHECK(j["stage"] == 3);
    CHECK(j["split"] == "val");
    CHECK(j.contains("AP"));
    const auto final_eval = nlohmann::json::parse(slurp(dir / "run" / "eval.json"));
    CHECK(j["AP"] == final_eval["AP"]);

    const Run resume = cli(dir, "train --quiet --data " + q(dir / "data") + " --resume " + q(dir / "run") + " --config " + q(cfg));
    CHECK(resume.code == 0);

    const Run ablate = cli(dir, "ablate --quiet --data " + q(dir / "data") + " --out " + q(dir / "abl") + " --config " +
                                    q(cfg) + " --components none ds,df,dc");
    REQUIRE(ablate.code == 0);
    const std::string csv = slurp(dir / "abl" / "ablation.csv");
    CHECK(csv.rfind("label,ds,df,dc,ap,ap50,run_dir\n", 0) == 0);
    CHECK(csv.find("\nnone,0,0,0,") != std::string::npos);
    CHECK(csv.find("\nDS+DF+DC,1,1,1,") != std::string::npos);
    CHECK(fs::exists(dir / "abl" / "ablation.txt"));
    // Stage 1 is shared by every combination.
    CHECK(slurp(dir / "abl" / "none" / "ckpt_stage1" / "manifest.json") ==
          slurp(dir / "abl" / "ds_df_dc" / "ckpt_stage1" / "manifest.json"));

    const Run plot = cli(dir, "plot --ablation " + q(dir / "abl") + " --out " + q(dir / "plots"));
    REQUIRE(plot.code == 0);
    CHECK(fs::file_size(dir / "plots" / "ap_curve.png") > 0);
    CHECK(fs::file_size(dir / "plots" / "loss_curve.png") > 0);

    const Run plot2 = cli(dir, "plot --metrics " + q(dir / "run" / "metrics.csv") + " --out " + q(dir / "plots2"));
    CHECK(plot2.code == 0);
}
