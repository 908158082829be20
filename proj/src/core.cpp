#include "dgseg/core.hpp"

#include <algorithm>
#include <fstream>
#include <numbers>
#include <sstream>

#include <openssl/evp.h>

namespace dgseg {

int Mask::area() const {
    int n = 0;
    for (auto b : bits) n += b;
    return n;
}

void InstanceSet::validate(int num_classes) const {
    if (masks.size() != classes.size()) throw DataError("instance set: masks/classes length mismatch");
    if (scores && scores->size() != masks.size()) throw DataError("instance set: scores length mismatch");
    for (std::size_t k = 0; k < masks.size(); ++k) {
        const auto& m = masks[k];
        if (m.height != height || m.width != width ||
            m.bits.size() != static_cast<std::size_t>(height) * width)
            throw DataError("instance set: mask " + std::to_string(k) + " has mismatched shape");
        if (m.area() == 0) throw DataError("instance set: mask " + std::to_string(k) + " is empty");
        for (auto b : m.bits)
            if (b > 1) throw DataError("instance set: mask " + std::to_string(k) + " is not binary");
        if (classes[k] < 0 || classes[k] >= num_classes)
            throw DataError("instance set: class index " + std::to_string(classes[k]) + " out of range");
        if (scores && ((*scores)[k] < 0.0 || (*scores)[k] > 1.0))
            throw DataError("instance set: score out of [0,1]");
    }
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
    throw ConfigError("config field '" + field + "': " + why);
}

void require_nonneg(const std::string& f, double v) {
    if (!(v >= 0.0) || !std::isfinite(v)) bad_field(f, "must be a finite value >= 0");
}

}  // namespace

void Config::validate() const {
    require_nonneg("lambda_l", lambda_l);
    require_nonneg("lambda_u", lambda_u);
    require_nonneg("lambda_D", lambda_D);
    require_nonneg("lambda_C", lambda_C);
    require_nonneg("lambda_d_fixed", lambda_d_fixed);
    if (!(alpha_C >= 0.0 && alpha_C <= 1.0)) bad_field("alpha_C", "must lie in [0,1]");
    if (alpha_S < 0) bad_field("alpha_S", "must be >= 0");
    if (!(alpha_ema > 0.0 && alpha_ema < 1.0)) bad_field("alpha_ema", "must lie in (0,1)");
    if (!(lambda_max > 0.0) || !std::isfinite(lambda_max)) bad_field("lambda_max", "must be > 0");
    if (!(stats_momentum > 0.0 && stats_momentum < 1.0)) bad_field("stats_momentum", "must lie in (0,1)");
    if (controller_topk < 1) bad_field("controller_topk", "must be >= 1");
    if (num_queries < 1) bad_field("num_queries", "must be >= 1");
    if (num_classes < 1) bad_field("num_classes", "must be >= 1");
    if (canvas < 16 || canvas % 2 != 0) bad_field("canvas", "must be an even size >= 16");
    if (max_shapes < 1 || max_shapes > 6) bad_field("max_shapes", "must lie in [1,6]");
    if (max_shapes > num_queries) bad_field("max_shapes", "must not exceed num_queries");
    for (int s = 0; s < 3; ++s)
        if (stage_iters[s] < 0) bad_field("stage_iters", "iteration counts must be >= 0");
    if (!(lr > 0.0)) bad_field("lr", "must be > 0");
    require_nonneg("weight_decay", weight_decay);
    require_nonneg("backbone_lr_multiplier", backbone_lr_multiplier);
    if (batch_size < 1) bad_field("batch_size", "must be >= 1");
    if (!(label_fraction > 0.0 && label_fraction <= 1.0)) bad_field("label_fraction", "must lie in (0,1]");
    if (eval_interval < 0) bad_field("eval_interval", "must be >= 0");
    if (eval_max_images < 0) bad_field("eval_max_images", "must be >= 0");
}

nlohmann::json config_to_json(const Config& c) {
    nlohmann::json j;
    j["lambda_l"] = c.lambda_l;
    j["lambda_u"] = c.lambda_u;
    j["lambda_D"] = c.lambda_D;
    j["lambda_C"] = c.lambda_C;
    j["alpha_C"] = c.alpha_C;
    j["alpha_S"] = c.alpha_S;
    j["alpha_ema"] = c.alpha_ema;
    j["lambda_max"] = c.lambda_max;
    j["stats_momentum"] = c.stats_momentum;
    j["lambda_d_mode"] = c.lambda_d_mode == LambdaDMode::fixed ? "fixed" : "controller";
    j["lambda_d_fixed"] = c.lambda_d_fixed;
    j["controller_topk"] = c.controller_topk;
    j["num_queries"] = c.num_queries;
    j["num_classes"] = c.num_classes;
    j["canvas"] = c.canvas;
    j["max_shapes"] = c.max_shapes;
    j["stage_iters"] = c.stage_iters;
    j["lr"] = c.lr;
    j["weight_decay"] = c.weight_decay;
    j["backbone_lr_multiplier"] = c.backbone_lr_multiplier;
    j["batch_size"] = c.batch_size;
    j["label_fraction"] = c.label_fraction;
    j["eval_interval"] = c.eval_interval;
    j["eval_max_images"] = c.eval_max_images;
    j["seed"] = c.seed;
    j["depth_seed"] = c.depth_seed;
    j["ds"] = c.components.ds;
    j["df"] = c.components.df;
    j["dc"] = c.components.dc;
    return j;
}

namespace {

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
        bad_field(key, "has the wrong type");
    }
}

}  // namespace

Config config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config: top-level JSON value must be an object");
    static const std::vector<std::string> known = {
        "lambda_l", "lambda_u", "lambda_D", "lambda_C", "alpha_C", "alpha_S", "alpha_ema",
        "lambda_max", "stats_momentum", "lambda_d_mode", "lambda_d_fixed", "controller_topk",
        "num_queries", "num_classes", "canvas", "max_shapes", "stage_iters", "lr", "weight_decay",
        "backbone_lr_multiplier", "batch_size", "label_fraction", "eval_interval", "eval_max_images",
        "seed", "depth_seed", "ds", "df", "dc"};
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end()) bad_field(key, "unknown key");

    Config c;
    read_key(j, "lambda_l", c.lambda_l);
    read_key(j, "lambda_u", c.lambda_u);
    read_key(j, "lambda_D", c.lambda_D);
    read_key(j, "lambda_C", c.lambda_C);
    read_key(j, "alpha_C", c.alpha_C);
    read_key(j, "alpha_S", c.alpha_S);
    read_key(j, "alpha_ema", c.alpha_ema);
    read_key(j, "lambda_max", c.lambda_max);
    read_key(j, "stats_momentum", c.stats_momentum);
    if (auto it = j.find("lambda_d_mode"); it != j.end()) {
        if (!it->is_string()) bad_field("lambda_d_mode", "must be \"fixed\" or \"controller\"");
        const auto mode = it->get<std::string>();
        if (mode == "fixed")
            c.lambda_d_mode = LambdaDMode::fixed;
        else if (mode == "controller")
            c.lambda_d_mode = LambdaDMode::controller;
        else
            bad_field("lambda_d_mode", "must be \"fixed\" or \"controller\"");
    }
    read_key(j, "lambda_d_fixed", c.lambda_d_fixed);
    read_key(j, "controller_topk", c.controller_topk);
    read_key(j, "num_queries", c.num_queries);
    read_key(j, "num_classes", c.num_classes);
    read_key(j, "canvas", c.canvas);
    read_key(j, "max_shapes", c.max_shapes);
    if (auto it = j.find("stage_iters"); it != j.end()) {
        if (!it->is_array() || it->size() != 3) bad_field("stage_iters", "must be an array of 3 integers");
        read_key(j, "stage_iters", c.stage_iters);
    }
    read_key(j, "lr", c.lr);
    read_key(j, "weight_decay", c.weight_decay);
    read_key(j, "backbone_lr_multiplier", c.backbone_lr_multiplier);
    read_key(j, "batch_size", c.batch_size);
    read_key(j, "label_fraction", c.label_fraction);
    read_key(j, "eval_interval", c.eval_interval);
    read_key(j, "eval_max_images", c.eval_max_images);
    read_key(j, "seed", c.seed);
    read_key(j, "depth_seed", c.depth_seed);
    read_key(j, "ds", c.components.ds);
    read_key(j, "df", c.components.df);
    read_key(j, "dc", c.components.dc);
    c.validate();
    return c;
}

Config load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        // Translate the byte offset into a line number.
        const auto upto = std::min<std::size_t>(e.byte, text.size());
        const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
        throw ConfigError("config: parse error at line " + std::to_string(line) + " of " + path.string() +
                          ": " + e.what());
    }
    return config_from_json(j);
}

std::string serialize_config(const Config& cfg) { return config_to_json(cfg).dump(2) + "\n"; }

std::string config_hash(const Config& cfg) {
    const auto text = config_to_json(cfg).dump();
    return sha256_hex(text.data(), text.size());
}

Components parse_components(std::string_view spec) {
    Components c{false, false, false};
    std::string s(spec);
    if (s == "none" || s.empty()) return c;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok.erase(std::remove_if(tok.begin(), tok.end(), ::isspace), tok.end());
        std::transform(tok.begin(), tok.end(), tok.begin(), ::tolower);
        if (tok == "ds")
            c.ds = true;
        else if (tok == "df")
            c.df = true;
        else if (tok == "dc")
            c.dc = true;
        else
            throw ConfigError("unknown component '" + tok + "' (expected ds, df, dc or none)");
    }
    return c;
}

std::string components_label(const Components& c) {
    std::string out;
    auto add = [&](bool on, const char* name) {
        if (!on) return;
        if (!out.empty()) out += "+";
        out += name;
    };
    add(c.ds, "DS");
    add(c.df, "DF");
    add(c.dc, "DC");
    return out.empty() ? "none" : out;
}

// ---------------------------------------------------------------------------
// Randomness
// ---------------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char ch : stream) {
        h ^= ch;
        h *= 0x100000001B3ULL;
    }
    std::uint64_t state = seed ^ h;
    const std::uint64_t a = splitmix64(state);
    state = a ^ (index * 0x9E3779B97F4A7C15ULL);
    return splitmix64(state);
}

int Rng::uniform_int(int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(static_cast<std::int64_t>(hi) - lo + 1);
    return lo + static_cast<int>(engine_() % span);
}

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// ---------------------------------------------------------------------------

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& logits) {
    const double m = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - m).exp();
    return e / e.sum();
}

std::string sha256_hex(const void* data, std::size_t size) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

}  // namespace dgseg
