#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace dgseg {

// ---------------------------------------------------------------------------
// Errors. The CLI maps these onto exit codes (ConfigError 1, DataError 2,
// anything else 3).
// ---------------------------------------------------------------------------
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Images and masks
// ---------------------------------------------------------------------------

/// Planar (channel-first) image or feature map: `data` is channels x (height*width).
struct FeatureMap {
    int height = 0;
    int width = 0;
    RowMatrix data;

    FeatureMap() = default;
    FeatureMap(int channels, int h, int w) : height(h), width(w), data(RowMatrix::Zero(channels, h * w)) {}

    int channels() const { return static_cast<int>(data.rows()); }
    int pixels() const { return height * width; }
    double& at(int c, int y, int x) { return data(c, y * width + x); }
    double at(int c, int y, int x) const { return data(c, y * width + x); }
    bool operator==(const FeatureMap& o) const {
        return height == o.height && width == o.width && data.rows() == o.data.rows() && data == o.data;
    }
};

/// RGB image in [0,1], stored planar as 3 x (H*W).
using Image = FeatureMap;

struct Mask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;  // row-major, values {0,1}

    Mask() = default;
    Mask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}

    std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
    int area() const;
    bool operator==(const Mask&) const = default;
};

/// Ground-truth instances or pseudo-labels. Pseudo-labels carry scores.
struct InstanceSet {
    int height = 0;
    int width = 0;
    std::vector<Mask> masks;
    std::vector<int> classes;
    std::optional<std::vector<double>> scores;

    std::size_t size() const { return masks.size(); }
    bool empty() const { return masks.empty(); }

    /// Throws DataError when any invariant is broken (length mismatch, shape
    /// mismatch, empty mask, class out of range, score out of [0,1]).
    void validate(int num_classes) const;
};

/// Raw network output for one image.
struct PredictionSet {
    int height = 0;
    int width = 0;
    RowMatrix class_logits;  // N x (c+1), last column = no-object
    RowMatrix mask_logits;   // N x (H*W)

    int num_queries() const { return static_cast<int>(class_logits.rows()); }
    int num_classes() const { return static_cast<int>(class_logits.cols()) - 1; }
};

/// Relative depth (1 = nearest, 0 = background) and its colormapped rendering.
struct DepthMap {
    int height = 0;
    int width = 0;
    std::vector<double> gray;  // row-major H*W
    Image rgb;                 // 3 x (H*W)
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class LambdaDMode { fixed, controller };

struct Components {
    bool ds = true;
    bool df = true;
    bool dc = true;
    bool operator==(const Components&) const = default;
};

struct Config {
    // Loss weights.
    double lambda_l = 1.0;
    double lambda_u = 2.0;
    double lambda_D = 5.0;
    double lambda_C = 1.0;
    // Pseudo-label thresholds.
    double alpha_C = 0.7;
    int alpha_S = 5;
    // Teacher EMA decay.
    double alpha_ema = 0.9996;
    // Depth controller.
    double lambda_max = 1.0;
    double stats_momentum = 0.999;
    LambdaDMode lambda_d_mode = LambdaDMode::controller;
    double lambda_d_fixed = 0.5;
    int controller_topk = 1;
    // Model / data shape.
    int num_queries = 20;
    int num_classes = 3;
    int canvas = 64;
    int max_shapes = 6;
    // Schedule and optimizer.
    std::array<int, 3> stage_iters{2000, 1000, 2000};
    double lr = 1e-4;
    double weight_decay = 0.05;
    double backbone_lr_multiplier = 0.1;
    int batch_size = 16;
    // Data split and evaluation cadence.
    double label_fraction = 0.05;
    int eval_interval = 250;
    int eval_max_images = 0;  // 0 = whole validation split
    // Seeds.
    std::uint64_t seed = 0;
    std::uint64_t depth_seed = 7;

    Components components;

    bool operator==(const Config&) const = default;

    /// Throws ConfigError naming the first offending field.
    void validate() const;
    int total_iters() const { return stage_iters[0] + stage_iters[1] + stage_iters[2]; }
};

nlohmann::json config_to_json(const Config& cfg);
Config config_from_json(const nlohmann::json& j);
Config load_config(const std::filesystem::path& path);
std::string serialize_config(const Config& cfg);
/// SHA-256 hex digest of the serialized config.
std::string config_hash(const Config& cfg);

/// Parses "none", "ds", "ds,df,dc" ... Throws ConfigError on unknown names.
Components parse_components(std::string_view spec);
/// "none", "DS", "DS+DF", ...
std::string components_label(const Components& c);

// ---------------------------------------------------------------------------
// Deterministic randomness
// ---------------------------------------------------------------------------

/// One splitmix64 step: advances `state` and returns the mixed output.
std::uint64_t splitmix64(std::uint64_t& state);

/// Stream seed for (seed, stream name, index):
///   state = seed ^ fnv1a64(stream); a = splitmix64(state);
///   state = a ^ (index * 0x9E3779B97F4A7C15); return splitmix64(state).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0);

/// mt19937_64 with hand-rolled distributions so sequences do not depend on
/// the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    Rng(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0)
        : engine_(derive_seed(seed, stream, index)) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform in [0,1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [lo, hi].
    int uniform_int(int lo, int hi);
    bool bernoulli(double p) { return uniform() < p; }
    /// Standard normal (Box-Muller, one draw per call).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(engine_() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Small numeric helpers
// ---------------------------------------------------------------------------

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& logits);

/// SHA-256 hex digest of raw bytes.
std::string sha256_hex(const void* data, std::size_t size);

}  // namespace dgseg
