#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include "dgseg/core.hpp"

namespace dgseg {

enum class ShapeKind { circle = 0, rectangle = 1, triangle = 2 };

struct Shape {
    ShapeKind kind = ShapeKind::circle;
    double cx = 0, cy = 0;  // pixel coordinates of the center
    double size = 0;        // radius / half-width / circumradius
    double aspect = 1.0;    // rectangle half-height = size * aspect
    double angle = 0.0;     // triangle rotation (radians)
    std::array<double, 3> color{};
    double z = 0.0;  // relative nearness in (0,1], larger is closer

    bool covers(double px, double py) const;
};

struct Scene {
    int height = 64;
    int width = 64;
    std::array<double, 3> background{};
    std::vector<Shape> shapes;
};

/// One generated (or loaded) image with its analytic depth and instances.
struct Sample {
    int id = 0;
    Image image;  // 3 x (H*W), values on the 1/255 grid
    DepthMap depth;
    InstanceSet gt;
    std::vector<double> z;  // z of each gt instance, same order as gt.masks
};

struct SplitManifest {
    double fraction = 1.0;
    std::vector<int> labeled_ids;
    std::vector<int> unlabeled_ids;
};

struct Dataset {
    int canvas = 64;
    int num_classes = 3;
    std::vector<Sample> samples;
    std::vector<int> train_ids;
    std::vector<int> val_ids;
    std::vector<SplitManifest> splits;
    std::array<double, 3> mean{0.5, 0.5, 0.5};  // per-channel mean over training images

    /// Throws DataError on unknown ids.
    const Sample& get(int id) const;
    bool contains(int id) const { return index_.count(id) != 0; }
    /// Split whose fraction matches within 1e-9; throws DataError otherwise.
    const SplitManifest& split(double fraction) const;
    void reindex();

private:
    std::map<int, std::size_t> index_;
};

/// Visible instance masks after z-ordered occlusion, plus the depth image.
struct RenderedScene {
    InstanceSet gt;
    std::vector<double> z;
    std::vector<double> gray;
    Image image;
};

/// Rasterizes a scene. Shapes are painted far to near; each gt mask is the
/// region where that shape is topmost. Returns nullopt when any shape's visible
/// area is below `min_area`. `noise` receives per-pixel texture noise (may be null).
std::optional<RenderedScene> render_scene(const Scene& scene, int num_classes, int min_area, Rng* noise);

/// Draws a random scene and renders it, resampling (up to 200 attempts) until
/// every instance keeps at least alpha_S + 1 visible pixels.
Sample generate_scene(Rng& rng, int num_shapes, int canvas, int alpha_S, int num_classes = 3);

/// Sample for dataset id `id`: its own RNG stream derived from (seed, id).
Sample generate_sample(std::uint64_t seed, int id, const Config& cfg);

SplitManifest make_splits(const std::vector<int>& ids, double fraction, Rng& rng);

/// Builds `num_train + num_val` samples; val ids follow the train ids.
Dataset generate_dataset(int num_train, int num_val, const std::vector<double>& fractions, const Config& cfg);

std::array<double, 3> channel_mean(const Dataset& data, const std::vector<int>& ids);

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

enum class AugMode { weak, strong };

struct AugParams {
    bool flip = false;
    // Photometric (strong only).
    bool photometric = false;
    double brightness = 1.0;
    double contrast = 1.0;
    double saturation = 1.0;
    bool grayscale = false;
    int cut_x = 0, cut_y = 0, cut_size = 0;
};

inline constexpr int kCutoutSize = 16;

AugParams draw_aug_params(AugMode mode, Rng& rng, int height, int width);

Image hflip(const Image& img);
Mask hflip(const Mask& m);
InstanceSet hflip(const InstanceSet& s);
DepthMap hflip(const DepthMap& d);

/// Applies the photometric part of `p` (color jitter, grayscale, cutout filled
/// with `mean`). Never touches geometry.
Image apply_photometric(const Image& img, const AugParams& p, const std::array<double, 3>& mean);

struct Augmented {
    Image image;
    InstanceSet gt;
    AugParams params;
};

Augmented augment(const Image& image, const InstanceSet& gt, AugMode mode, Rng& rng,
                  const std::array<double, 3>& mean);

/// Teacher (weak) and student (strong) views sharing one geometric transform.
struct PairedViews {
    Image weak;
    Image strong;
    InstanceSet gt;  // aligned with both views
    AugParams params;
};

PairedViews augment_pair(const Image& image, const InstanceSet& gt, Rng& rng, const std::array<double, 3>& mean);

// ---------------------------------------------------------------------------
// On-disk format
// ---------------------------------------------------------------------------

/// Row-major run lengths, starting with a (possibly zero) background run.
std::vector<int> rle_encode(const Mask& m);
Mask rle_decode(const std::vector<int>& counts, int height, int width);

nlohmann::json instances_to_json(const InstanceSet& s, const std::vector<double>* z = nullptr);
InstanceSet instances_from_json(const nlohmann::json& j);

/// Writes images/{id}.png, depths/{id}.png, annotations.json and splits.json.
void write_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace dgseg
