#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "dgseg/core.hpp"
#include "dgseg/nn.hpp"

namespace dgseg {

struct Dataset;

/// Jet-style map of one relative depth value d in [0,1]:
///   r = clip(1.5 - |4d - 3|), g = clip(1.5 - |4d - 2|), b = clip(1.5 - |4d - 1|).
std::array<double, 3> colormap_pixel(double d);

/// Colormaps a row-major gray image. Throws DataError on values outside [0,1].
Image colormap(const std::vector<double>& gray, int height, int width);

/// Builds a DepthMap whose rgb field is colormap(gray).
DepthMap make_depth_map(std::vector<double> gray, int height, int width);

/// Frozen two-layer convolution stack (3 -> 8 channels, stride 2, then 8 -> 8)
/// applied to a colormapped depth image. Weights come from a dedicated seed and
/// are never exposed as trainable parameters.
class DepthFeatureExtractor {
public:
    static constexpr int kChannels = 8;

    explicit DepthFeatureExtractor(std::uint64_t seed);

    FeatureMap operator()(const Image& depth_rgb) const;

private:
    nn::ConvSpec conv1_{3, kChannels, 3, 2, 1, 1};
    nn::ConvSpec conv2_{kChannels, kChannels, 3, 1, 1, 1};
    RowMatrix w1_, b1_, w2_, b2_;
};

/// Frozen source of depth maps and depth features for dataset images.
/// Equal inputs always yield equal outputs.
class DepthProvider {
public:
    virtual ~DepthProvider() = default;
    virtual DepthMap estimate(int image_id) const = 0;
    virtual FeatureMap features(int image_id) const = 0;
};

/// Serves the analytic depth stored with each synthetic sample.
class OracleDepthProvider final : public DepthProvider {
public:
    OracleDepthProvider(const Dataset& data, std::uint64_t depth_seed);

    /// Throws DataError for unknown ids.
    DepthMap estimate(int image_id) const override;
    FeatureMap features(int image_id) const override;

    const DepthFeatureExtractor& extractor() const { return extractor_; }

private:
    const Dataset& data_;
    DepthFeatureExtractor extractor_;
};

}  // namespace dgseg
