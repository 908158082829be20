#include "dgseg/depth.hpp"

#include <algorithm>
#include <cmath>

#include "dgseg/datasynth.hpp"

namespace dgseg {

namespace {

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

std::array<double, 3> colormap_pixel(double d) {
    return {clip01(1.5 - std::abs(4.0 * d - 3.0)), clip01(1.5 - std::abs(4.0 * d - 2.0)),
            clip01(1.5 - std::abs(4.0 * d - 1.0))};
}

Image colormap(const std::vector<double>& gray, int height, int width) {
    if (gray.size() != static_cast<std::size_t>(height) * width)
        throw DataError("colormap: gray buffer does not match " + std::to_string(height) + "x" +
                        std::to_string(width));
    Image rgb(3, height, width);
    for (std::size_t i = 0; i < gray.size(); ++i) {
        const double d = gray[i];
        if (!(d >= 0.0 && d <= 1.0)) throw DataError("colormap: depth value outside [0,1]");
        const auto c = colormap_pixel(d);
        for (int ch = 0; ch < 3; ++ch) rgb.data(ch, static_cast<Eigen::Index>(i)) = c[static_cast<std::size_t>(ch)];
    }
    return rgb;
}

DepthMap make_depth_map(std::vector<double> gray, int height, int width) {
    DepthMap d;
    d.height = height;
    d.width = width;
    d.rgb = colormap(gray, height, width);
    d.gray = std::move(gray);
    return d;
}

DepthFeatureExtractor::DepthFeatureExtractor(std::uint64_t seed) {
    Rng rng(seed, "depth_features");
    auto init = [&](const nn::ConvSpec& s, RowMatrix& w, RowMatrix& b) {
        const double std = std::sqrt(2.0 / s.patch());
        w.resize(s.out_channels, s.patch());
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal(0.0, std);
        b.resize(s.out_channels, 1);
        for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.normal(0.0, 0.1);
    };
    init(conv1_, w1_, b1_);
    init(conv2_, w2_, b2_);
}

FeatureMap DepthFeatureExtractor::operator()(const Image& rgb) const {
    FeatureMap h1(kChannels, conv1_.out_size(rgb.height), conv1_.out_size(rgb.width));
    h1.data = nn::relu(nn::conv_apply(w1_, b1_, nn::im2col(rgb, conv1_)));
    FeatureMap h2(kChannels, h1.height, h1.width);
    h2.data = nn::relu(nn::conv_apply(w2_, b2_, nn::im2col(h1, conv2_)));
    return h2;
}

OracleDepthProvider::OracleDepthProvider(const Dataset& data, std::uint64_t depth_seed)
    : data_(data), extractor_(depth_seed) {}

DepthMap OracleDepthProvider::estimate(int image_id) const { return data_.get(image_id).depth; }

FeatureMap OracleDepthProvider::features(int image_id) const { return extractor_(data_.get(image_id).depth.rgb); }

}  // namespace dgseg
