#pragma once

#include <optional>
#include <string>

#include "dgseg/core.hpp"
#include "dgseg/nn.hpp"

namespace dgseg {

/// Layer widths of the segmentation network.
struct ModelDims {
    int num_queries = 20;
    int num_classes = 3;
    int canvas = 64;
    int stem_channels = 16;     // first backbone conv
    int backbone_channels = 32; // C_s
    int embed_dim = 16;         // D, pixel embedding / query width
    int depth_channels = 8;     // C_d
    int class_hidden = 32;

    static ModelDims from_config(const Config& cfg);
};

/// Everything the backward pass needs from one forward pass.
struct ForwardCache {
    RowMatrix cols1, z1, cols2, z2;
    RowMatrix fusion_in;  // concat(interp(F_d), F_s)
    RowMatrix fused;      // F_fused (== F_s when fusion is off)
    RowMatrix embed;      // E: D x (H*W)
    RowMatrix init_attn;  // sigmoid(Q0 E)
    RowMatrix pooled_raw; // A E^T
    Eigen::VectorXd denom;
    RowMatrix pooled;
    RowMatrix queries;    // refined queries
    RowMatrix hidden_pre;
    RowMatrix hidden;
};

/// Desk-scale query-based instance segmenter:
///   backbone (2 convs) -> F_s -> optional depth fusion -> 1x1 pixel head,
///   upsampled to the canvas -> per-pixel embedding E.
/// N learned queries read E once through a sigmoid-mask pooling step, are
/// refined, and produce class logits (MLP) and mask logits (dot with E).
class SegModel {
public:
    SegModel(const ModelDims& dims, Rng& init_rng);
    SegModel(const Config& cfg, Rng& init_rng) : SegModel(ModelDims::from_config(cfg), init_rng) {}

    /// Throws std::invalid_argument when fusion is active and no depth
    /// features are given, or on shape mismatch.
    PredictionSet forward(const Image& image, const FeatureMap* depth_features = nullptr,
                          ForwardCache* cache = nullptr) const;

    /// Accumulates parameter gradients of a scalar loss given its gradients
    /// with respect to the class and mask logits. Depth features get none.
    void backward(const ForwardCache& cache, const RowMatrix& d_class_logits, const RowMatrix& d_mask_logits,
                  nn::Gradients& grads) const;

    /// Output of the backbone alone (F_s).
    FeatureMap backbone_features(const Image& image) const;

    /// Depth fusion: 1x1 conv over concat(bilinear(F_d -> F_s size), F_s).
    FeatureMap fuse(const FeatureMap& depth_features, const FeatureMap& backbone_features) const;

    bool fusion_active() const { return fusion_active_; }
    void set_fusion_active(bool on) { fusion_active_ = on; }

    /// Resets the fusion conv to [0 | I] with zero bias, making it the identity on F_s.
    void reset_fusion_identity();

    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }
    const ModelDims& dims() const { return dims_; }

    /// Whether a parameter is updated in the current mode (fusion parameters
    /// only while fusion is active).
    std::vector<bool> trainable_mask() const;

    nn::ParamSet clone_parameters() const { return params_; }
    /// Throws std::invalid_argument on a name or shape mismatch.
    void load_parameters(const nn::ParamSet& snapshot);

    std::size_t index_of(const std::string& name) const;

private:
    const RowMatrix& p(std::size_t i) const { return params_[i].value; }

    ModelDims dims_;
    nn::ConvSpec conv1_, conv2_;
    nn::BilinearResize upsample_;
    bool fusion_active_ = false;
    nn::ParamSet params_;
    std::size_t conv1_w_, conv1_b_, conv2_w_, conv2_b_, fusion_w_, fusion_b_, pixel_w_, pixel_b_, queries_,
        refine_w_, hidden_w_, hidden_b_, class_w_, class_b_;
};

/// Adds two normalized coordinate channels (x then y, in [-1,1]) to an RGB image.
FeatureMap with_coordinates(const Image& image);

}  // namespace dgseg
