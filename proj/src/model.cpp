#include "dgseg/model.hpp"

#include <cmath>
#include <stdexcept>

namespace dgseg {

ModelDims ModelDims::from_config(const Config& cfg) {
    ModelDims d;
    d.num_queries = cfg.num_queries;
    d.num_classes = cfg.num_classes;
    d.canvas = cfg.canvas;
    return d;
}

FeatureMap with_coordinates(const Image& image) {
    FeatureMap x(image.channels() + 2, image.height, image.width);
    x.data.topRows(image.channels()) = image.data;
    for (int y = 0; y < image.height; ++y) {
        for (int c = 0; c < image.width; ++c) {
            x.at(image.channels(), y, c) = 2.0 * (c + 0.5) / image.width - 1.0;
            x.at(image.channels() + 1, y, c) = 2.0 * (y + 0.5) / image.height - 1.0;
        }
    }
    return x;
}

SegModel::SegModel(const ModelDims& d, Rng& rng)
    : dims_(d),
      conv1_{5, d.stem_channels, 3, 2, 1, 1},
      conv2_{d.stem_channels, d.backbone_channels, 3, 1, 2, 2},
      upsample_(d.canvas / 2, d.canvas / 2, d.canvas, d.canvas) {
    auto add = [&](std::string name, int rows, int cols, double std, bool backbone) {
        RowMatrix m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std > 0 ? rng.normal(0.0, std) : 0.0;
        params_.push_back({std::move(name), std::move(m), backbone});
        return params_.size() - 1;
    };
    const int D = d.embed_dim;
    conv1_w_ = add("backbone.conv1.weight", conv1_.out_channels, conv1_.patch(), std::sqrt(2.0 / conv1_.patch()), true);
    conv1_b_ = add("backbone.conv1.bias", conv1_.out_channels, 1, 0.0, true);
    conv2_w_ = add("backbone.conv2.weight", conv2_.out_channels, conv2_.patch(), std::sqrt(2.0 / conv2_.patch()), true);
    conv2_b_ = add("backbone.conv2.bias", conv2_.out_channels, 1, 0.0, true);
    fusion_w_ = add("fusion.weight", d.backbone_channels, d.depth_channels + d.backbone_channels, 0.0, false);
    fusion_b_ = add("fusion.bias", d.backbone_channels, 1, 0.0, false);
    pixel_w_ = add("pixel_head.weight", D, d.backbone_channels, std::sqrt(1.0 / d.backbone_channels), false);
    pixel_b_ = add("pixel_head.bias", D, 1, 0.0, false);
    queries_ = add("queries", d.num_queries, D, std::sqrt(1.0 / D), false);
    refine_w_ = add("refine.weight", D, D, 0.5 * std::sqrt(1.0 / D), false);
    hidden_w_ = add("class_head.hidden.weight", d.class_hidden, D, std::sqrt(2.0 / D), false);
    hidden_b_ = add("class_head.hidden.bias", d.class_hidden, 1, 0.0, false);
    class_w_ = add("class_head.out.weight", d.num_classes + 1, d.class_hidden, 0.1 * std::sqrt(1.0 / d.class_hidden), false);
    class_b_ = add("class_head.out.bias", d.num_classes + 1, 1, 0.0, false);
    reset_fusion_identity();
}

void SegModel::reset_fusion_identity() {
    auto& w = params_[fusion_w_].value;
    w.setZero();
    for (int c = 0; c < dims_.backbone_channels; ++c) w(c, dims_.depth_channels + c) = 1.0;
    params_[fusion_b_].value.setZero();
}

std::size_t SegModel::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (params_[i].name == name) return i;
    throw std::invalid_argument("no parameter named " + name);
}

std::vector<bool> SegModel::trainable_mask() const {
    std::vector<bool> m(params_.size(), true);
    m[fusion_w_] = fusion_active_;
    m[fusion_b_] = fusion_active_;
    return m;
}

void SegModel::load_parameters(const nn::ParamSet& snap) {
    if (snap.size() != params_.size()) throw std::invalid_argument("load_parameters: parameter count mismatch");
    for (std::size_t i = 0; i < snap.size(); ++i) {
        const auto& a = params_[i];
        const auto& b = snap[i];
        if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols())
            throw std::invalid_argument("load_parameters: shape mismatch on " + a.name);
    }
    for (std::size_t i = 0; i < snap.size(); ++i) params_[i].value = snap[i].value;
}

FeatureMap SegModel::backbone_features(const Image& image) const {
    const FeatureMap x = with_coordinates(image);
    FeatureMap a1(conv1_.out_channels, conv1_.out_size(x.height), conv1_.out_size(x.width));
    a1.data = nn::relu(nn::conv_apply(p(conv1_w_), p(conv1_b_), nn::im2col(x, conv1_)));
    FeatureMap fs(conv2_.out_channels, a1.height, a1.width);
    fs.data = nn::relu(nn::conv_apply(p(conv2_w_), p(conv2_b_), nn::im2col(a1, conv2_)));
    return fs;
}

FeatureMap SegModel::fuse(const FeatureMap& fd, const FeatureMap& fs) const {
    const nn::BilinearResize interp(fd.height, fd.width, fs.height, fs.width);
    const FeatureMap d = interp.forward(fd);
    RowMatrix cat(d.channels() + fs.channels(), fs.pixels());
    cat.topRows(d.channels()) = d.data;
    cat.bottomRows(fs.channels()) = fs.data;
    FeatureMap out(dims_.backbone_channels, fs.height, fs.width);
    out.data = nn::conv_apply(p(fusion_w_), p(fusion_b_), cat);
    return out;
}

PredictionSet SegModel::forward(const Image& image, const FeatureMap* depth_features, ForwardCache* cache) const {
    if (image.channels() != 3 || image.height != dims_.canvas || image.width != dims_.canvas)
        throw std::invalid_argument("SegModel::forward: expected a 3x" + std::to_string(dims_.canvas) + "x" +
                                    std::to_string(dims_.canvas) + " image");
    if (fusion_active_ && depth_features == nullptr)
        throw std::invalid_argument("SegModel::forward: depth fusion is active but no depth features were given");
    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;

    const FeatureMap x = with_coordinates(image);
    const int h1 = conv1_.out_size(x.height), w1 = conv1_.out_size(x.width);
    c.cols1 = nn::im2col(x, conv1_);
    c.z1 = nn::conv_apply(p(conv1_w_), p(conv1_b_), c.cols1);
    FeatureMap a1(conv1_.out_channels, h1, w1);
    a1.data = nn::relu(c.z1);
    c.cols2 = nn::im2col(a1, conv2_);
    c.z2 = nn::conv_apply(p(conv2_w_), p(conv2_b_), c.cols2);
    RowMatrix fs = nn::relu(c.z2);

    if (fusion_active_) {
        if (depth_features->channels() != dims_.depth_channels)
            throw std::invalid_argument("SegModel::forward: depth features have the wrong channel count");
        const nn::BilinearResize interp(depth_features->height, depth_features->width, h1, w1);
        const FeatureMap d = interp.forward(*depth_features);
        c.fusion_in.resize(dims_.depth_channels + dims_.backbone_channels, fs.cols());
        c.fusion_in.topRows(dims_.depth_channels) = d.data;
        c.fusion_in.bottomRows(dims_.backbone_channels) = fs;
        c.fused = nn::conv_apply(p(fusion_w_), p(fusion_b_), c.fusion_in);
    } else {
        c.fusion_in.resize(0, 0);
        c.fused = std::move(fs);
    }

    FeatureMap pix(dims_.embed_dim, h1, w1);
    pix.data = nn::conv_apply(p(pixel_w_), p(pixel_b_), c.fused);
    c.embed = upsample_.forward(pix).data;

    const RowMatrix& q0 = p(queries_);
    c.init_attn = (q0 * c.embed).unaryExpr([](double v) { return sigmoid(v); });
    c.pooled_raw = c.init_attn * c.embed.transpose();
    c.denom = c.init_attn.rowwise().sum().array() + 1.0;
    c.pooled = c.pooled_raw.array().colwise() / c.denom.array();
    c.queries = q0 + c.pooled * p(refine_w_).transpose();
    c.hidden_pre = c.queries * p(hidden_w_).transpose();
    c.hidden_pre.rowwise() += p(hidden_b_).col(0).transpose();
    c.hidden = nn::relu(c.hidden_pre);

    PredictionSet out;
    out.height = image.height;
    out.width = image.width;
    out.class_logits = c.hidden * p(class_w_).transpose();
    out.class_logits.rowwise() += p(class_b_).col(0).transpose();
    out.mask_logits = c.queries * c.embed;
    return out;
}

void SegModel::backward(const ForwardCache& c, const RowMatrix& d_class, const RowMatrix& d_mask,
                        nn::Gradients& g) const {
    auto& G = g.grads;
    // Class head.
    G[class_w_] += d_class.transpose() * c.hidden;
    G[class_b_] += d_class.colwise().sum().transpose();
    const RowMatrix d_hidden = nn::relu_backward(d_class * p(class_w_), c.hidden_pre);
    G[hidden_w_] += d_hidden.transpose() * c.queries;
    G[hidden_b_] += d_hidden.colwise().sum().transpose();
    RowMatrix d_q = d_hidden * p(hidden_w_);

    // Mask head: M = Q E.
    d_q += d_mask * c.embed.transpose();
    RowMatrix d_embed = c.queries.transpose() * d_mask;

    // Refinement: Q = Q0 + pooled Wr^T.
    RowMatrix d_q0 = d_q;
    const RowMatrix d_pooled = d_q * p(refine_w_);
    G[refine_w_] += d_q.transpose() * c.pooled;

    // pooled = (A E^T) / denom, denom = rowsum(A) + 1.
    const RowMatrix d_raw = d_pooled.array().colwise() / c.denom.array();
    const Eigen::VectorXd d_denom =
        -(d_pooled.cwiseProduct(c.pooled)).rowwise().sum().array() / c.denom.array();
    RowMatrix d_attn = d_raw * c.embed;
    d_attn.colwise() += d_denom;
    d_embed += d_raw.transpose() * c.init_attn;
    const RowMatrix d_m0 = d_attn.cwiseProduct(c.init_attn.cwiseProduct((1.0 - c.init_attn.array()).matrix()));
    d_q0 += d_m0 * c.embed.transpose();
    d_embed += p(queries_).transpose() * d_m0;
    G[queries_] += d_q0;

    // Upsampling and pixel head.
    FeatureMap d_embed_map(dims_.embed_dim, dims_.canvas, dims_.canvas);
    d_embed_map.data = std::move(d_embed);
    const RowMatrix d_pix = upsample_.backward(d_embed_map).data;
    G[pixel_w_] += d_pix * c.fused.transpose();
    G[pixel_b_] += d_pix.rowwise().sum();
    const RowMatrix d_fused = p(pixel_w_).transpose() * d_pix;

    RowMatrix d_fs;
    if (c.fusion_in.size() > 0) {
        G[fusion_w_] += d_fused * c.fusion_in.transpose();
        G[fusion_b_] += d_fused.rowwise().sum();
        // Depth features are constants: only the F_s block propagates.
        d_fs = p(fusion_w_).rightCols(dims_.backbone_channels).transpose() * d_fused;
    } else {
        d_fs = d_fused;
    }

    // Backbone.
    const RowMatrix d_z2 = nn::relu_backward(d_fs, c.z2);
    G[conv2_w_] += d_z2 * c.cols2.transpose();
    G[conv2_b_] += d_z2.rowwise().sum();
    const RowMatrix d_cols2 = p(conv2_w_).transpose() * d_z2;
    const int h1 = dims_.canvas / 2;
    const FeatureMap d_a1 = nn::col2im(d_cols2, conv2_, h1, h1);
    const RowMatrix d_z1 = nn::relu_backward(d_a1.data, c.z1);
    G[conv1_w_] += d_z1 * c.cols1.transpose();
    G[conv1_b_] += d_z1.rowwise().sum();
}

}  // namespace dgseg
