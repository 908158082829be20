#pragma once

#include <string>
#include <vector>

#include "dgseg/core.hpp"

namespace dgseg::nn {

struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int pad = 1;
    int dilation = 1;

    int out_size(int n) const { return (n + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1; }
    int patch() const { return in_channels * kernel * kernel; }
};

/// Unfolds `x` into a (C*k*k) x (Ho*Wo) matrix so a convolution becomes W * cols.
RowMatrix im2col(const FeatureMap& x, const ConvSpec& spec);
/// Adjoint of im2col: scatters column gradients back onto an (h, w) map.
FeatureMap col2im(const RowMatrix& cols, const ConvSpec& spec, int h, int w);

/// Convolution on an unfolded input. `weight` is out x patch, `bias` is out x 1.
RowMatrix conv_apply(const RowMatrix& weight, const RowMatrix& bias, const RowMatrix& cols);

/// Bilinear resampling with half-pixel centers (align_corners = false), as a
/// separable linear operator so the backward pass is its exact transpose.
class BilinearResize {
public:
    BilinearResize(int in_h, int in_w, int out_h, int out_w);

    FeatureMap forward(const FeatureMap& x) const;
    /// Gradient with respect to the input given the gradient of the output.
    FeatureMap backward(const FeatureMap& grad_out) const;

    int in_h() const { return in_h_; }
    int in_w() const { return in_w_; }
    int out_h() const { return out_h_; }
    int out_w() const { return out_w_; }

private:
    struct Tap {
        int i0, i1;
        double w0, w1;
    };
    static std::vector<Tap> taps(int in, int out);

    int in_h_, in_w_, out_h_, out_w_;
    std::vector<Tap> ys_, xs_;
};

inline RowMatrix relu(const RowMatrix& z) { return z.cwiseMax(0.0); }

/// Zeroes entries of `grad` where the pre-activation was not positive.
inline RowMatrix relu_backward(const RowMatrix& grad, const RowMatrix& pre) {
    return (pre.array() > 0.0).select(grad, 0.0);
}

// ---------------------------------------------------------------------------
// Parameters and optimizer
// ---------------------------------------------------------------------------

struct Param {
    std::string name;
    RowMatrix value;
    bool backbone = false;  // trained at lr * backbone_lr_multiplier
};

using ParamSet = std::vector<Param>;

/// Gradient buffers aligned with a ParamSet.
struct Gradients {
    std::vector<RowMatrix> grads;

    static Gradients zeros_like(const ParamSet& params);
    void set_zero();
    void scale(double s);
    void add(const Gradients& other);
};

/// SHA-256 over names, shapes and raw values of the parameters, in order.
std::string hash_params(const ParamSet& params);
/// Hash restricted to parameters whose name starts with `prefix`.
std::string hash_params(const ParamSet& params, const std::string& prefix);

/// Element-wise teacher <- alpha * teacher + (1 - alpha) * student.
/// Throws std::invalid_argument on any name/shape mismatch.
void ema_update(ParamSet& teacher, const ParamSet& student, double alpha);

/// Adam with decoupled weight decay. Parameters are updated in place; an
/// inactive parameter keeps both its value and its moments untouched.
class AdamW {
public:
    struct Options {
        double lr = 1e-4;
        double weight_decay = 0.05;
        double backbone_lr_multiplier = 0.1;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    AdamW() = default;
    AdamW(const ParamSet& params, Options opts);

    void step(ParamSet& params, const Gradients& g, const std::vector<bool>& active);

    const Options& options() const { return opts_; }
    std::vector<RowMatrix>& first_moments() { return m_; }
    std::vector<RowMatrix>& second_moments() { return v_; }
    const std::vector<RowMatrix>& first_moments() const { return m_; }
    const std::vector<RowMatrix>& second_moments() const { return v_; }
    std::vector<long>& step_counts() { return t_; }
    const std::vector<long>& step_counts() const { return t_; }

private:
    Options opts_;
    std::vector<RowMatrix> m_, v_;
    std::vector<long> t_;
};

}  // namespace dgseg::nn
