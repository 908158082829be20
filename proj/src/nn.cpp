#include "dgseg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dgseg::nn {

RowMatrix im2col(const FeatureMap& x, const ConvSpec& s) {
    const int ho = s.out_size(x.height);
    const int wo = s.out_size(x.width);
    RowMatrix cols = RowMatrix::Zero(s.patch(), static_cast<Eigen::Index>(ho) * wo);
    for (int c = 0; c < s.in_channels; ++c) {
        const double* src = x.data.row(c).data();
        for (int ky = 0; ky < s.kernel; ++ky) {
            for (int kx = 0; kx < s.kernel; ++kx) {
                double* dst = cols.row((c * s.kernel + ky) * s.kernel + kx).data();
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * s.stride - s.pad + ky * s.dilation;
                    if (iy < 0 || iy >= x.height) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * s.stride - s.pad + kx * s.dilation;
                        if (ix < 0 || ix >= x.width) continue;
                        dst[oy * wo + ox] = src[iy * x.width + ix];
                    }
                }
            }
        }
    }
    return cols;
}

FeatureMap col2im(const RowMatrix& cols, const ConvSpec& s, int h, int w) {
    const int ho = s.out_size(h);
    const int wo = s.out_size(w);
    FeatureMap x(s.in_channels, h, w);
    for (int c = 0; c < s.in_channels; ++c) {
        double* dst = x.data.row(c).data();
        for (int ky = 0; ky < s.kernel; ++ky) {
            for (int kx = 0; kx < s.kernel; ++kx) {
                const double* src = cols.row((c * s.kernel + ky) * s.kernel + kx).data();
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * s.stride - s.pad + ky * s.dilation;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * s.stride - s.pad + kx * s.dilation;
                        if (ix < 0 || ix >= w) continue;
                        dst[iy * w + ix] += src[oy * wo + ox];
                    }
                }
            }
        }
    }
    return x;
}

RowMatrix conv_apply(const RowMatrix& weight, const RowMatrix& bias, const RowMatrix& cols) {
    RowMatrix out = weight * cols;
    out.colwise() += bias.col(0);
    return out;
}

// ---------------------------------------------------------------------------

std::vector<BilinearResize::Tap> BilinearResize::taps(int in, int out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        int i0 = static_cast<int>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        const int i1 = std::min(i0 + 1, in - 1);
        const double frac = src - i0;
        t[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - frac, frac};
    }
    return t;
}

BilinearResize::BilinearResize(int in_h, int in_w, int out_h, int out_w)
    : in_h_(in_h), in_w_(in_w), out_h_(out_h), out_w_(out_w), ys_(taps(in_h, out_h)), xs_(taps(in_w, out_w)) {}

FeatureMap BilinearResize::forward(const FeatureMap& x) const {
    if (x.height == out_h_ && x.width == out_w_ && in_h_ == out_h_ && in_w_ == out_w_) return x;
    FeatureMap out(x.channels(), out_h_, out_w_);
    // Rows first (vertical pass into a temp), then columns.
    RowMatrix tmp = RowMatrix::Zero(x.channels(), static_cast<Eigen::Index>(out_h_) * in_w_);
    for (int oy = 0; oy < out_h_; ++oy) {
        const auto& t = ys_[static_cast<std::size_t>(oy)];
        tmp.middleCols(static_cast<Eigen::Index>(oy) * in_w_, in_w_) =
            t.w0 * x.data.middleCols(static_cast<Eigen::Index>(t.i0) * in_w_, in_w_) +
            t.w1 * x.data.middleCols(static_cast<Eigen::Index>(t.i1) * in_w_, in_w_);
    }
    for (int c = 0; c < x.channels(); ++c) {
        const double* src = tmp.row(c).data();
        double* dst = out.data.row(c).data();
        for (int oy = 0; oy < out_h_; ++oy) {
            const double* srow = src + static_cast<std::ptrdiff_t>(oy) * in_w_;
            double* drow = dst + static_cast<std::ptrdiff_t>(oy) * out_w_;
            for (int ox = 0; ox < out_w_; ++ox) {
                const auto& t = xs_[static_cast<std::size_t>(ox)];
                drow[ox] = t.w0 * srow[t.i0] + t.w1 * srow[t.i1];
            }
        }
    }
    return out;
}

FeatureMap BilinearResize::backward(const FeatureMap& g) const {
    if (in_h_ == out_h_ && in_w_ == out_w_) return g;
    RowMatrix tmp = RowMatrix::Zero(g.channels(), static_cast<Eigen::Index>(out_h_) * in_w_);
    for (int c = 0; c < g.channels(); ++c) {
        const double* src = g.data.row(c).data();
        double* dst = tmp.row(c).data();
        for (int oy = 0; oy < out_h_; ++oy) {
            const double* srow = src + static_cast<std::ptrdiff_t>(oy) * out_w_;
            double* drow = dst + static_cast<std::ptrdiff_t>(oy) * in_w_;
            for (int ox = 0; ox < out_w_; ++ox) {
                const auto& t = xs_[static_cast<std::size_t>(ox)];
                drow[t.i0] += t.w0 * srow[ox];
                drow[t.i1] += t.w1 * srow[ox];
            }
        }
    }
    FeatureMap out(g.channels(), in_h_, in_w_);
    for (int oy = 0; oy < out_h_; ++oy) {
        const auto& t = ys_[static_cast<std::size_t>(oy)];
        const auto src = tmp.middleCols(static_cast<Eigen::Index>(oy) * in_w_, in_w_);
        out.data.middleCols(static_cast<Eigen::Index>(t.i0) * in_w_, in_w_) += t.w0 * src;
        out.data.middleCols(static_cast<Eigen::Index>(t.i1) * in_w_, in_w_) += t.w1 * src;
    }
    return out;
}

// ---------------------------------------------------------------------------

Gradients Gradients::zeros_like(const ParamSet& params) {
    Gradients g;
    g.grads.reserve(params.size());
    for (const auto& p : params) g.grads.push_back(RowMatrix::Zero(p.value.rows(), p.value.cols()));
    return g;
}

void Gradients::set_zero() {
    for (auto& m : grads) m.setZero();
}

void Gradients::scale(double s) {
    for (auto& m : grads) m *= s;
}

void Gradients::add(const Gradients& other) {
    if (other.grads.size() != grads.size()) throw std::invalid_argument("gradient sets differ in length");
    for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += other.grads[i];
}

namespace {

std::string hash_filtered(const ParamSet& params, const std::string& prefix) {
    std::vector<unsigned char> buf;
    for (const auto& p : params) {
        if (p.name.compare(0, prefix.size(), prefix) != 0) continue;
        buf.insert(buf.end(), p.name.begin(), p.name.end());
        const std::int64_t dims[2] = {p.value.rows(), p.value.cols()};
        const auto* d = reinterpret_cast<const unsigned char*>(dims);
        buf.insert(buf.end(), d, d + sizeof(dims));
        const auto* v = reinterpret_cast<const unsigned char*>(p.value.data());
        buf.insert(buf.end(), v, v + sizeof(double) * static_cast<std::size_t>(p.value.size()));
    }
    return sha256_hex(buf.data(), buf.size());
}

}  // namespace

std::string hash_params(const ParamSet& params) { return hash_filtered(params, ""); }

std::string hash_params(const ParamSet& params, const std::string& prefix) { return hash_filtered(params, prefix); }

void ema_update(ParamSet& teacher, const ParamSet& student, double alpha) {
    if (teacher.size() != student.size()) throw std::invalid_argument("ema_update: parameter count mismatch");
    for (std::size_t i = 0; i < teacher.size(); ++i) {
        auto& t = teacher[i].value;
        const auto& s = student[i].value;
        if (teacher[i].name != student[i].name || t.rows() != s.rows() || t.cols() != s.cols())
            throw std::invalid_argument("ema_update: shape mismatch on " + teacher[i].name);
        t = alpha * t + (1.0 - alpha) * s;
    }
}

AdamW::AdamW(const ParamSet& params, Options opts) : opts_(opts) {
    for (const auto& p : params) {
        m_.push_back(RowMatrix::Zero(p.value.rows(), p.value.cols()));
        v_.push_back(RowMatrix::Zero(p.value.rows(), p.value.cols()));
        t_.push_back(0);
    }
}

void AdamW::step(ParamSet& params, const Gradients& g, const std::vector<bool>& active) {
    if (params.size() != m_.size() || g.grads.size() != m_.size() || active.size() != m_.size())
        throw std::invalid_argument("AdamW::step: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!active[i]) continue;
        auto& p = params[i].value;
        const auto& grad = g.grads[i];
        const double lr = params[i].backbone ? opts_.lr * opts_.backbone_lr_multiplier : opts_.lr;
        ++t_[i];
        p *= (1.0 - lr * opts_.weight_decay);
        m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * grad;
        v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * grad.cwiseProduct(grad);
        const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_[i]));
        const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_[i]));
        p.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + opts_.eps);
    }
}

}  // namespace dgseg::nn
