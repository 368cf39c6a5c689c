#pragma once

// Hand-written forward/backward layers. Templated on the scalar so training
// runs in float and gradient checks run in double.
//
// Feature maps are stored channel-major: a C x (N*H*W) row-major matrix whose
// column index is (n * H + y) * W + x.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "unitconcepts/numerics.hpp"
#include "unitconcepts/rng.hpp"

namespace uc {

template <typename T>
struct FeatureMap {
    int n = 0, c = 0, h = 0, w = 0;
    MatrixT<T> data;  // c x (n*h*w)

    FeatureMap() = default;
    FeatureMap(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_), data(c_, static_cast<Eigen::Index>(n_) * h_ * w_) {}

    Eigen::Index plane() const noexcept { return static_cast<Eigen::Index>(h) * w; }
};

/// A trainable tensor and its gradient.
template <typename T>
struct Param {
    std::string name;
    MatrixT<T>* value;
    MatrixT<T>* grad;
};

/// 3x3 convolution, stride 2, padding 1, no bias (batch norm follows).
template <typename T>
class Conv2d {
public:
    static constexpr int kKernel = 3;
    static constexpr int kStride = 2;
    static constexpr int kPad = 1;

    Conv2d() = default;
    Conv2d(int in_channels, int out_channels, Rng& rng) : in_c_(in_channels), out_c_(out_channels) {
        const double std = std::sqrt(2.0 / (in_channels * kKernel * kKernel));  // He init
        weight_.resize(out_channels, in_channels * kKernel * kKernel);
        for (Eigen::Index i = 0; i < weight_.size(); ++i) weight_.data()[i] = static_cast<T>(std * normal(rng));
        grad_weight_ = MatrixT<T>::Zero(weight_.rows(), weight_.cols());
    }

    static int out_size(int in) noexcept { return (in + 2 * kPad - kKernel) / kStride + 1; }

    FeatureMap<T> forward(const FeatureMap<T>& x) {
        in_h_ = x.h;
        in_w_ = x.w;
        batch_ = x.n;
        im2col(x, cols_);
        FeatureMap<T> y(x.n, out_c_, out_size(x.h), out_size(x.w));
        y.data.noalias() = weight_ * cols_;
        return y;
    }

    /// Inference without caching anything for backward.
    FeatureMap<T> apply(const FeatureMap<T>& x) const {
        MatrixT<T> cols;
        im2col(x, cols);
        FeatureMap<T> y(x.n, out_c_, out_size(x.h), out_size(x.w));
        y.data.noalias() = weight_ * cols;
        return y;
    }

    /// Sets grad_weight; returns d(input) when need_input_grad.
    FeatureMap<T> backward(const FeatureMap<T>& dy, bool need_input_grad = true) {
        grad_weight_.noalias() = dy.data * cols_.transpose();
        FeatureMap<T> dx;
        if (need_input_grad) {
            MatrixT<T> dcols = weight_.transpose() * dy.data;
            dx = FeatureMap<T>(batch_, in_c_, in_h_, in_w_);
            dx.data.setZero();
            col2im(dcols, dx, dy.h, dy.w);
        }
        return dx;
    }

    void collect(const std::string& prefix, std::vector<Param<T>>& out) {
        out.push_back({prefix + ".weight", &weight_, &grad_weight_});
    }

    int in_channels() const noexcept { return in_c_; }
    int out_channels() const noexcept { return out_c_; }
    MatrixT<T>& weight() noexcept { return weight_; }
    const MatrixT<T>& grad_weight() const noexcept { return grad_weight_; }

private:
    void im2col(const FeatureMap<T>& x, MatrixT<T>& cols) const {
        const int ho = out_size(x.h), wo = out_size(x.w);
        cols.resize(static_cast<Eigen::Index>(x.c) * kKernel * kKernel, static_cast<Eigen::Index>(x.n) * ho * wo);
        for (int ci = 0; ci < x.c; ++ci) {
            const T* src_c = x.data.row(ci).data();
            for (int ky = 0; ky < kKernel; ++ky)
                for (int kx = 0; kx < kKernel; ++kx) {
                    T* dst = cols.row((ci * kKernel + ky) * kKernel + kx).data();
                    for (int n = 0; n < x.n; ++n)
                        for (int oy = 0; oy < ho; ++oy) {
                            const int iy = oy * kStride - kPad + ky;
                            if (iy < 0 || iy >= x.h) {
                                for (int ox = 0; ox < wo; ++ox) *dst++ = T(0);
                                continue;
                            }
                            const T* src = src_c + (static_cast<Eigen::Index>(n) * x.h + iy) * x.w;
                            for (int ox = 0; ox < wo; ++ox) {
                                const int ix = ox * kStride - kPad + kx;
                                *dst++ = (ix >= 0 && ix < x.w) ? src[ix] : T(0);
                            }
                        }
                }
        }
    }

    void col2im(const MatrixT<T>& dcols, FeatureMap<T>& dx, int ho, int wo) const {
        for (int ci = 0; ci < dx.c; ++ci) {
            T* dst_c = dx.data.row(ci).data();
            for (int ky = 0; ky < kKernel; ++ky)
                for (int kx = 0; kx < kKernel; ++kx) {
                    const T* src = dcols.row((ci * kKernel + ky) * kKernel + kx).data();
                    for (int n = 0; n < dx.n; ++n)
                        for (int oy = 0; oy < ho; ++oy) {
                            const int iy = oy * kStride - kPad + ky;
                            if (iy < 0 || iy >= dx.h) {
                                src += wo;
                                continue;
                            }
                            T* dst = dst_c + (static_cast<Eigen::Index>(n) * dx.h + iy) * dx.w;
                            for (int ox = 0; ox < wo; ++ox, ++src) {
                                const int ix = ox * kStride - kPad + kx;
                                if (ix >= 0 && ix < dx.w) dst[ix] += *src;
                            }
                        }
                }
        }
    }

    int in_c_ = 0, out_c_ = 0;
    int in_h_ = 0, in_w_ = 0, batch_ = 0;
    MatrixT<T> weight_, grad_weight_;
    MatrixT<T> cols_;
};

/// Per-channel batch normalization. Training uses batch statistics and
/// updates running statistics; evaluation uses the running statistics only.
template <typename T>
class BatchNorm {
public:
    static constexpr double kEps = 1e-5;
    static constexpr double kMomentum = 0.1;

    BatchNorm() = default;
    explicit BatchNorm(int channels)
        : gamma_(MatrixT<T>::Ones(channels, 1)),
          beta_(MatrixT<T>::Zero(channels, 1)),
          grad_gamma_(MatrixT<T>::Zero(channels, 1)),
          grad_beta_(MatrixT<T>::Zero(channels, 1)),
          running_mean_(MatrixT<T>::Zero(channels, 1)),
          running_var_(MatrixT<T>::Ones(channels, 1)) {}

    /// Evaluation-mode normalization with running statistics.
    FeatureMap<T> apply(const FeatureMap<T>& x) const {
        FeatureMap<T> y(x.n, x.c, x.h, x.w);
        for (int c = 0; c < x.c; ++c) {
            const T scale = gamma_(c) / std::sqrt(running_var_(c) + static_cast<T>(kEps));
            const T shift = beta_(c) - running_mean_(c) * scale;
            y.data.row(c) = (x.data.row(c).array() * scale + shift).matrix();
        }
        return y;
    }

    FeatureMap<T> forward(const FeatureMap<T>& x, bool training) {
        if (!training) return apply(x);
        FeatureMap<T> y(x.n, x.c, x.h, x.w);
        const auto m = x.data.cols();
        // While calibrating, running statistics are the plain average over calibration batches.
        const double momentum = calibration_batches_ >= 0 ? 1.0 / (calibration_batches_ + 1) : kMomentum;
        xhat_.resize(x.c, m);
        inv_std_.resize(x.c);
        for (int c = 0; c < x.c; ++c) {
            const auto row = x.data.row(c).array();
            const T mean = row.mean();
            const T var = (row - mean).square().mean();
            const T inv_std = T(1) / std::sqrt(var + static_cast<T>(kEps));
            inv_std_[c] = inv_std;
            xhat_.row(c) = ((row - mean) * inv_std).matrix();
            y.data.row(c) = (xhat_.row(c).array() * gamma_(c) + beta_(c)).matrix();
            const T unbiased = m > 1 ? var * static_cast<T>(m) / static_cast<T>(m - 1) : var;
            running_mean_(c) = static_cast<T>(1 - momentum) * running_mean_(c) + static_cast<T>(momentum) * mean;
            running_var_(c) = static_cast<T>(1 - momentum) * running_var_(c) + static_cast<T>(momentum) * unbiased;
        }
        if (calibration_batches_ >= 0) ++calibration_batches_;
        return y;
    }

    FeatureMap<T> backward(const FeatureMap<T>& dy) {
        FeatureMap<T> dx(dy.n, dy.c, dy.h, dy.w);
        const auto m = static_cast<T>(dy.data.cols());
        for (int c = 0; c < dy.c; ++c) {
            const auto g = dy.data.row(c).array();
            const auto xh = xhat_.row(c).array();
            const T dbeta = g.sum();
            const T dgamma = (g * xh).sum();
            grad_beta_(c) = dbeta;
            grad_gamma_(c) = dgamma;
            dx.data.row(c) = ((gamma_(c) * inv_std_[c] / m) * (m * g - dbeta - xh * dgamma)).matrix();
        }
        return dx;
    }

    void collect(const std::string& prefix, std::vector<Param<T>>& out) {
        out.push_back({prefix + ".gamma", &gamma_, &grad_gamma_});
        out.push_back({prefix + ".beta", &beta_, &grad_beta_});
    }

    /// Training-mode forward passes between these calls replace the running
    /// statistics by their average over the passes.
    void begin_calibration() noexcept { calibration_batches_ = 0; }
    void end_calibration() noexcept { calibration_batches_ = -1; }

    /// Non-trainable state, for serialization.
    std::vector<std::pair<std::string, MatrixT<T>*>> buffers(const std::string& prefix) {
        return {{prefix + ".running_mean", &running_mean_}, {prefix + ".running_var", &running_var_}};
    }

    MatrixT<T>& gamma() noexcept { return gamma_; }
    MatrixT<T>& beta() noexcept { return beta_; }
    const MatrixT<T>& running_mean() const noexcept { return running_mean_; }
    const MatrixT<T>& running_var() const noexcept { return running_var_; }

private:
    MatrixT<T> gamma_, beta_, grad_gamma_, grad_beta_, running_mean_, running_var_;
    MatrixT<T> xhat_;
    std::vector<T> inv_std_;
    int calibration_batches_ = -1;
};

template <typename T>
class Relu {
public:
    template <typename M>
    M forward(const M& x) {
        mask_ = (x.array() > T(0)).template cast<T>().matrix();
        return M(x.cwiseMax(T(0)));
    }
    FeatureMap<T> forward(const FeatureMap<T>& x) {
        FeatureMap<T> y = x;
        y.data = forward(x.data);
        return y;
    }

    MatrixT<T> backward(const MatrixT<T>& dy) const { return dy.cwiseProduct(mask_); }
    FeatureMap<T> backward(const FeatureMap<T>& dy) const {
        FeatureMap<T> dx = dy;
        dx.data = backward(dy.data);
        return dx;
    }

private:
    MatrixT<T> mask_;
};

/// Fully connected layer on row-per-sample input: Y = X W^T + b.
template <typename T>
class Dense {
public:
    Dense() = default;
    Dense(int in, int out, Rng& rng)
        : weight_(out, in), bias_(MatrixT<T>::Zero(1, out)), grad_weight_(MatrixT<T>::Zero(out, in)),
          grad_bias_(MatrixT<T>::Zero(1, out)) {
        const double std = std::sqrt(2.0 / in);
        for (Eigen::Index i = 0; i < weight_.size(); ++i) weight_.data()[i] = static_cast<T>(std * normal(rng));
    }

    MatrixT<T> forward(const MatrixT<T>& x) {
        input_ = x;
        MatrixT<T> y = x * weight_.transpose();
        y.rowwise() += bias_.row(0);
        return y;
    }

    MatrixT<T> apply(const MatrixT<T>& x) const {
        MatrixT<T> y = x * weight_.transpose();
        y.rowwise() += bias_.row(0);
        return y;
    }

    MatrixT<T> backward(const MatrixT<T>& dy, bool need_input_grad = true) {
        grad_weight_.noalias() = dy.transpose() * input_;
        grad_bias_ = dy.colwise().sum();
        if (!need_input_grad) return {};
        return dy * weight_;
    }

    void collect(const std::string& prefix, std::vector<Param<T>>& out) {
        out.push_back({prefix + ".weight", &weight_, &grad_weight_});
        out.push_back({prefix + ".bias", &bias_, &grad_bias_});
    }

    MatrixT<T>& weight() noexcept { return weight_; }
    MatrixT<T>& bias() noexcept { return bias_; }
    const MatrixT<T>& grad_weight() const noexcept { return grad_weight_; }
    const MatrixT<T>& grad_bias() const noexcept { return grad_bias_; }

private:
    MatrixT<T> weight_, bias_, grad_weight_, grad_bias_;
    MatrixT<T> input_;
};

/// Row-per-sample flattening in (channel, y, x) order.
template <typename T>
MatrixT<T> flatten(const FeatureMap<T>& x) {
    const auto plane = x.plane();
    MatrixT<T> out(x.n, static_cast<Eigen::Index>(x.c) * plane);
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c)
            out.row(n).segment(c * plane, plane) = x.data.row(c).segment(n * plane, plane);
    return out;
}

template <typename T>
FeatureMap<T> unflatten(const MatrixT<T>& flat, int c, int h, int w) {
    FeatureMap<T> out(static_cast<int>(flat.rows()), c, h, w);
    const auto plane = out.plane();
    for (int n = 0; n < out.n; ++n)
        for (int ch = 0; ch < c; ++ch)
            out.data.row(ch).segment(n * plane, plane) = flat.row(n).segment(ch * plane, plane);
    return out;
}

/// Per-sample mean over channels, flattened: n x (h*w).
template <typename T>
MatrixT<T> channel_mean(const FeatureMap<T>& x) {
    const auto plane = x.plane();
    MatrixT<T> out = MatrixT<T>::Zero(x.n, plane);
    for (int c = 0; c < x.c; ++c)
        for (int n = 0; n < x.n; ++n) out.row(n) += x.data.row(c).segment(n * plane, plane);
    out /= static_cast<T>(x.c);
    return out;
}

/// Mean softmax cross-entropy. Fills dlogits with d(loss)/d(logits).
template <typename T>
double softmax_cross_entropy(const MatrixT<T>& logits, const std::vector<int>& labels, MatrixT<T>* dlogits) {
    const auto n = logits.rows();
    double loss = 0.0;
    if (dlogits) dlogits->resize(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto row = logits.row(i);
        const T mx = row.maxCoeff();
        const auto e = (row.array() - mx).exp();
        const T sum = e.sum();
        const int y = labels[static_cast<std::size_t>(i)];
        loss += -(static_cast<double>(row(y) - mx) - std::log(static_cast<double>(sum)));
        if (dlogits) {
            dlogits->row(i) = (e / sum).matrix();
            (*dlogits)(i, y) -= T(1);
        }
    }
    if (dlogits) *dlogits /= static_cast<T>(n);
    return loss / static_cast<double>(n);
}

} // namespace uc
