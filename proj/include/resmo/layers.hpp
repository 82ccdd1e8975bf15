#pragma once

// Forward math for every layer kind in the network. All spatial ops take
// HxWxC (rank 3) or NxHxWxC (rank 4) tensors, channels last. Dot products
// accumulate in double and are rounded to Scalar once per output element.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "resmo/errors.hpp"
#include "resmo/random.hpp"
#include "resmo/tensor.hpp"

namespace resmo {

template <typename Scalar>
struct ConvParams
{
    BasicTensor<Scalar> kernel; // (k, k, c_in, c_out)
    BasicTensor<Scalar> bias;   // (c_out)
    int stride = 1;
    int padding = 0;
};

template <typename Scalar>
struct DepthwiseParams
{
    BasicTensor<Scalar> kernel; // (k, k, c)
    BasicTensor<Scalar> bias;   // (c)
    int stride = 1;
    int padding = 0;
};

template <typename Scalar>
struct BatchNormParams
{
    BasicTensor<Scalar> gamma, beta, running_mean, running_var; // each (c)
    double epsilon = 1e-5;
    double momentum = 0.99;

    static BatchNormParams identity(Index channels)
    {
        BatchNormParams p;
        p.gamma = BasicTensor<Scalar>({channels}, Scalar(1));
        p.beta = BasicTensor<Scalar>({channels});
        p.running_mean = BasicTensor<Scalar>({channels});
        p.running_var = BasicTensor<Scalar>({channels}, Scalar(1));
        return p;
    }
};

template <typename Scalar>
struct DenseParams
{
    BasicTensor<Scalar> weight; // (n_in, n_out)
    BasicTensor<Scalar> bias;   // (n_out)
};

enum class PoolKind { Avg, Max };
enum class Activation { None, Relu };
enum class BnMode { Train, Infer };

/// Batch statistics kept by a training-mode batchnorm for its backward pass.
template <typename Scalar>
struct BatchNormCache
{
    BasicTensor<Scalar> normalized;  // x_hat, same shape as the input
    std::vector<double> inv_std;     // per channel
    bool valid() const { return !normalized.empty(); }
};

/// NHWC geometry of a rank-3 or rank-4 tensor (rank 3 reads as N = 1).
struct Nhwc
{
    Index n, h, w, c;
    bool batched;

    template <typename Scalar>
    static Nhwc of(const BasicTensor<Scalar>& t, const char* op)
    {
        if (t.rank() == 4)
            return {t.dim(0), t.dim(1), t.dim(2), t.dim(3), true};
        if (t.rank() == 3)
            return {1, t.dim(0), t.dim(1), t.dim(2), false};
        throw DimensionError(std::string(op) + ": expected HxWxC or NxHxWxC input, got " +
                             t.shape().str());
    }

    Shape shape() const { return batched ? Shape{n, h, w, c} : Shape{h, w, c}; }
    Shape with(Index oh, Index ow, Index oc) const
    {
        return batched ? Shape{n, oh, ow, oc} : Shape{oh, ow, oc};
    }
};

namespace detail {

inline Index window_out(const char* op, const char* axis, Index in, int k, int stride, int pad)
{
    if (stride < 1)
        throw ConfigError(std::string(op) + ": stride must be >= 1");
    if (pad < 0)
        throw ConfigError(std::string(op) + ": padding must be >= 0");
    if (in + 2 * pad < k)
        throw DimensionError(std::string(op) + ": " + axis + " axis " + std::to_string(in) +
                             " + 2*" + std::to_string(pad) + " padding is smaller than window " +
                             std::to_string(k));
    return (in + 2 * pad - k) / stride + 1;
}

template <typename Scalar>
void expect_vector(const char* op, const char* what, const BasicTensor<Scalar>& t, Index n)
{
    if (t.rank() != 1 || t.dim(0) != n)
        throw DimensionError(std::string(op) + ": " + what + " must have shape (" +
                             std::to_string(n) + "), got " + t.shape().str());
}

} // namespace detail

/// Output spatial size of a k x k window with the given stride and padding.
inline Index conv_out_size(Index in, int k, int stride, int pad)
{
    return detail::window_out("conv", "spatial", in, k, stride, pad);
}

template <typename Scalar>
BasicTensor<Scalar> conv2d(const BasicTensor<Scalar>& input, const ConvParams<Scalar>& p)
{
    const auto g = Nhwc::of(input, "conv2d");
    const auto& K = p.kernel;
    if (K.rank() != 4 || K.dim(0) != K.dim(1))
        throw DimensionError("conv2d: kernel must be (k, k, c_in, c_out), got " + K.shape().str());
    const int k = static_cast<int>(K.dim(0));
    const Index cin = K.dim(2), cout = K.dim(3);
    if (g.c != cin)
        throw DimensionError("conv2d: channel axis of input is " + std::to_string(g.c) +
                             " but kernel expects " + std::to_string(cin));
    detail::expect_vector("conv2d", "bias", p.bias, cout);
    const Index oh = detail::window_out("conv2d", "height", g.h, k, p.stride, p.padding);
    const Index ow = detail::window_out("conv2d", "width", g.w, k, p.stride, p.padding);

    BasicTensor<Scalar> out(g.with(oh, ow, cout));
    std::vector<double> acc(static_cast<std::size_t>(cout));
    const Scalar* x = input.data();
    const Scalar* w = K.data();
    Scalar* y = out.data();
    for (Index n = 0; n < g.n; ++n)
        for (Index oy = 0; oy < oh; ++oy)
            for (Index ox = 0; ox < ow; ++ox) {
                for (Index co = 0; co < cout; ++co)
                    acc[static_cast<std::size_t>(co)] = static_cast<double>(p.bias[co]);
                for (int ky = 0; ky < k; ++ky) {
                    const Index iy = oy * p.stride - p.padding + ky;
                    if (iy < 0 || iy >= g.h)
                        continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const Index ix = ox * p.stride - p.padding + kx;
                        if (ix < 0 || ix >= g.w)
                            continue;
                        const Scalar* xp = x + ((n * g.h + iy) * g.w + ix) * cin;
                        const Scalar* wp = w + ((ky * k + kx) * cin) * cout;
                        for (Index ci = 0; ci < cin; ++ci) {
                            const double xv = static_cast<double>(xp[ci]);
                            const Scalar* wr = wp + ci * cout;
                            for (Index co = 0; co < cout; ++co)
                                acc[static_cast<std::size_t>(co)] += xv * static_cast<double>(wr[co]);
                        }
                    }
                }
                Scalar* yp = y + ((n * oh + oy) * ow + ox) * cout;
                for (Index co = 0; co < cout; ++co)
                    yp[co] = static_cast<Scalar>(acc[static_cast<std::size_t>(co)]);
            }
    return out;
}

template <typename Scalar>
BasicTensor<Scalar> depthwise_conv2d(const BasicTensor<Scalar>& input, const DepthwiseParams<Scalar>& p)
{
    const auto g = Nhwc::of(input, "depthwise_conv2d");
    const auto& K = p.kernel;
    if (K.rank() != 3 || K.dim(0) != K.dim(1))
        throw DimensionError("depthwise_conv2d: kernel must be (k, k, c), got " + K.shape().str());
    const int k = static_cast<int>(K.dim(0));
    if (K.dim(2) != g.c)
        throw DimensionError("depthwise_conv2d: channel axis of input is " + std::to_string(g.c) +
                             " but kernel has " + std::to_string(K.dim(2)));
    detail::expect_vector("depthwise_conv2d", "bias", p.bias, g.c);
    const Index oh = detail::window_out("depthwise_conv2d", "height", g.h, k, p.stride, p.padding);
    const Index ow = detail::window_out("depthwise_conv2d", "width", g.w, k, p.stride, p.padding);

    BasicTensor<Scalar> out(g.with(oh, ow, g.c));
    std::vector<double> acc(static_cast<std::size_t>(g.c));
    for (Index n = 0; n < g.n; ++n)
        for (Index oy = 0; oy < oh; ++oy)
            for (Index ox = 0; ox < ow; ++ox) {
                for (Index c = 0; c < g.c; ++c)
                    acc[static_cast<std::size_t>(c)] = static_cast<double>(p.bias[c]);
                for (int ky = 0; ky < k; ++ky) {
                    const Index iy = oy * p.stride - p.padding + ky;
                    if (iy < 0 || iy >= g.h)
                        continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const Index ix = ox * p.stride - p.padding + kx;
                        if (ix < 0 || ix >= g.w)
                            continue;
                        const Scalar* xp = input.data() + ((n * g.h + iy) * g.w + ix) * g.c;
                        const Scalar* wp = K.data() + (ky * k + kx) * g.c;
                        for (Index c = 0; c < g.c; ++c)
                            acc[static_cast<std::size_t>(c)] +=
                                static_cast<double>(xp[c]) * static_cast<double>(wp[c]);
                    }
                }
                Scalar* yp = out.data() + ((n * oh + oy) * ow + ox) * g.c;
                for (Index c = 0; c < g.c; ++c)
                    yp[c] = static_cast<Scalar>(acc[static_cast<std::size_t>(c)]);
            }
    return out;
}

/// 1x1 convolution; identical arithmetic to conv2d with k = 1.
template <typename Scalar>
BasicTensor<Scalar> pointwise_conv2d(const BasicTensor<Scalar>& input, const ConvParams<Scalar>& p)
{
    if (p.kernel.rank() != 4 || p.kernel.dim(0) != 1 || p.kernel.dim(1) != 1)
        throw DimensionError("pointwise_conv2d: kernel must be (1, 1, c_in, c_out), got " +
                             p.kernel.shape().str());
    return conv2d(input, p);
}

namespace detail {

template <typename Scalar>
Index check_bn(const BasicTensor<Scalar>& input, const BatchNormParams<Scalar>& p)
{
    if (!(p.epsilon > 0.0))
        throw ConfigError("batchnorm: epsilon must be positive, got " + std::to_string(p.epsilon));
    if (!(p.momentum > 0.0 && p.momentum < 1.0))
        throw ConfigError("batchnorm: momentum must be in (0, 1)");
    if (input.rank() < 1)
        throw DimensionError("batchnorm: empty input");
    const Index c = input.dim(input.rank() - 1);
    expect_vector("batchnorm", "gamma", p.gamma, c);
    expect_vector("batchnorm", "beta", p.beta, c);
    expect_vector("batchnorm", "running_mean", p.running_mean, c);
    expect_vector("batchnorm", "running_var", p.running_var, c);
    return c;
}

} // namespace detail

/// Inference-mode normalization with the running statistics.
template <typename Scalar>
BasicTensor<Scalar> batchnorm_infer(const BasicTensor<Scalar>& input, const BatchNormParams<Scalar>& p)
{
    const Index c = detail::check_bn(input, p);
    std::vector<double> scale(static_cast<std::size_t>(c)), shift(static_cast<std::size_t>(c));
    for (Index j = 0; j < c; ++j) {
        const double s = static_cast<double>(p.gamma[j]) /
                         std::sqrt(static_cast<double>(p.running_var[j]) + p.epsilon);
        scale[static_cast<std::size_t>(j)] = s;
        shift[static_cast<std::size_t>(j)] =
            static_cast<double>(p.beta[j]) - s * static_cast<double>(p.running_mean[j]);
    }
    BasicTensor<Scalar> out(input.shape());
    const Index rows = input.size() / c;
    for (Index r = 0; r < rows; ++r)
        for (Index j = 0; j < c; ++j) {
            const Index i = r * c + j;
            out[i] = static_cast<Scalar>(scale[static_cast<std::size_t>(j)] * static_cast<double>(input[i]) +
                                         shift[static_cast<std::size_t>(j)]);
        }
    return out;
}

/// Training-mode normalization with batch statistics over every axis but the
/// last. Updates the running statistics by exponential moving average and
/// fills `cache` for the backward pass. Variance is the biased estimate.
template <typename Scalar>
BasicTensor<Scalar> batchnorm_train(const BasicTensor<Scalar>& input, BatchNormParams<Scalar>& p,
                                    BatchNormCache<Scalar>& cache)
{
    const Index c = detail::check_bn(input, p);
    const Index rows = input.size() / c;
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::Map<const Mat> x(input.data(), rows, c);
    const Eigen::ArrayXXd xd = x.template cast<double>().array();
    const Eigen::RowVectorXd mean = xd.colwise().mean().matrix();
    const Eigen::ArrayXXd centered = xd.rowwise() - mean.array();
    const Eigen::RowVectorXd var = (centered.square().colwise().sum() / static_cast<double>(rows)).matrix();
    const Eigen::RowVectorXd inv_std = (var.array() + p.epsilon).rsqrt().matrix();

    const Eigen::ArrayXXd xhat = centered.rowwise() * inv_std.array();
    Eigen::RowVectorXd gamma(c), beta(c);
    for (Index j = 0; j < c; ++j) {
        gamma[j] = static_cast<double>(p.gamma[j]);
        beta[j] = static_cast<double>(p.beta[j]);
    }
    const Eigen::ArrayXXd y = (xhat.rowwise() * gamma.array()).rowwise() + beta.array();

    BasicTensor<Scalar> out(input.shape());
    Eigen::Map<Mat>(out.data(), rows, c) = y.matrix().template cast<Scalar>();

    cache.normalized = BasicTensor<Scalar>(input.shape());
    Eigen::Map<Mat>(cache.normalized.data(), rows, c) = xhat.matrix().template cast<Scalar>();
    cache.inv_std.assign(inv_std.data(), inv_std.data() + c);

    for (Index j = 0; j < c; ++j) {
        p.running_mean[j] = static_cast<Scalar>(p.momentum * static_cast<double>(p.running_mean[j]) +
                                                (1.0 - p.momentum) * mean[j]);
        p.running_var[j] = static_cast<Scalar>(p.momentum * static_cast<double>(p.running_var[j]) +
                                               (1.0 - p.momentum) * var[j]);
    }
    return out;
}

template <typename Scalar>
BasicTensor<Scalar> batchnorm(const BasicTensor<Scalar>& input, BatchNormParams<Scalar>& p, BnMode mode)
{
    if (mode == BnMode::Infer)
        return batchnorm_infer(input, p);
    BatchNormCache<Scalar> cache;
    return batchnorm_train(input, p, cache);
}

/// Average or max pooling over a window x window region per channel.
/// Average divides by the full window area (padded zeros count); max ignores
/// padded positions.
template <typename Scalar>
BasicTensor<Scalar> pool(const BasicTensor<Scalar>& input, PoolKind kind, int window, int stride,
                         int padding = 0)
{
    const auto g = Nhwc::of(input, "pool");
    if (window < 1)
        throw ConfigError("pool: window must be >= 1");
    if (padding >= window)
        throw ConfigError("pool: padding must be smaller than the window");
    const Index oh = detail::window_out("pool", "height", g.h, window, stride, padding);
    const Index ow = detail::window_out("pool", "width", g.w, window, stride, padding);
    BasicTensor<Scalar> out(g.with(oh, ow, g.c));
    const double area = static_cast<double>(window) * window;
    for (Index n = 0; n < g.n; ++n)
        for (Index oy = 0; oy < oh; ++oy)
            for (Index ox = 0; ox < ow; ++ox)
                for (Index c = 0; c < g.c; ++c) {
                    double acc = kind == PoolKind::Avg ? 0.0 : -std::numeric_limits<double>::infinity();
                    for (int ky = 0; ky < window; ++ky) {
                        const Index iy = oy * stride - padding + ky;
                        if (iy < 0 || iy >= g.h)
                            continue;
                        for (int kx = 0; kx < window; ++kx) {
                            const Index ix = ox * stride - padding + kx;
                            if (ix < 0 || ix >= g.w)
                                continue;
                            const double v = static_cast<double>(input[((n * g.h + iy) * g.w + ix) * g.c + c]);
                            if (kind == PoolKind::Avg)
                                acc += v;
                            else if (v > acc)
                                acc = v;
                        }
                    }
                    out[((n * oh + oy) * ow + ox) * g.c + c] =
                        static_cast<Scalar>(kind == PoolKind::Avg ? acc / area : acc);
                }
    return out;
}

/// y = W^T x + b with optional ReLU. Input is (n_in) or (N, n_in).
template <typename Scalar>
BasicTensor<Scalar> dense(const BasicTensor<Scalar>& input, const DenseParams<Scalar>& p,
                          Activation act = Activation::None)
{
    if (p.weight.rank() != 2)
        throw DimensionError("dense: weight must be (n_in, n_out), got " + p.weight.shape().str());
    const Index nin = p.weight.dim(0), nout = p.weight.dim(1);
    detail::expect_vector("dense", "bias", p.bias, nout);
    Index rows;
    if (input.rank() == 1)
        rows = 1;
    else if (input.rank() == 2)
        rows = input.dim(0);
    else
        throw DimensionError("dense: expected (n_in) or (N, n_in) input, got " + input.shape().str());
    if (input.dim(input.rank() - 1) != nin)
        throw DimensionError("dense: feature axis of input is " + std::to_string(input.dim(input.rank() - 1)) +
                             " but weight expects " + std::to_string(nin));

    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::Map<const Mat> x(input.data(), rows, nin);
    const Eigen::Map<const Mat> w(p.weight.data(), nin, nout);
    const Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> b(p.bias.data(), nout);
    Eigen::MatrixXd z = x.template cast<double>() * w.template cast<double>();
    z.rowwise() += b.template cast<double>();
    if (act == Activation::Relu)
        z = z.cwiseMax(0.0);

    BasicTensor<Scalar> out(input.rank() == 1 ? Shape{nout} : Shape{rows, nout});
    Eigen::Map<Mat>(out.data(), rows, nout) = z.template cast<Scalar>();
    return out;
}

template <typename Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& input)
{
    BasicTensor<Scalar> out(input.shape());
    out.storage() = input.storage().cwiseMax(Scalar(0));
    return out;
}

/// Softmax over the last axis of a (n) or (N, n) tensor.
template <typename Scalar>
BasicTensor<Scalar> softmax(const BasicTensor<Scalar>& logits)
{
    if (logits.rank() != 1 && logits.rank() != 2)
        throw DimensionError("softmax: expected (n) or (N, n) logits, got " + logits.shape().str());
    const Index n = logits.dim(logits.rank() - 1);
    const Index rows = logits.size() / n;
    BasicTensor<Scalar> out(logits.shape());
    for (Index r = 0; r < rows; ++r) {
        const Scalar* z = logits.data() + r * n;
        double m = -std::numeric_limits<double>::infinity();
        for (Index i = 0; i < n; ++i)
            m = std::max(m, static_cast<double>(z[i]));
        double sum = 0.0;
        for (Index i = 0; i < n; ++i)
            sum += std::exp(static_cast<double>(z[i]) - m);
        for (Index i = 0; i < n; ++i)
            out[r * n + i] = static_cast<Scalar>(std::exp(static_cast<double>(z[i]) - m) / sum);
    }
    return out;
}

template <typename Scalar>
struct SoftmaxXent
{
    BasicTensor<Scalar> probs;
    double loss;
};

template <typename Scalar>
SoftmaxXent<Scalar> softmax_xent(const BasicTensor<Scalar>& logits, Index label)
{
    if (logits.rank() != 1)
        throw DimensionError("softmax_xent: expected (n) logits, got " + logits.shape().str());
    const Index n = logits.dim(0);
    if (label < 0 || label >= n)
        throw IndexError("softmax_xent: label " + std::to_string(label) + " out of range [0, " +
                         std::to_string(n) + ")");
    double m = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < n; ++i)
        m = std::max(m, static_cast<double>(logits[i]));
    double sum = 0.0;
    for (Index i = 0; i < n; ++i)
        sum += std::exp(static_cast<double>(logits[i]) - m);
    SoftmaxXent<Scalar> r{softmax(logits), 0.0};
    r.loss = -(static_cast<double>(logits[label]) - m - std::log(sum));
    return r;
}

/// Inverted dropout. Writes the scaled keep mask (0 or 1/(1-rate)) to `mask`.
template <typename Scalar>
BasicTensor<Scalar> dropout(const BasicTensor<Scalar>& input, double rate, Rng& rng, BasicTensor<Scalar>& mask)
{
    if (!(rate >= 0.0 && rate < 1.0))
        throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
    mask = BasicTensor<Scalar>(input.shape());
    const Scalar keep = static_cast<Scalar>(1.0 / (1.0 - rate));
    for (Index i = 0; i < input.size(); ++i)
        mask[i] = rng.uniform() >= rate ? keep : Scalar(0);
    BasicTensor<Scalar> out(input.shape());
    out.storage() = input.storage().cwiseProduct(mask.storage());
    return out;
}

template <typename Scalar>
BasicTensor<Scalar> add(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b)
{
    if (!(a.shape() == b.shape()))
        throw DimensionError("add: shapes " + a.shape().str() + " and " + b.shape().str() + " differ");
    BasicTensor<Scalar> out(a.shape());
    out.storage() = a.storage() + b.storage();
    return out;
}

/// Concatenation along the last (channel) axis.
template <typename Scalar>
BasicTensor<Scalar> concat_channels(const std::vector<const BasicTensor<Scalar>*>& parts)
{
    if (parts.empty())
        throw DimensionError("concat: no inputs");
    const int rank = parts.front()->rank();
    Index total_c = 0;
    for (const auto* t : parts) {
        if (t->rank() != rank)
            throw DimensionError("concat: rank mismatch " + parts.front()->shape().str() + " vs " +
                                 t->shape().str());
        for (int a = 0; a + 1 < rank; ++a)
            if (t->dim(a) != parts.front()->dim(a))
                throw DimensionError("concat: shapes " + parts.front()->shape().str() + " and " +
                                     t->shape().str() + " disagree on axis " + std::to_string(a));
        total_c += t->dim(rank - 1);
    }
    std::vector<Index> dims(parts.front()->shape().dims().begin(), parts.front()->shape().dims().end());
    dims.back() = total_c;
    BasicTensor<Scalar> out{Shape(std::span<const Index>(dims))};
    const Index rows = out.size() / total_c;
    Index off = 0;
    for (const auto* t : parts) {
        const Index c = t->dim(rank - 1);
        for (Index r = 0; r < rows; ++r)
            std::copy_n(t->data() + r * c, c, out.data() + r * total_c + off);
        off += c;
    }
    return out;
}

} // namespace resmo
