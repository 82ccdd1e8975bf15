#pragma once

// Gradients of a scalar loss through each layer kind, given the values the
// forward pass consumed (inputs, parameters, or a batchnorm/dropout cache)
// and the upstream gradient with the shape of the layer's output.

#include <vector>

#include "resmo/layers.hpp"

namespace resmo {

template <typename Scalar>
struct ConvGrads
{
    BasicTensor<Scalar> input, kernel, bias;
};

template <typename Scalar>
struct DenseGrads
{
    BasicTensor<Scalar> input, weight, bias;
};

template <typename Scalar>
struct BatchNormGrads
{
    BasicTensor<Scalar> input, gamma, beta;
};

namespace detail {

template <typename Scalar>
void expect_grad_shape(const char* op, const BasicTensor<Scalar>& grad, const Shape& expected)
{
    if (!(grad.shape() == expected))
        throw DimensionError(std::string(op) + " backward: upstream gradient " + grad.shape().str() +
                             " does not match output " + expected.str());
}

template <typename Scalar>
BasicTensor<Scalar> to_tensor(const Shape& shape, const std::vector<double>& v)
{
    BasicTensor<Scalar> t(shape);
    for (Index i = 0; i < t.size(); ++i)
        t[i] = static_cast<Scalar>(v[static_cast<std::size_t>(i)]);
    return t;
}

} // namespace detail

template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const BasicTensor<Scalar>& input, const ConvParams<Scalar>& p,
                                  const BasicTensor<Scalar>& grad_out)
{
    const auto g = Nhwc::of(input, "conv2d");
    const int k = static_cast<int>(p.kernel.dim(0));
    const Index cin = p.kernel.dim(2), cout = p.kernel.dim(3);
    const Index oh = detail::window_out("conv2d", "height", g.h, k, p.stride, p.padding);
    const Index ow = detail::window_out("conv2d", "width", g.w, k, p.stride, p.padding);
    detail::expect_grad_shape("conv2d", grad_out, g.with(oh, ow, cout));

    std::vector<double> gi(static_cast<std::size_t>(input.size()), 0.0);
    std::vector<double> gk(static_cast<std::size_t>(p.kernel.size()), 0.0);
    std::vector<double> gb(static_cast<std::size_t>(cout), 0.0);
    std::vector<double> go(static_cast<std::size_t>(cout));
    for (Index n = 0; n < g.n; ++n)
        for (Index oy = 0; oy < oh; ++oy)
            for (Index ox = 0; ox < ow; ++ox) {
                const Scalar* gp = grad_out.data() + ((n * oh + oy) * ow + ox) * cout;
                for (Index co = 0; co < cout; ++co) {
                    go[static_cast<std::size_t>(co)] = static_cast<double>(gp[co]);
                    gb[static_cast<std::size_t>(co)] += go[static_cast<std::size_t>(co)];
                }
                for (int ky = 0; ky < k; ++ky) {
                    const Index iy = oy * p.stride - p.padding + ky;
                    if (iy < 0 || iy >= g.h)
                        continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const Index ix = ox * p.stride - p.padding + kx;
                        if (ix < 0 || ix >= g.w)
                            continue;
                        const Index xoff = ((n * g.h + iy) * g.w + ix) * cin;
                        const Index woff = ((ky * k + kx) * cin) * cout;
                        for (Index ci = 0; ci < cin; ++ci) {
                            const double xv = static_cast<double>(input[xoff + ci]);
                            const Scalar* wr = p.kernel.data() + woff + ci * cout;
                            double* gkr = gk.data() + woff + ci * cout;
                            double s = 0.0;
                            for (Index co = 0; co < cout; ++co) {
                                const double gv = go[static_cast<std::size_t>(co)];
                                gkr[co] += xv * gv;
                                s += static_cast<double>(wr[co]) * gv;
                            }
                            gi[static_cast<std::size_t>(xoff + ci)] += s;
                        }
                    }
                }
            }
    return {detail::to_tensor<Scalar>(input.shape(), gi), detail::to_tensor<Scalar>(p.kernel.shape(), gk),
            detail::to_tensor<Scalar>(p.bias.shape(), gb)};
}

template <typename Scalar>
ConvGrads<Scalar> pointwise_conv2d_backward(const BasicTensor<Scalar>& input, const ConvParams<Scalar>& p,
                                            const BasicTensor<Scalar>& grad_out)
{
    if (p.kernel.rank() != 4 || p.kernel.dim(0) != 1)
        throw DimensionError("pointwise_conv2d backward: kernel must be 1x1");
    return conv2d_backward(input, p, grad_out);
}

template <typename Scalar>
ConvGrads<Scalar> depthwise_conv2d_backward(const BasicTensor<Scalar>& input, const DepthwiseParams<Scalar>& p,
                                            const BasicTensor<Scalar>& grad_out)
{
    const auto g = Nhwc::of(input, "depthwise_conv2d");
    const int k = static_cast<int>(p.kernel.dim(0));
    const Index oh = detail::window_out("depthwise_conv2d", "height", g.h, k, p.stride, p.padding);
    const Index ow = detail::window_out("depthwise_conv2d", "width", g.w, k, p.stride, p.padding);
    detail::expect_grad_shape("depthwise_conv2d", grad_out, g.with(oh, ow, g.c));

    std::vector<double> gi(static_cast<std::size_t>(input.size()), 0.0);
    std::vector<double> gk(static_cast<std::size_t>(p.kernel.size()), 0.0);
    std::vector<double> gb(static_cast<std::size_t>(g.c), 0.0);
    for (Index n = 0; n < g.n; ++n)
        for (Index oy = 0; oy < oh; ++oy)
            for (Index ox = 0; ox < ow; ++ox) {
                const Index goff = ((n * oh + oy) * ow + ox) * g.c;
                for (Index c = 0; c < g.c; ++c)
                    gb[static_cast<std::size_t>(c)] += static_cast<double>(grad_out[goff + c]);
                for (int ky = 0; ky < k; ++ky) {
                    const Index iy = oy * p.stride - p.padding + ky;
                    if (iy < 0 || iy >= g.h)
                        continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const Index ix = ox * p.stride - p.padding + kx;
                        if (ix < 0 || ix >= g.w)
                            continue;
                        const Index xoff = ((n * g.h + iy) * g.w + ix) * g.c;
                        const Index woff = (ky * k + kx) * g.c;
                        for (Index c = 0; c < g.c; ++c) {
                            const double gv = static_cast<double>(grad_out[goff + c]);
                            gk[static_cast<std::size_t>(woff + c)] += static_cast<double>(input[xoff + c]) * gv;
                            gi[static_cast<std::size_t>(xoff + c)] += static_cast<double>(p.kernel[woff + c]) * gv;
                        }
                    }
                }
            }
    return {detail::to_tensor<Scalar>(input.shape(), gi), detail::to_tensor<Scalar>(p.kernel.shape(), gk),
            detail::to_tensor<Scalar>(p.bias.shape(), gb)};
}

/// Backward of a training-mode batchnorm; needs the cache of that forward.
template <typename Scalar>
BatchNormGrads<Scalar> batchnorm_backward(const BasicTensor<Scalar>& grad_out, const BatchNormParams<Scalar>& p,
                                          const BatchNormCache<Scalar>& cache)
{
    if (!cache.valid())
        throw StateError("batchnorm backward: no cached forward pass");
    detail::expect_grad_shape("batchnorm", grad_out, cache.normalized.shape());
    const Index c = static_cast<Index>(cache.inv_std.size());
    const Index rows = grad_out.size() / c;
    const double m = static_cast<double>(rows);

    std::vector<double> sum_g(static_cast<std::size_t>(c), 0.0), sum_gx(static_cast<std::size_t>(c), 0.0);
    for (Index r = 0; r < rows; ++r)
        for (Index j = 0; j < c; ++j) {
            const double gv = static_cast<double>(grad_out[r * c + j]);
            sum_g[static_cast<std::size_t>(j)] += gv;
            sum_gx[static_cast<std::size_t>(j)] += gv * static_cast<double>(cache.normalized[r * c + j]);
        }
    BatchNormGrads<Scalar> out{BasicTensor<Scalar>(grad_out.shape()), BasicTensor<Scalar>({c}),
                               BasicTensor<Scalar>({c})};
    for (Index j = 0; j < c; ++j) {
        out.gamma[j] = static_cast<Scalar>(sum_gx[static_cast<std::size_t>(j)]);
        out.beta[j] = static_cast<Scalar>(sum_g[static_cast<std::size_t>(j)]);
    }
    // dx = gamma * inv_std / m * (m*g - sum(g) - xhat * sum(g*xhat))
    for (Index r = 0; r < rows; ++r)
        for (Index j = 0; j < c; ++j) {
            const auto uj = static_cast<std::size_t>(j);
            const double scale = static_cast<double>(p.gamma[j]) * cache.inv_std[uj] / m;
            const double gv = static_cast<double>(grad_out[r * c + j]);
            const double xh = static_cast<double>(cache.normalized[r * c + j]);
            out.input[r * c + j] = static_cast<Scalar>(scale * (m * gv - sum_g[uj] - xh * sum_gx[uj]));
        }
    return out;
}

/// Backward of an inference-mode batchnorm (running statistics are constants).
template <typename Scalar>
BatchNormGrads<Scalar> batchnorm_infer_backward(const BasicTensor<Scalar>& input, const BatchNormParams<Scalar>& p,
                                                const BasicTensor<Scalar>& grad_out)
{
    const Index c = detail::check_bn(input, p);
    detail::expect_grad_shape("batchnorm", grad_out, input.shape());
    BatchNormGrads<Scalar> out{BasicTensor<Scalar>(input.shape()), BasicTensor<Scalar>({c}),
                               BasicTensor<Scalar>({c})};
    std::vector<double> gg(static_cast<std::size_t>(c), 0.0), gbeta(static_cast<std::size_t>(c), 0.0);
    const Index rows = input.size() / c;
    for (Index r = 0; r < rows; ++r)
        for (Index j = 0; j < c; ++j) {
            const auto uj = static_cast<std::size_t>(j);
            const double inv = 1.0 / std::sqrt(static_cast<double>(p.running_var[j]) + p.epsilon);
            const double gv = static_cast<double>(grad_out[r * c + j]);
            const double xh = (static_cast<double>(input[r * c + j]) - static_cast<double>(p.running_mean[j])) * inv;
            gg[uj] += gv * xh;
            gbeta[uj] += gv;
            out.input[r * c + j] = static_cast<Scalar>(gv * static_cast<double>(p.gamma[j]) * inv);
        }
    for (Index j = 0; j < c; ++j) {
        out.gamma[j] = static_cast<Scalar>(gg[static_cast<std::size_t>(j)]);
        out.beta[j] = static_cast<Scalar>(gbeta[static_cast<std::size_t>(j)]);
    }
    return out;
}

template <typename Scalar>
BasicTensor<Scalar> pool_backward(const BasicTensor<Scalar>& input, PoolKind kind, int window, int stride,
                                  int padding, const BasicTensor<Scalar>& grad_out)
{
    const auto g = Nhwc::of(input, "pool");
    const Index oh = detail::window_out("pool", "height", g.h, window, stride, padding);
    const Index ow = detail::window_out("pool", "width", g.w, window, stride, padding);
    detail::expect_grad_shape("pool", grad_out, g.with(oh, ow, g.c));
    std::vector<double> gi(static_cast<std::size_t>(input.size()), 0.0);
    const double area = static_cast<double>(window) * window;
    for (Index n = 0; n < g.n; ++n)
        for (Index oy = 0; oy < oh; ++oy)
            for (Index ox = 0; ox < ow; ++ox)
                for (Index c = 0; c < g.c; ++c) {
                    const double gv = static_cast<double>(grad_out[((n * oh + oy) * ow + ox) * g.c + c]);
                    Index best = -1;
                    double best_v = -std::numeric_limits<double>::infinity();
                    for (int ky = 0; ky < window; ++ky) {
                        const Index iy = oy * stride - padding + ky;
                        if (iy < 0 || iy >= g.h)
                            continue;
                        for (int kx = 0; kx < window; ++kx) {
                            const Index ix = ox * stride - padding + kx;
                            if (ix < 0 || ix >= g.w)
                                continue;
                            const Index i = ((n * g.h + iy) * g.w + ix) * g.c + c;
                            if (kind == PoolKind::Avg) {
                                gi[static_cast<std::size_t>(i)] += gv / area;
                            } else if (static_cast<double>(input[i]) > best_v) {
                                best_v = static_cast<double>(input[i]);
                                best = i;
                            }
                        }
                    }
                    if (kind == PoolKind::Max && best >= 0)
                        gi[static_cast<std::size_t>(best)] += gv;
                }
    return detail::to_tensor<Scalar>(input.shape(), gi);
}

template <typename Scalar>
DenseGrads<Scalar> dense_backward(const BasicTensor<Scalar>& input, const DenseParams<Scalar>& p, Activation act,
                                  const BasicTensor<Scalar>& grad_out)
{
    const Index nin = p.weight.dim(0), nout = p.weight.dim(1);
    const Index rows = input.rank() == 1 ? 1 : input.dim(0);
    detail::expect_grad_shape("dense", grad_out, input.rank() == 1 ? Shape{nout} : Shape{rows, nout});

    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const MatD x = Eigen::Map<const Mat>(input.data(), rows, nin).template cast<double>();
    const MatD w = Eigen::Map<const Mat>(p.weight.data(), nin, nout).template cast<double>();
    MatD gz = Eigen::Map<const Mat>(grad_out.data(), rows, nout).template cast<double>();
    if (act == Activation::Relu) {
        MatD z = x * w;
        for (Index j = 0; j < nout; ++j)
            z.col(j).array() += static_cast<double>(p.bias[j]);
        gz = (z.array() > 0.0).select(gz, 0.0);
    }
    DenseGrads<Scalar> out{BasicTensor<Scalar>(input.shape()), BasicTensor<Scalar>(p.weight.shape()),
                           BasicTensor<Scalar>(p.bias.shape())};
    Eigen::Map<Mat>(out.input.data(), rows, nin) = (gz * w.transpose()).template cast<Scalar>();
    Eigen::Map<Mat>(out.weight.data(), nin, nout) = (x.transpose() * gz).template cast<Scalar>();
    Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(out.bias.data(), nout) =
        gz.colwise().sum().template cast<Scalar>();
    return out;
}

template <typename Scalar>
BasicTensor<Scalar> relu_backward(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& grad_out)
{
    detail::expect_grad_shape("relu", grad_out, input.shape());
    BasicTensor<Scalar> out(input.shape());
    out.storage() = (input.storage().array() > Scalar(0)).select(grad_out.storage(), Scalar(0));
    return out;
}

/// d(loss)/d(logits) of softmax cross-entropy: probs - onehot(label).
template <typename Scalar>
BasicTensor<Scalar> softmax_xent_backward(const BasicTensor<Scalar>& probs, Index label)
{
    if (probs.rank() != 1)
        throw DimensionError("softmax_xent backward: expected (n) probabilities");
    if (label < 0 || label >= probs.dim(0))
        throw IndexError("softmax_xent backward: label " + std::to_string(label) + " out of range");
    BasicTensor<Scalar> g = probs;
    g[label] -= Scalar(1);
    return g;
}

template <typename Scalar>
BasicTensor<Scalar> dropout_backward(const BasicTensor<Scalar>& mask, const BasicTensor<Scalar>& grad_out)
{
    if (mask.empty())
        throw StateError("dropout backward: no cached mask");
    detail::expect_grad_shape("dropout", grad_out, mask.shape());
    BasicTensor<Scalar> out(mask.shape());
    out.storage() = grad_out.storage().cwiseProduct(mask.storage());
    return out;
}

/// Splits a channel-concatenated gradient back into per-input pieces.
template <typename Scalar>
std::vector<BasicTensor<Scalar>> concat_channels_backward(const std::vector<Shape>& input_shapes,
                                                          const BasicTensor<Scalar>& grad_out)
{
    const int rank = grad_out.rank();
    const Index total_c = grad_out.dim(rank - 1);
    const Index rows = grad_out.size() / total_c;
    std::vector<BasicTensor<Scalar>> parts;
    Index off = 0;
    for (const auto& s : input_shapes) {
        BasicTensor<Scalar> t(s);
        const Index c = s[rank - 1];
        for (Index r = 0; r < rows; ++r)
            std::copy_n(grad_out.data() + r * total_c + off, c, t.data() + r * c);
        off += c;
        parts.push_back(std::move(t));
    }
    if (off != total_c)
        throw DimensionError("concat backward: input channels do not sum to " + std::to_string(total_c));
    return parts;
}

} // namespace resmo
