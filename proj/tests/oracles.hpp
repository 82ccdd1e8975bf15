#pragma once

// Naive reference implementations used only by tests. They index through
// BasicTensor::at() with plain nested loops in long double, independent of
// the pointer arithmetic and loop ordering in the library.

#include <cmath>
#include <limits>
#include <vector>

#include "resmo/layers.hpp"
#include "resmo/random.hpp"

namespace oracle {

using resmo::BasicTensor;
using resmo::Index;

template <typename S>
BasicTensor<S> random_tensor(resmo::Rng& rng, const resmo::Shape& shape, double lo = -1.0, double hi = 1.0)
{
    BasicTensor<S> t(shape);
    for (Index i = 0; i < t.size(); ++i)
        t[i] = static_cast<S>(rng.uniform(lo, hi));
    return t;
}

inline int rand_int(resmo::Rng& rng, int lo, int hi) // inclusive
{
    return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

// Input must be HxWxC.
template <typename S>
BasicTensor<S> conv2d(const BasicTensor<S>& x, const BasicTensor<S>& kernel, const BasicTensor<S>& bias,
                      int stride, int pad)
{
    const Index H = x.dim(0), W = x.dim(1), C = x.dim(2);
    const Index k = kernel.dim(0), Co = kernel.dim(3);
    const Index OH = (H + 2 * pad - k) / stride + 1, OW = (W + 2 * pad - k) / stride + 1;
    BasicTensor<S> y({OH, OW, Co});
    for (Index oy = 0; oy < OH; ++oy)
        for (Index ox = 0; ox < OW; ++ox)
            for (Index co = 0; co < Co; ++co) {
                long double s = bias[co];
                for (Index ky = 0; ky < k; ++ky)
                    for (Index kx = 0; kx < k; ++kx)
                        for (Index ci = 0; ci < C; ++ci) {
                            const Index iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
                            if (iy < 0 || ix < 0 || iy >= H || ix >= W)
                                continue;
                            s += static_cast<long double>(x.at(iy, ix, ci)) * kernel.at(ky, kx, ci, co);
                        }
                y.at(oy, ox, co) = static_cast<S>(s);
            }
    return y;
}

template <typename S>
BasicTensor<S> pool(const BasicTensor<S>& x, resmo::PoolKind kind, int window, int stride, int pad)
{
    const Index H = x.dim(0), W = x.dim(1), C = x.dim(2);
    const Index OH = (H + 2 * pad - window) / stride + 1, OW = (W + 2 * pad - window) / stride + 1;
    BasicTensor<S> y({OH, OW, C});
    for (Index c = 0; c < C; ++c)
        for (Index oy = 0; oy < OH; ++oy)
            for (Index ox = 0; ox < OW; ++ox) {
                long double sum = 0, mx = -std::numeric_limits<long double>::infinity();
                for (Index dy = 0; dy < window; ++dy)
                    for (Index dx = 0; dx < window; ++dx) {
                        const Index iy = oy * stride + dy - pad, ix = ox * stride + dx - pad;
                        if (iy < 0 || ix < 0 || iy >= H || ix >= W)
                            continue;
                        sum += x.at(iy, ix, c);
                        mx = std::max<long double>(mx, x.at(iy, ix, c));
                    }
                y.at(oy, ox, c) = static_cast<S>(kind == resmo::PoolKind::Avg ? sum / (window * window) : mx);
            }
    return y;
}

template <typename S>
BasicTensor<S> dense(const BasicTensor<S>& x, const BasicTensor<S>& w, const BasicTensor<S>& b, bool relu)
{
    const Index nin = w.dim(0), nout = w.dim(1);
    BasicTensor<S> y({nout});
    for (Index j = 0; j < nout; ++j) {
        long double s = b[j];
        for (Index i = 0; i < nin; ++i)
            s += static_cast<long double>(x[i]) * w.at(i, j);
        if (relu && s < 0)
            s = 0;
        y[j] = static_cast<S>(s);
    }
    return y;
}

template <typename S>
BasicTensor<S> batchnorm_infer(const BasicTensor<S>& x, const resmo::BatchNormParams<S>& p)
{
    BasicTensor<S> y(x.shape());
    const Index c = x.dim(x.rank() - 1);
    for (Index i = 0; i < x.size(); ++i) {
        const Index j = i % c;
        const long double v = static_cast<long double>(p.gamma[j]) * (x[i] - static_cast<long double>(p.running_mean[j])) /
                                  std::sqrt(static_cast<long double>(p.running_var[j]) + p.epsilon) +
                              p.beta[j];
        y[i] = static_cast<S>(v);
    }
    return y;
}

} // namespace oracle
