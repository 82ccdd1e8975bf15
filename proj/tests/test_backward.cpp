// Central finite differences (step 1e-3) against every analytic backward.
// The layer templates are instantiated in double here so the check measures
// the gradient formulas rather than float round-off.

#include <doctest.h>

#include <functional>

#include "oracles.hpp"
#include "resmo/backward.hpp"

using namespace resmo;
using TensorD = BasicTensor<double>;

namespace {

constexpr double kStep = 1e-3;
constexpr double kTol = 1e-4;

double weighted_sum(const TensorD& out, const TensorD& r)
{
    return out.storage().dot(r.storage());
}

/// Relative error between the analytic gradient and the central difference
/// of `loss` with respect to every element of `x` (perturbed in place).
double fd_error(TensorD& x, const std::function<double()>& loss, const TensorD& analytic)
{
    REQUIRE(analytic.shape() == x.shape());
    TensorD numeric(x.shape());
    for (Index i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + kStep;
        const double up = loss();
        x[i] = saved - kStep;
        const double down = loss();
        x[i] = saved;
        numeric[i] = (up - down) / (2 * kStep);
    }
    const double scale = std::max({analytic.storage().norm(), numeric.storage().norm(), 1e-12});
    return (analytic.storage() - numeric.storage()).norm() / scale;
}

/// Random values whose magnitude stays clear of zero, so ReLU kinks are never
/// crossed by a finite-difference step.
TensorD away_from_zero(Rng& rng, const Shape& s)
{
    TensorD t(s);
    for (Index i = 0; i < t.size(); ++i) {
        const double m = rng.uniform(0.05, 1.0);
        t[i] = rng.uniform() < 0.5 ? -m : m;
    }
    return t;
}

} // namespace

TEST_CASE("dense single unit by hand")
{
    const DenseParams<double> p{TensorD({1, 1}, {3.0}), TensorD({1}, {0.0})};
    const auto g = dense_backward(TensorD({1}, {2.0}), p, Activation::None, TensorD({1}, {1.0}));
    CHECK(g.weight[0] == 2.0);
    CHECK(g.input[0] == 3.0);
    CHECK(g.bias[0] == 1.0);
}

TEST_CASE("relu blocks the gradient at a negative pre-activation")
{
    const TensorD x({3}, {-0.5, 0.7, -2.0});
    const TensorD g = relu_backward(x, TensorD({3}, 1.0));
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 1.0);
    CHECK(g[2] == 0.0);
    const DenseParams<double> p{TensorD({1, 1}, {1.0}), TensorD({1}, {-5.0})};
    CHECK(dense_backward(TensorD({1}, {1.0}), p, Activation::Relu, TensorD({1}, {1.0})).input[0] == 0.0);
}

TEST_CASE("missing cache is a state error")
{
    const auto p = BatchNormParams<double>::identity(2);
    CHECK_THROWS_AS(batchnorm_backward(TensorD({2, 2}), p, BatchNormCache<double>{}), StateError);
    CHECK_THROWS_AS(dropout_backward(TensorD{}, TensorD({2})), StateError);
}

TEST_CASE("conv2d backward matches finite differences")
{
    Rng rng(101);
    for (int trial = 0; trial < 25; ++trial) {
        const int k = oracle::rand_int(rng, 1, 3), stride = oracle::rand_int(rng, 1, 2), pad = oracle::rand_int(rng, 0, 1);
        const Index n = oracle::rand_int(rng, 1, 2), cin = oracle::rand_int(rng, 1, 3), cout = oracle::rand_int(rng, 1, 3);
        TensorD x = oracle::random_tensor<double>(rng, {n, oracle::rand_int(rng, k, 5), oracle::rand_int(rng, k, 5), cin});
        ConvParams<double> p{oracle::random_tensor<double>(rng, {k, k, cin, cout}), oracle::random_tensor<double>(rng, {cout}),
                             stride, pad};
        const TensorD r = oracle::random_tensor<double>(rng, conv2d(x, p).shape());
        const auto g = conv2d_backward(x, p, r);
        auto loss = [&] { return weighted_sum(conv2d(x, p), r); };
        CHECK(fd_error(x, loss, g.input) < kTol);
        CHECK(fd_error(p.kernel, loss, g.kernel) < kTol);
        CHECK(fd_error(p.bias, loss, g.bias) < kTol);
    }
}

TEST_CASE("pointwise backward matches finite differences")
{
    Rng rng(102);
    for (int trial = 0; trial < 10; ++trial) {
        const Index cin = oracle::rand_int(rng, 1, 4), cout = oracle::rand_int(rng, 1, 4);
        TensorD x = oracle::random_tensor<double>(rng, {3, 4, cin});
        ConvParams<double> p{oracle::random_tensor<double>(rng, {1, 1, cin, cout}), oracle::random_tensor<double>(rng, {cout}), 1, 0};
        const TensorD r = oracle::random_tensor<double>(rng, {3, 4, cout});
        const auto g = pointwise_conv2d_backward(x, p, r);
        auto loss = [&] { return weighted_sum(pointwise_conv2d(x, p), r); };
        CHECK(fd_error(x, loss, g.input) < kTol);
        CHECK(fd_error(p.kernel, loss, g.kernel) < kTol);
        CHECK(fd_error(p.bias, loss, g.bias) < kTol);
    }
}

TEST_CASE("depthwise backward matches finite differences")
{
    Rng rng(103);
    for (int trial = 0; trial < 25; ++trial) {
        const int k = oracle::rand_int(rng, 1, 3), stride = oracle::rand_int(rng, 1, 2), pad = oracle::rand_int(rng, 0, 1);
        const Index c = oracle::rand_int(rng, 1, 3);
        TensorD x = oracle::random_tensor<double>(rng, {2, oracle::rand_int(rng, k, 5), oracle::rand_int(rng, k, 5), c});
        DepthwiseParams<double> p{oracle::random_tensor<double>(rng, {k, k, c}), oracle::random_tensor<double>(rng, {c}), stride, pad};
        const TensorD r = oracle::random_tensor<double>(rng, depthwise_conv2d(x, p).shape());
        const auto g = depthwise_conv2d_backward(x, p, r);
        auto loss = [&] { return weighted_sum(depthwise_conv2d(x, p), r); };
        CHECK(fd_error(x, loss, g.input) < kTol);
        CHECK(fd_error(p.kernel, loss, g.kernel) < kTol);
        CHECK(fd_error(p.bias, loss, g.bias) < kTol);
    }
}

TEST_CASE("batchnorm train-mode backward matches finite differences")
{
    Rng rng(104);
    for (int trial = 0; trial < 25; ++trial) {
        const Index c = oracle::rand_int(rng, 1, 4);
        TensorD x = oracle::random_tensor<double>(rng, {2, oracle::rand_int(rng, 1, 3), oracle::rand_int(rng, 2, 3), c}, -2, 2);
        BatchNormParams<double> p = BatchNormParams<double>::identity(c);
        p.gamma = oracle::random_tensor<double>(rng, {c}, 0.5, 1.5);
        p.beta = oracle::random_tensor<double>(rng, {c});
        const TensorD r = oracle::random_tensor<double>(rng, x.shape());
        BatchNormCache<double> cache;
        auto scratch = p;
        batchnorm_train(x, scratch, cache);
        const auto g = batchnorm_backward(r, p, cache);
        auto loss = [&] {
            auto q = p; // running statistics must not leak between evaluations
            BatchNormCache<double> c2;
            return weighted_sum(batchnorm_train(x, q, c2), r);
        };
        CHECK(fd_error(x, loss, g.input) < kTol);
        CHECK(fd_error(p.gamma, loss, g.gamma) < kTol);
        CHECK(fd_error(p.beta, loss, g.beta) < kTol);
    }
}

TEST_CASE("batchnorm inference-mode backward matches finite differences")
{
    Rng rng(105);
    for (int trial = 0; trial < 10; ++trial) {
        const Index c = oracle::rand_int(rng, 1, 4);
        TensorD x = oracle::random_tensor<double>(rng, {3, 2, c});
        BatchNormParams<double> p{oracle::random_tensor<double>(rng, {c}), oracle::random_tensor<double>(rng, {c}),
                                  oracle::random_tensor<double>(rng, {c}), oracle::random_tensor<double>(rng, {c}, 0.2, 2.0)};
        const TensorD r = oracle::random_tensor<double>(rng, x.shape());
        const auto g = batchnorm_infer_backward(x, p, r);
        auto loss = [&] { return weighted_sum(batchnorm_infer(x, p), r); };
        CHECK(fd_error(x, loss, g.input) < kTol);
        CHECK(fd_error(p.gamma, loss, g.gamma) < kTol);
        CHECK(fd_error(p.beta, loss, g.beta) < kTol);
    }
}

TEST_CASE("pool backward matches finite differences")
{
    Rng rng(106);
    for (int trial = 0; trial < 25; ++trial) {
        const int win = oracle::rand_int(rng, 1, 3), stride = oracle::rand_int(rng, 1, 2), pad = oracle::rand_int(rng, 0, win - 1);
        const Shape s{2, oracle::rand_int(rng, win, 5), oracle::rand_int(rng, win, 5), oracle::rand_int(rng, 1, 2)};
        // distinct values spaced well beyond the step keep max pooling smooth
        TensorD x(s);
        std::vector<double> vals(static_cast<std::size_t>(x.size()));
        for (std::size_t i = 0; i < vals.size(); ++i)
            vals[i] = 0.05 * static_cast<double>(i);
        rng.shuffle(std::span<double>(vals));
        for (Index i = 0; i < x.size(); ++i)
            x[i] = vals[static_cast<std::size_t>(i)];
        for (auto kind : {PoolKind::Avg, PoolKind::Max}) {
            const TensorD r = oracle::random_tensor<double>(rng, pool(x, kind, win, stride, pad).shape());
            const TensorD g = pool_backward(x, kind, win, stride, pad, r);
            auto loss = [&] { return weighted_sum(pool(x, kind, win, stride, pad), r); };
            CHECK(fd_error(x, loss, g) < kTol);
        }
    }
}

TEST_CASE("dense backward matches finite differences")
{
    Rng rng(107);
    for (int trial = 0; trial < 25; ++trial) {
        const Index nin = oracle::rand_int(rng, 1, 6), nout = oracle::rand_int(rng, 1, 6), rows = oracle::rand_int(rng, 1, 3);
        const bool relu = trial % 2;
        TensorD x = oracle::random_tensor<double>(rng, {rows, nin});
        DenseParams<double> p{oracle::random_tensor<double>(rng, {nin, nout}), oracle::random_tensor<double>(rng, {nout})};
        if (relu) {
            // keep pre-activations clear of the kink
            const TensorD z = dense(x, p);
            bool near_kink = false;
            for (Index i = 0; i < z.size(); ++i)
                near_kink |= std::abs(z[i]) < 0.05;
            if (near_kink)
                continue;
        }
        const auto act = relu ? Activation::Relu : Activation::None;
        const TensorD r = oracle::random_tensor<double>(rng, {rows, nout});
        const auto g = dense_backward(x, p, act, r);
        auto loss = [&] { return weighted_sum(dense(x, p, act), r); };
        CHECK(fd_error(x, loss, g.input) < kTol);
        CHECK(fd_error(p.weight, loss, g.weight) < kTol);
        CHECK(fd_error(p.bias, loss, g.bias) < kTol);
    }
}

TEST_CASE("relu, dropout, add and concat backward match finite differences")
{
    Rng rng(108);
    for (int trial = 0; trial < 10; ++trial) {
        TensorD x = away_from_zero(rng, {2, 3, 3});
        const TensorD r = oracle::random_tensor<double>(rng, x.shape());
        CHECK(fd_error(x, [&] { return weighted_sum(relu(x), r); }, relu_backward(x, r)) < kTol);

        TensorD mask;
        Rng mask_rng(static_cast<std::uint64_t>(trial));
        dropout(x, 0.3, mask_rng, mask);
        auto dropped = [&] {
            TensorD y(x.shape());
            y.storage() = x.storage().cwiseProduct(mask.storage());
            return weighted_sum(y, r);
        };
        CHECK(fd_error(x, dropped, dropout_backward(mask, r)) < kTol);

        TensorD y = oracle::random_tensor<double>(rng, x.shape());
        CHECK(fd_error(x, [&] { return weighted_sum(add(x, y), r); }, r) < kTol);

        TensorD b = oracle::random_tensor<double>(rng, {2, 3, 2});
        const TensorD rc = oracle::random_tensor<double>(rng, {2, 3, 5});
        const auto parts = concat_channels_backward<double>({x.shape(), b.shape()}, rc);
        auto cat = [&] { return weighted_sum(concat_channels<double>({&x, &b}), rc); };
        CHECK(fd_error(x, cat, parts[0]) < kTol);
        CHECK(fd_error(b, cat, parts[1]) < kTol);
    }
}

TEST_CASE("softmax cross-entropy backward matches finite differences")
{
    Rng rng(109);
    for (int trial = 0; trial < 25; ++trial) {
        const Index n = oracle::rand_int(rng, 2, 8);
        const auto label = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
        TensorD z = oracle::random_tensor<double>(rng, {n}, -3, 3);
        const TensorD g = softmax_xent_backward(softmax_xent(z, label).probs, label);
        CHECK(fd_error(z, [&] { return softmax_xent(z, label).loss; }, g) < kTol);
    }
}
