#include "resmo/network.hpp"

#include <cmath>

#include "resmo/backward.hpp"

namespace resmo {

ConvParams<float> conv_params(const ModelGraph& g, const WeightStore& w, std::size_t i)
{
    const auto& s = g.layer(i);
    return {w.get(s.name, "kernel"), w.get(s.name, "bias"), s.stride, s.padding};
}

DepthwiseParams<float> depthwise_params(const ModelGraph& g, const WeightStore& w, std::size_t i)
{
    const auto& s = g.layer(i);
    return {w.get(s.name, "kernel"), w.get(s.name, "bias"), s.stride, s.padding};
}

BatchNormParams<float> batchnorm_params(const ModelGraph& g, const WeightStore& w, std::size_t i)
{
    const auto& s = g.layer(i);
    BatchNormParams<float> p;
    p.gamma = w.get(s.name, "gamma");
    p.beta = w.get(s.name, "beta");
    p.running_mean = w.get(s.name, "running_mean");
    p.running_var = w.get(s.name, "running_var");
    p.epsilon = s.epsilon;
    p.momentum = s.momentum;
    return p;
}

DenseParams<float> dense_params(const ModelGraph& g, const WeightStore& w, std::size_t i)
{
    const auto& s = g.layer(i);
    return {w.get(s.name, "weight"), w.get(s.name, "bias")};
}

namespace {

Shape batched(Index n, const Shape& per_sample)
{
    std::array<Index, Shape::kMaxRank> d{};
    d[0] = n;
    for (int a = 0; a < per_sample.rank(); ++a)
        d[static_cast<std::size_t>(a + 1)] = per_sample[a];
    return Shape(std::span<const Index>(d.data(), static_cast<std::size_t>(per_sample.rank() + 1)));
}

PoolKind pool_kind(LayerKind k)
{
    return k == LayerKind::MaxPool ? PoolKind::Max : PoolKind::Avg;
}

/// Runs layer i on batched inputs. Training mode records caches into `tape`.
Tensor run_layer(const ModelGraph& g, WeightStore* mutable_w, const WeightStore& w, std::size_t i,
                 const std::vector<const Tensor*>& in, Index n, Tape* tape, Rng* rng)
{
    const LayerSpec& s = g.layer(i);
    switch (s.kind) {
    case LayerKind::Input:
        return *in[0];
    case LayerKind::Conv:
        return conv2d(*in[0], conv_params(g, w, i));
    case LayerKind::Pointwise:
        return pointwise_conv2d(*in[0], conv_params(g, w, i));
    case LayerKind::Depthwise:
        return depthwise_conv2d(*in[0], depthwise_params(g, w, i));
    case LayerKind::BatchNorm: {
        auto p = batchnorm_params(g, w, i);
        if (!tape)
            return batchnorm_infer(*in[0], p);
        Tensor y = batchnorm_train(*in[0], p, tape->bn[i]);
        mutable_w->get(s.name, "running_mean") = std::move(p.running_mean);
        mutable_w->get(s.name, "running_var") = std::move(p.running_var);
        return y;
    }
    case LayerKind::Relu:
        return relu(*in[0]);
    case LayerKind::AvgPool:
    case LayerKind::MaxPool:
        return pool(*in[0], pool_kind(s.kind), s.k, s.stride, s.padding);
    case LayerKind::Dense:
        return dense(*in[0], dense_params(g, w, i), s.activation);
    case LayerKind::Dropout:
        if (!tape)
            return *in[0];
        return dropout(*in[0], s.rate, *rng, tape->masks[i]);
    case LayerKind::Softmax:
        return softmax(*in[0]);
    case LayerKind::Concat:
        return concat_channels(in);
    case LayerKind::Add: {
        Tensor sum = *in[0];
        for (std::size_t k = 1; k < in.size(); ++k)
            sum = add(sum, *in[k]);
        return sum;
    }
    case LayerKind::Flatten:
        return in[0]->reshaped(Shape{n, g.output_shape(i)[0]});
    }
    throw GraphError("unknown layer kind");
}

Index batch_of(const ModelGraph& g, const Tensor& x, bool allow_single)
{
    const Shape want = g.input_shape();
    if (allow_single && x.shape() == want)
        return 0;
    if (x.rank() == want.rank() + 1) {
        bool ok = true;
        for (int a = 0; a < want.rank(); ++a)
            ok = ok && x.dim(a + 1) == want[a];
        if (ok)
            return x.dim(0);
    }
    throw DimensionError("model '" + g.name() + "' expects input " + want.str() +
                         (allow_single ? " or a batch of it" : " batched as (N, ...)") + ", got " + x.shape().str());
}

} // namespace

Tensor forward_model(const ModelGraph& g, const WeightStore& w, const Tensor& input)
{
    validate_weights(g, w);
    const Index nb = batch_of(g, input, true);
    const Index n = nb == 0 ? 1 : nb;

    // release each activation after its last consumer
    std::vector<std::size_t> last_use(g.size(), 0);
    for (std::size_t i = 0; i < g.size(); ++i)
        for (auto j : g.inputs_of(i))
            last_use[j] = i;

    std::vector<Tensor> act(g.size());
    act[0] = nb == 0 ? input.reshaped(batched(1, input.shape())) : input;
    for (std::size_t i = 1; i < g.size(); ++i) {
        std::vector<const Tensor*> in;
        for (auto j : g.inputs_of(i))
            in.push_back(&act[j]);
        act[i] = run_layer(g, nullptr, w, i, in, n, nullptr, nullptr);
        for (auto j : g.inputs_of(i))
            if (last_use[j] == i)
                act[j] = Tensor();
    }
    Tensor out = std::move(act.back());
    return nb == 0 ? out.reshaped(g.output_shape(g.size() - 1)) : out;
}

Tape forward_train(const ModelGraph& g, WeightStore& w, const Tensor& batch, Rng& rng)
{
    validate_weights(g, w);
    const Index n = batch_of(g, batch, false);
    Tape tape;
    tape.outputs.resize(g.size());
    tape.bn.resize(g.size());
    tape.masks.resize(g.size());
    tape.outputs[0] = batch;
    for (std::size_t i = 1; i < g.size(); ++i) {
        std::vector<const Tensor*> in;
        for (auto j : g.inputs_of(i))
            in.push_back(&tape.outputs[j]);
        tape.outputs[i] = run_layer(g, &w, w, i, in, n, &tape, &rng);
    }
    return tape;
}

BackwardResult backward(const ModelGraph& g, const WeightStore& w, const Tape& tape, const std::vector<Index>& labels)
{
    if (tape.outputs.size() != g.size() || tape.outputs.back().empty())
        throw StateError("backward: tape does not belong to this graph");
    const std::size_t out = g.size() - 1;
    const std::size_t logits_at = g.inputs_of(out).front();
    const Tensor& logits = tape.outputs[logits_at];
    const Index n = logits.dim(0), k = logits.dim(1);
    if (static_cast<Index>(labels.size()) != n)
        throw DimensionError("backward: " + std::to_string(labels.size()) + " labels for a batch of " +
                             std::to_string(n));

    BackwardResult result;
    std::vector<Tensor> grad(g.size());
    Tensor gl({n, k});
    for (Index r = 0; r < n; ++r) {
        const Tensor row({k}, std::span<const float>(logits.data() + r * k, static_cast<std::size_t>(k)));
        const auto sx = softmax_xent(row, labels[static_cast<std::size_t>(r)]);
        result.loss += sx.loss;
        const Tensor gr = softmax_xent_backward(sx.probs, labels[static_cast<std::size_t>(r)]);
        for (Index c = 0; c < k; ++c)
            gl[r * k + c] = gr[c] / static_cast<float>(n);
    }
    result.loss /= static_cast<double>(n);
    grad[logits_at] = std::move(gl);

    const auto accumulate = [&](std::size_t j, Tensor g_in) {
        if (grad[j].empty())
            grad[j] = std::move(g_in);
        else
            grad[j].storage() += g_in.storage();
    };

    for (std::size_t i = out; i-- > 1;) {
        if (grad[i].empty())
            continue;
        const LayerSpec& s = g.layer(i);
        const auto& ins = g.inputs_of(i);
        const Tensor& x = tape.outputs[ins.front()];
        const Tensor& gy = grad[i];
        switch (s.kind) {
        case LayerKind::Conv:
        case LayerKind::Pointwise: {
            auto r = conv2d_backward(x, conv_params(g, w, i), gy);
            result.grads.set(s.name, "kernel", std::move(r.kernel));
            result.grads.set(s.name, "bias", std::move(r.bias));
            accumulate(ins[0], std::move(r.input));
            break;
        }
        case LayerKind::Depthwise: {
            auto r = depthwise_conv2d_backward(x, depthwise_params(g, w, i), gy);
            result.grads.set(s.name, "kernel", std::move(r.kernel));
            result.grads.set(s.name, "bias", std::move(r.bias));
            accumulate(ins[0], std::move(r.input));
            break;
        }
        case LayerKind::BatchNorm: {
            auto r = batchnorm_backward(gy, batchnorm_params(g, w, i), tape.bn[i]);
            result.grads.set(s.name, "gamma", std::move(r.gamma));
            result.grads.set(s.name, "beta", std::move(r.beta));
            accumulate(ins[0], std::move(r.input));
            break;
        }
        case LayerKind::Dense: {
            auto r = dense_backward(x, dense_params(g, w, i), s.activation, gy);
            result.grads.set(s.name, "weight", std::move(r.weight));
            result.grads.set(s.name, "bias", std::move(r.bias));
            accumulate(ins[0], std::move(r.input));
            break;
        }
        case LayerKind::Relu:
            accumulate(ins[0], relu_backward(x, gy));
            break;
        case LayerKind::AvgPool:
        case LayerKind::MaxPool:
            accumulate(ins[0], pool_backward(x, pool_kind(s.kind), s.k, s.stride, s.padding, gy));
            break;
        case LayerKind::Dropout:
            accumulate(ins[0], dropout_backward(tape.masks[i], gy));
            break;
        case LayerKind::Flatten:
            accumulate(ins[0], gy.reshaped(x.shape()));
            break;
        case LayerKind::Add:
            for (auto j : ins)
                accumulate(j, gy);
            break;
        case LayerKind::Concat: {
            std::vector<Shape> shapes;
            for (auto j : ins)
                shapes.push_back(tape.outputs[j].shape());
            auto parts = concat_channels_backward(shapes, gy);
            for (std::size_t p = 0; p < ins.size(); ++p)
                accumulate(ins[p], std::move(parts[p]));
            break;
        }
        case LayerKind::Softmax:
            throw GraphError("softmax '" + s.name + "' is only supported as the output layer");
        case LayerKind::Input:
            break;
        }
        grad[i] = Tensor();
    }

    // layers that received no gradient still get zero entries
    for (std::size_t i = 0; i < g.size(); ++i)
        for (const auto& [param, shape] : param_shapes(g, i))
            if (is_learnable(param) && !(result.grads.contains(g.layer(i).name) &&
                                         result.grads.at(g.layer(i).name).count(param)))
                result.grads.set(g.layer(i).name, param, Tensor(shape));
    return result;
}

} // namespace resmo
