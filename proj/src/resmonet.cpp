#include "resmo/resmonet.hpp"

namespace resmo {

namespace {

struct Emitter
{
    GraphBuilder& b;
    std::string label;
    std::string last;

    const std::string& push(LayerSpec s, std::vector<std::string> inputs)
    {
        s.name = label + "_" + s.name;
        s.block = label;
        s.inputs = std::move(inputs);
        last = b.add(std::move(s));
        return last;
    }

    static LayerSpec spec(std::string name, LayerKind kind)
    {
        LayerSpec s;
        s.name = std::move(name);
        s.kind = kind;
        return s;
    }

    std::string conv(const std::string& name, const std::string& from, int k, int stride, Index out, bool relu = true)
    {
        auto s = spec(name, LayerKind::Conv);
        s.k = k;
        s.stride = stride;
        s.padding = k / 2;
        s.out = out;
        push(std::move(s), {from});
        push(spec(name + "_bn", LayerKind::BatchNorm), {last});
        if (relu)
            push(spec(name + "_relu", LayerKind::Relu), {last});
        return last;
    }

    std::string pool(const std::string& name, const std::string& from, LayerKind kind, int k, int stride)
    {
        auto s = spec(name, kind);
        s.k = k;
        s.stride = stride;
        return push(std::move(s), {from});
    }
};

} // namespace

ResMoNetProfile ResMoNetProfile::desk()
{
    ResMoNetProfile p;
    p.input_size = 32;
    p.stem_channels = 8;
    p.stem_branch = 4;
    p.mobile_channels = 16;
    p.transition_channels = 8;
    p.dense_units = 32;
    return p;
}

std::string build_block(GraphBuilder& builder, BlockKind kind, const std::string& entry, const ResMoNetProfile& cfg,
                        const std::string& label)
{
    // validates that the entry exists before anything is appended
    const Shape in = builder.shape_of(entry);
    Emitter e{builder, label, entry};

    switch (kind) {
    case BlockKind::Stem: {
        const auto trunk = e.conv("conv", entry, 3, 2, cfg.stem_channels);
        e.conv("branch_a", trunk, 1, 1, cfg.stem_branch);
        const auto a = e.conv("branch_b", e.last, 3, 2, cfg.stem_channels);
        const auto b = e.pool("branch_pool", trunk, LayerKind::MaxPool, 2, 2);
        e.push(Emitter::spec("concat", LayerKind::Concat), {a, b});
        return e.conv("fuse", e.last, 1, 1, cfg.stem_channels);
    }
    case BlockKind::Mobile: {
        auto dw = Emitter::spec("dw", LayerKind::Depthwise);
        dw.k = 3;
        dw.padding = 1;
        e.push(std::move(dw), {entry});
        e.push(Emitter::spec("dw_bn", LayerKind::BatchNorm), {e.last});
        e.push(Emitter::spec("dw_relu", LayerKind::Relu), {e.last});
        auto pw = Emitter::spec("pw", LayerKind::Pointwise);
        pw.out = cfg.mobile_channels;
        e.push(std::move(pw), {e.last});
        e.push(Emitter::spec("pw_bn", LayerKind::BatchNorm), {e.last});
        e.push(Emitter::spec("pw_relu", LayerKind::Relu), {e.last});
        return e.pool("pool", e.last, LayerKind::AvgPool, cfg.pool, cfg.pool_stride);
    }
    case BlockKind::Residual: {
        if (in.rank() != 3)
            throw GraphError("residual block needs an HxWxC entry, got " + in.str());
        e.conv("conv1", entry, 3, 1, in[2]);
        const auto body = e.conv("conv2", e.last, 3, 1, in[2], false);
        e.push(Emitter::spec("add", LayerKind::Add), {body, entry});
        return e.push(Emitter::spec("relu", LayerKind::Relu), {e.last});
    }
    case BlockKind::Transition:
        e.conv("conv", entry, cfg.transition_kernel, 1, cfg.transition_channels);
        return e.pool("pool", e.last, LayerKind::AvgPool, cfg.pool, cfg.pool_stride);
    case BlockKind::DenseHead: {
        e.push(Emitter::spec("flatten", LayerKind::Flatten), {entry});
        auto d1 = Emitter::spec("dense1", LayerKind::Dense);
        d1.out = cfg.dense_units;
        d1.activation = Activation::Relu;
        e.push(std::move(d1), {e.last});
        auto drop = Emitter::spec("dropout", LayerKind::Dropout);
        drop.rate = cfg.dropout;
        e.push(std::move(drop), {e.last});
        auto d2 = Emitter::spec("dense2", LayerKind::Dense);
        d2.out = cfg.num_classes;
        return e.push(std::move(d2), {e.last});
    }
    }
    throw GraphError("unknown block kind");
}

ModelGraph assemble_resmonet(int m, int r, const ResMoNetProfile& cfg)
{
    if (m < 1 || r < 1)
        throw GraphError("mobile depth m and residual depth r must both be >= 1 (got m=" + std::to_string(m) +
                         ", r=" + std::to_string(r) + ")");
    if (cfg.num_classes < 1)
        throw GraphError("num_classes must be positive");

    GraphBuilder b(cfg.input_size, cfg.input_size, cfg.input_channels);
    std::string x = build_block(b, BlockKind::Stem, b.last(), cfg, "stem");
    for (int i = 1; i <= m; ++i)
        x = build_block(b, BlockKind::Mobile, x, cfg, "mobile" + std::to_string(i));
    for (int i = 1; i <= r; ++i)
        x = build_block(b, BlockKind::Residual, x, cfg, "residual" + std::to_string(i));
    x = build_block(b, BlockKind::Transition, x, cfg, "transition");
    x = build_block(b, BlockKind::DenseHead, x, cfg, "head");

    LayerSpec out;
    out.name = "softmax";
    out.kind = LayerKind::Softmax;
    out.inputs = {x};
    b.add(std::move(out));
    return b.build("resmonet");
}

} // namespace resmo
