#include "resmo/weights.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace resmo {

static_assert(std::endian::native == std::endian::little, "weight IO assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'R', 'M', 'N', 'W'};
constexpr std::uint16_t kVersion = 1;

class Writer
{
public:
    template <typename T>
    void put(T v)
    {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }

    void str(const std::string& s)
    {
        if (s.size() > 0xFFFF)
            throw ArgumentError("name too long for weight file: " + s.substr(0, 32) + "...");
        put(static_cast<std::uint16_t>(s.size()));
        buf_.insert(buf_.end(), s.begin(), s.end());
    }

    void raw(const void* p, std::size_t n)
    {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }

    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    std::vector<std::uint8_t> buf_;
};

class Reader
{
public:
    explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}

    template <typename T>
    T get(const char* what)
    {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, b_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string str(const char* what)
    {
        const auto n = get<std::uint16_t>(what);
        need(n, what);
        std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    void raw(void* out, std::size_t n, const char* what)
    {
        need(n, what);
        std::memcpy(out, b_.data() + pos_, n);
        pos_ += n;
    }

    bool done() const { return pos_ == b_.size(); }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n, const char* what) const
    {
        if (b_.size() - pos_ < n)
            throw TruncationError(std::string("weight file truncated while reading ") + what + " at byte " +
                                  std::to_string(pos_));
    }

    const std::vector<std::uint8_t>& b_;
    std::size_t pos_ = 0;
};

Index fan_in(const std::string& param, const Shape& s)
{
    if (param != "kernel" && param != "weight")
        return 0;
    Index n = 1;
    for (int a = 0; a + 1 < s.rank(); ++a)
        n *= s[a];
    // depthwise kernels (k, k, c) see only k*k inputs per output
    return s.rank() == 3 ? s[0] * s[1] : n;
}

} // namespace

const ParamSet& WeightStore::at(std::string_view layer) const
{
    const auto it = layers_.find(layer);
    if (it == layers_.end())
        throw NotFoundError("no weights for layer '" + std::string(layer) + "'");
    return it->second;
}

ParamSet& WeightStore::at(std::string_view layer)
{
    const auto it = layers_.find(layer);
    if (it == layers_.end())
        throw NotFoundError("no weights for layer '" + std::string(layer) + "'");
    return it->second;
}

const Tensor& WeightStore::get(std::string_view layer, std::string_view param) const
{
    const auto& set = at(layer);
    const auto it = set.find(param);
    if (it == set.end())
        throw NotFoundError("layer '" + std::string(layer) + "' has no parameter '" + std::string(param) + "'");
    return it->second;
}

Tensor& WeightStore::get(std::string_view layer, std::string_view param)
{
    auto& set = at(layer);
    const auto it = set.find(param);
    if (it == set.end())
        throw NotFoundError("layer '" + std::string(layer) + "' has no parameter '" + std::string(param) + "'");
    return it->second;
}

Index WeightStore::scalar_count() const
{
    Index n = 0;
    for (const auto& [_, set] : layers_)
        for (const auto& [__, t] : set)
            n += t.size();
    return n;
}

bool is_learnable(std::string_view param)
{
    return param != "running_mean" && param != "running_var";
}

std::vector<std::pair<std::string, Shape>> param_shapes(const ModelGraph& g, std::size_t i)
{
    const LayerSpec& s = g.layer(i);
    const Shape in = g.input_shape_of(i);
    const Shape out = g.output_shape(i);
    switch (s.kind) {
    case LayerKind::Conv:
    case LayerKind::Pointwise:
        return {{"kernel", Shape{s.k, s.k, in[2], out[2]}}, {"bias", Shape{out[2]}}};
    case LayerKind::Depthwise:
        return {{"kernel", Shape{s.k, s.k, in[2]}}, {"bias", Shape{in[2]}}};
    case LayerKind::BatchNorm: {
        const Index c = in[in.rank() - 1];
        return {{"gamma", Shape{c}}, {"beta", Shape{c}}, {"running_mean", Shape{c}}, {"running_var", Shape{c}}};
    }
    case LayerKind::Dense:
        return {{"weight", Shape{in[0], s.out}}, {"bias", Shape{s.out}}};
    default:
        return {};
    }
}

namespace {

WeightStore make_weights(const ModelGraph& g, Rng* rng)
{
    WeightStore w;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto& name = g.layer(i).name;
        for (const auto& [param, shape] : param_shapes(g, i)) {
            Tensor t(shape);
            if (param == "gamma" || param == "running_var")
                t.storage().setOnes();
            else if (const Index fi = fan_in(param, shape); fi > 0 && rng) {
                const double limit = std::sqrt(6.0 / static_cast<double>(fi));
                for (auto& v : t.values())
                    v = static_cast<float>(rng->uniform(-limit, limit));
            }
            w.set(name, param, std::move(t));
        }
    }
    return w;
}

} // namespace

WeightStore init_weights(const ModelGraph& g, std::uint64_t seed)
{
    Rng rng(seed);
    return make_weights(g, &rng);
}

WeightStore zero_weights(const ModelGraph& g)
{
    return make_weights(g, nullptr);
}

namespace {

template <typename Err>
void check_against(const ModelGraph& g, const WeightStore& w, bool finite)
{
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto& name = g.layer(i).name;
        const auto expected = param_shapes(g, i);
        if (expected.empty())
            continue;
        if (!w.contains(name))
            throw Err("layer '" + name + "': no weights stored");
        const auto& set = w.at(name);
        if (set.size() != expected.size())
            throw Err("layer '" + name + "': expected " + std::to_string(expected.size()) + " tensors, found " +
                      std::to_string(set.size()));
        for (const auto& [param, shape] : expected) {
            const auto it = set.find(param);
            if (it == set.end())
                throw Err("layer '" + name + "': missing parameter '" + param + "'");
            if (!(it->second.shape() == shape))
                throw Err("layer '" + name + "': parameter '" + param + "' has shape " + it->second.shape().str() +
                          ", graph expects " + shape.str());
            if (finite && !it->second.all_finite())
                throw Err("layer '" + name + "': parameter '" + param + "' has non-finite values");
        }
    }
}

} // namespace

void validate_weights(const ModelGraph& g, const WeightStore& w)
{
    check_against<ValidationError>(g, w, true);
}

void check_weights_match(const ModelGraph& g, const WeightStore& w)
{
    check_against<ShapeMismatchError>(g, w, false);
}

std::vector<std::uint8_t> encode_weights(const WeightStore& w)
{
    Writer out;
    out.raw(kMagic, sizeof kMagic);
    out.put(kVersion);
    out.put(static_cast<std::uint32_t>(w.size()));
    for (const auto& [layer, set] : w.layers()) {
        out.str(layer);
        if (set.size() > 0xFF)
            throw ArgumentError("layer '" + layer + "' has too many tensors for the weight file");
        out.put(static_cast<std::uint8_t>(set.size()));
        for (const auto& [param, t] : set) {
            out.str(param);
            out.put(static_cast<std::uint8_t>(t.rank()));
            for (int a = 0; a < t.rank(); ++a)
                out.put(static_cast<std::uint32_t>(t.dim(a)));
            out.raw(t.data(), sizeof(float) * static_cast<std::size_t>(t.size()));
        }
    }
    return out.take();
}

WeightStore decode_weights(const std::vector<std::uint8_t>& bytes)
{
    Reader in(bytes);
    char magic[4];
    in.raw(magic, sizeof magic, "magic");
    if (std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw BadMagicError("not a weight file (bad magic)");
    const auto version = in.get<std::uint16_t>("version");
    if (version != kVersion)
        throw VersionError("unsupported weight file version " + std::to_string(version) + " (expected 1)");

    WeightStore w;
    const auto count = in.get<std::uint32_t>("entry count");
    for (std::uint32_t e = 0; e < count; ++e) {
        const auto layer = in.str("layer name");
        if (layer.empty())
            throw FormatError("empty layer name in entry " + std::to_string(e));
        if (w.contains(layer))
            throw FormatError("duplicate layer entry '" + layer + "'");
        const auto tensors = in.get<std::uint8_t>("tensor count");
        ParamSet set;
        for (unsigned t = 0; t < tensors; ++t) {
            const auto param = in.str("parameter name");
            if (set.count(param))
                throw FormatError("layer '" + layer + "': duplicate parameter '" + param + "'");
            const auto rank = in.get<std::uint8_t>("rank");
            if (rank < 1 || rank > Shape::kMaxRank)
                throw FormatError("layer '" + layer + "': parameter '" + param + "' has rank " +
                                  std::to_string(rank));
            std::array<Index, Shape::kMaxRank> dims{};
            Index n = 1;
            for (unsigned a = 0; a < rank; ++a) {
                dims[a] = in.get<std::uint32_t>("dimension");
                if (dims[a] == 0)
                    throw FormatError("layer '" + layer + "': parameter '" + param + "' has a zero dimension");
                n *= dims[a];
                if (n > (Index{1} << 40))
                    throw FormatError("layer '" + layer + "': parameter '" + param + "' is implausibly large");
            }
            Tensor value(Shape(std::span<const Index>(dims.data(), rank)));
            in.raw(value.data(), sizeof(float) * static_cast<std::size_t>(n), "tensor data");
            set.emplace(param, std::move(value));
        }
        for (auto& [param, t] : set)
            w.set(layer, param, std::move(t));
        if (tensors == 0)
            throw FormatError("layer '" + layer + "' has no tensors");
    }
    if (!in.done())
        throw FormatError("trailing bytes after the last entry (byte " + std::to_string(in.pos()) + ")");
    return w;
}

void save_weights(const WeightStore& w, const std::filesystem::path& path)
{
    const auto bytes = encode_weights(w);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write weight file " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError("failed writing weight file " + path.string());
}

WeightStore load_weights(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open weight file " + path.string());
    const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return decode_weights(bytes);
}

WeightStore load_weights(const std::filesystem::path& path, const ModelGraph& g)
{
    WeightStore w = load_weights(path);
    check_weights_match(g, w);
    return w;
}

} // namespace resmo
