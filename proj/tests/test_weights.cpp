#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "resmo/resmonet.hpp"
#include "resmo/weights.hpp"

using namespace resmo;

namespace {

std::filesystem::path temp_file(const std::string& name)
{
    return std::filesystem::temp_directory_path() / ("resmo_test_" + name);
}

std::vector<std::uint8_t> read_all(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& p, const std::vector<std::uint8_t>& b)
{
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

ModelGraph desk_graph()
{
    return assemble_resmonet(1, 1, ResMoNetProfile::desk());
}

} // namespace

TEST_CASE("init_weights covers every parameterized layer")
{
    const auto g = desk_graph();
    const auto w = init_weights(g, 7);
    CHECK_NOTHROW(validate_weights(g, w));
    std::size_t parameterized = 0;
    for (const auto& s : g.layers())
        parameterized += s.has_params();
    CHECK(w.size() == parameterized);
}

TEST_CASE("init_weights is seeded, He-uniform bounded, with zero biases and identity batchnorm")
{
    const auto g = desk_graph();
    const auto a = init_weights(g, 11);
    CHECK(a == init_weights(g, 11));
    CHECK_FALSE(a == init_weights(g, 12));

    const auto& k = a.get("stem_conv", "kernel");
    const double limit = std::sqrt(6.0 / (3 * 3 * 3));
    double lo = 1e9, hi = -1e9;
    for (float v : k.values()) {
        lo = std::min(lo, static_cast<double>(v));
        hi = std::max(hi, static_cast<double>(v));
    }
    CHECK(lo >= -limit);
    CHECK(hi <= limit);
    CHECK(hi - lo > limit); // spread, not a constant

    const double dw_limit = std::sqrt(6.0 / 9.0);
    for (float v : a.get("mobile1_dw", "kernel").values())
        CHECK(std::abs(v) <= dw_limit);

    for (float v : a.get("head_dense2", "bias").values())
        CHECK(v == 0.0f);
    for (float v : a.get("stem_conv_bn", "gamma").values())
        CHECK(v == 1.0f);
    for (float v : a.get("stem_conv_bn", "running_var").values())
        CHECK(v == 1.0f);
    for (float v : a.get("stem_conv_bn", "running_mean").values())
        CHECK(v == 0.0f);
}

TEST_CASE("scalar_count of a fresh store equals the per-layer parameter shapes")
{
    const auto g = assemble_resmonet();
    const auto w = zero_weights(g);
    Index expected = 0;
    for (std::size_t i = 0; i < g.size(); ++i)
        for (const auto& [_, s] : param_shapes(g, i))
            expected += s.numel();
    CHECK(w.scalar_count() == expected);
}

TEST_CASE("save then load is bit-identical")
{
    const auto g = desk_graph();
    auto w = init_weights(g, 3);
    // awkward values survive too
    w.get("head_dense2", "bias")[0] = -0.0f;
    w.get("head_dense2", "bias")[1] = std::numeric_limits<float>::denorm_min();
    w.get("head_dense2", "bias")[2] = std::numeric_limits<float>::max();

    const auto path = temp_file("roundtrip.rmnw");
    save_weights(w, path);
    const auto back = load_weights(path, g);
    CHECK(back == w);
    CHECK(std::signbit(back.get("head_dense2", "bias")[0]));
    CHECK(encode_weights(back) == read_all(path));
    std::filesystem::remove(path);
}

TEST_CASE("weight file layout")
{
    WeightStore w;
    w.set("d", "bias", Tensor({2}, {1.0f, -2.0f}));
    const auto bytes = encode_weights(w);
    const std::vector<std::uint8_t> head{'R', 'M', 'N', 'W', 1, 0, 1, 0, 0, 0, 1, 0, 'd', 1, 4, 0, 'b', 'i', 'a', 's', 1,
                                         2, 0, 0, 0};
    REQUIRE(bytes.size() == head.size() + 8);
    CHECK(std::equal(head.begin(), head.end(), bytes.begin()));
    float v[2];
    std::memcpy(v, bytes.data() + head.size(), sizeof v);
    CHECK(v[0] == 1.0f);
    CHECK(v[1] == -2.0f);
}

TEST_CASE("truncation by any amount is a truncation error")
{
    const auto g = desk_graph();
    const auto bytes = encode_weights(init_weights(g, 5));
    auto cut = bytes;
    cut.pop_back();
    CHECK_THROWS_AS(decode_weights(cut), TruncationError);

    const auto path = temp_file("trunc.rmnw");
    write_all(path, cut);
    CHECK_THROWS_AS(load_weights(path), TruncationError);
    std::filesystem::remove(path);

    for (std::size_t len : {std::size_t{0}, std::size_t{3}, std::size_t{5}, std::size_t{9}, bytes.size() / 2})
        CHECK_THROWS_AS(decode_weights({bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(len)}),
                        TruncationError);
}

TEST_CASE("bad magic, version and format are distinct errors")
{
    WeightStore w;
    w.set("d", "bias", Tensor({2}, {1.0f, 2.0f}));
    const auto good = encode_weights(w);

    auto b = good;
    b[0] = 'X';
    CHECK_THROWS_AS(decode_weights(b), BadMagicError);

    b = good;
    b[4] = 2;
    CHECK_THROWS_AS(decode_weights(b), VersionError);

    b = good;
    b.push_back(0);
    CHECK_THROWS_AS(decode_weights(b), FormatError);

    b = good;
    b[20] = 0; // rank
    CHECK_THROWS_AS(decode_weights(b), FormatError);

    b = good;
    b[20] = 9;
    CHECK_THROWS_AS(decode_weights(b), FormatError);

    b = good;
    b[21] = 0; // zero dimension
    CHECK_THROWS_AS(decode_weights(b), FormatError);

    // all of them are load errors
    b = good;
    b[0] = 'X';
    CHECK_THROWS_AS(decode_weights(b), LoadError);
}

TEST_CASE("weights for one graph loaded against another name the layer")
{
    auto small = ResMoNetProfile::desk();
    auto wide = small;
    wide.mobile_channels = 24;
    const auto ga = assemble_resmonet(1, 1, small);
    const auto gb = assemble_resmonet(1, 1, wide);

    const auto path = temp_file("mismatch.rmnw");
    save_weights(init_weights(ga, 1), path);
    try {
        load_weights(path, gb);
        FAIL("expected a shape mismatch");
    } catch (const ShapeMismatchError& e) {
        CHECK(std::string(e.what()).find("mobile1_pw") != std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST_CASE("validate_weights reports missing, extra and ill-shaped tensors")
{
    const auto g = desk_graph();
    const auto good = init_weights(g, 2);

    auto w = good;
    w.set("head_dense1", "bias", Tensor({3}));
    CHECK_THROWS_AS(validate_weights(g, w), ValidationError);

    w = good;
    w.set("head_dense1", "extra", Tensor({3}));
    CHECK_THROWS_AS(validate_weights(g, w), ValidationError);

    w = good;
    w.get("stem_conv", "kernel")[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(validate_weights(g, w), ValidationError);

    CHECK_THROWS_AS(validate_weights(g, WeightStore{}), ValidationError);
    CHECK_THROWS_AS(check_weights_match(g, WeightStore{}), ShapeMismatchError);
}

TEST_CASE("store accessors")
{
    WeightStore w;
    CHECK_THROWS_AS(w.at("nope"), NotFoundError);
    w.set("a", "bias", Tensor({1}));
    CHECK_THROWS_AS(w.get("a", "kernel"), NotFoundError);
    CHECK(w.contains("a"));
    CHECK(is_learnable("kernel"));
    CHECK_FALSE(is_learnable("running_mean"));
    CHECK_FALSE(is_learnable("running_var"));
}
