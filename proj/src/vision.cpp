#include "resmo/vision.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace resmo {

Image::Image(Index w, Index h, std::uint8_t fill) : width(w), height(h)
{
    if (w < 1 || h < 1)
        throw DimensionError("image size must be positive, got " + std::to_string(w) + "x" + std::to_string(h));
    data.assign(static_cast<std::size_t>(w * h * 3), fill);
}

// ---------------------------------------------------------------------------
// PPM

namespace {

// Next header token, skipping whitespace and comments.
std::string ppm_token(const std::string& b, std::size_t& pos)
{
    for (;;) {
        while (pos < b.size() && std::isspace(static_cast<unsigned char>(b[pos])))
            ++pos;
        if (pos < b.size() && b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n')
                ++pos;
            continue;
        }
        break;
    }
    const std::size_t start = pos;
    while (pos < b.size() && !std::isspace(static_cast<unsigned char>(b[pos])))
        ++pos;
    return b.substr(start, pos - start);
}

Index ppm_number(const std::string& b, std::size_t& pos, const char* what)
{
    const auto tok = ppm_token(b, pos);
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](unsigned char c) { return std::isdigit(c); }) ||
        tok.size() > 9)
        throw FormatError(std::string("PPM: bad ") + what + " '" + tok + "'");
    return std::stoll(tok);
}

} // namespace

Image decode_ppm(const std::string& b)
{
    std::size_t pos = 0;
    if (ppm_token(b, pos) != "P6")
        throw FormatError("PPM: only binary P6 images are supported");
    const Index w = ppm_number(b, pos, "width");
    const Index h = ppm_number(b, pos, "height");
    const Index maxval = ppm_number(b, pos, "maxval");
    if (w < 1 || h < 1)
        throw FormatError("PPM: empty image");
    if (maxval != 255)
        throw FormatError("PPM: maxval must be 255, got " + std::to_string(maxval));
    if (pos >= b.size() || !std::isspace(static_cast<unsigned char>(b[pos])))
        throw FormatError("PPM: missing separator before pixel data");
    ++pos;
    Image img(w, h);
    if (b.size() - pos < img.data.size())
        throw TruncationError("PPM: pixel data truncated (" + std::to_string(b.size() - pos) + " of " +
                              std::to_string(img.data.size()) + " bytes)");
    std::copy_n(b.begin() + static_cast<std::ptrdiff_t>(pos), img.data.size(), img.data.begin());
    return img;
}

std::string encode_ppm(const Image& img)
{
    std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.append(img.data.begin(), img.data.end());
    return out;
}

Image read_ppm(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open image " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_ppm(ss.str());
}

void write_ppm(const Image& img, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write image " + path.string());
    const auto bytes = encode_ppm(img);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError("failed writing image " + path.string());
}

// ---------------------------------------------------------------------------
// geometry

Image crop(const Image& img, Index x, Index y, Index w, Index h)
{
    if (w < 1 || h < 1 || x < 0 || y < 0 || x + w > img.width || y + h > img.height)
        throw RangeError("crop (" + std::to_string(x) + "," + std::to_string(y) + ") " + std::to_string(w) + "x" +
                         std::to_string(h) + " leaves the " + std::to_string(img.width) + "x" +
                         std::to_string(img.height) + " image");
    Image out(w, h);
    for (Index r = 0; r < h; ++r) {
        const auto* src = img.data.data() + ((y + r) * img.width + x) * 3;
        std::copy_n(src, w * 3, out.data.data() + r * w * 3);
    }
    return out;
}

FaceBox square_roi(const Image& img, const FaceBox& box)
{
    if (box.w < 1 || box.h < 1 || box.x < 0 || box.y < 0 || box.x + box.w > img.width || box.y + box.h > img.height)
        throw RangeError("face box (" + std::to_string(box.x) + "," + std::to_string(box.y) + ") " +
                         std::to_string(box.w) + "x" + std::to_string(box.h) + " is outside the " +
                         std::to_string(img.width) + "x" + std::to_string(img.height) + " image");
    const Index side = std::min({std::max(box.w, box.h), img.width, img.height});
    // extra pixels split evenly, the odd one going right / down
    const Index x = std::clamp(box.x - (side - box.w) / 2, Index{0}, img.width - side);
    const Index y = std::clamp(box.y - (side - box.h) / 2, Index{0}, img.height - side);
    return {x, y, side, side};
}

Image crop_face(const Image& img, const FaceBox& box)
{
    const FaceBox sq = square_roi(img, box);
    return crop(img, sq.x, sq.y, sq.w, sq.h);
}

Image resize_bilinear(const Image& img, Index out_w, Index out_h)
{
    if (img.width < 1 || img.height < 1)
        throw DimensionError("resize: empty source image");
    Image out(out_w, out_h);

    struct Tap
    {
        Index i0, i1;
        double f;
    };
    const auto taps = [](Index in, Index n) {
        std::vector<Tap> t(static_cast<std::size_t>(n));
        const double scale = static_cast<double>(in) / static_cast<double>(n);
        for (Index d = 0; d < n; ++d) {
            const double s = std::clamp((static_cast<double>(d) + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
            const Index i0 = static_cast<Index>(std::floor(s));
            t[static_cast<std::size_t>(d)] = {i0, std::min(i0 + 1, in - 1), s - static_cast<double>(i0)};
        }
        return t;
    };
    const auto tx = taps(img.width, out_w);
    const auto ty = taps(img.height, out_h);

    for (Index y = 0; y < out_h; ++y) {
        const Tap& vy = ty[static_cast<std::size_t>(y)];
        for (Index x = 0; x < out_w; ++x) {
            const Tap& vx = tx[static_cast<std::size_t>(x)];
            for (Index c = 0; c < 3; ++c) {
                const double top = img.at(vx.i0, vy.i0, c) * (1.0 - vx.f) + img.at(vx.i1, vy.i0, c) * vx.f;
                const double bot = img.at(vx.i0, vy.i1, c) * (1.0 - vx.f) + img.at(vx.i1, vy.i1, c) * vx.f;
                const double v = top * (1.0 - vy.f) + bot * vy.f;
                out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    }
    return out;
}

Image flip_horizontal(const Image& img)
{
    Image out = img;
    for (Index y = 0; y < img.height; ++y)
        for (Index x = 0; x < img.width; ++x)
            for (Index c = 0; c < 3; ++c)
                out.at(img.width - 1 - x, y, c) = img.at(x, y, c);
    return out;
}

std::vector<Image> augment(const Image& img)
{
    if (img.width != kModelSide || img.height != kModelSide)
        throw DimensionError("augment: expected a 224x224x3 image, got " + std::to_string(img.width) + "x" +
                             std::to_string(img.height) + "x3");
    constexpr Index o = kModelSide - kCornerCrop;          // 38
    constexpr Index co = (kModelSide - kCenterCrop) / 2;   // 38
    static_assert(o == 38 && co == 38);

    const auto views = [&](const Image& base, std::vector<Image>& out) {
        out.push_back(base);
        for (auto [x, y] : {std::pair<Index, Index>{0, 0}, {o, 0}, {0, o}, {o, o}})
            out.push_back(resize_bilinear(crop(base, x, y, kCornerCrop, kCornerCrop), kModelSide));
        out.push_back(resize_bilinear(crop(base, co, co, kCenterCrop, kCenterCrop), kModelSide));
    };
    std::vector<Image> out;
    out.reserve(12);
    views(img, out);
    views(flip_horizontal(img), out);
    return out;
}

Tensor to_tensor(const Image& img)
{
    Tensor t(Shape{img.height, img.width, 3});
    for (std::size_t i = 0; i < img.data.size(); ++i)
        t[static_cast<Index>(i)] = static_cast<float>(img.data[i]) / 255.0f;
    return t;
}

// ---------------------------------------------------------------------------
// datasets

DatasetSplit split_dataset(const std::vector<LabeledExample>& examples, std::uint64_t seed, double train_fraction)
{
    if (examples.size() < 2)
        throw ArgumentError("split needs at least two examples, got " + std::to_string(examples.size()));
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ArgumentError("train fraction must be in (0, 1)");

    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < examples.size(); ++i)
        groups[examples[i].source_id].push_back(i);
    if (groups.size() < 2)
        throw ArgumentError("split needs at least two distinct source ids");

    std::vector<const std::vector<std::size_t>*> order;
    for (const auto& [_, members] : groups)
        order.push_back(&members);
    Rng rng(seed);
    rng.shuffle(std::span(order));

    const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(order.size())));
    DatasetSplit split;
    split.seed = seed;
    for (std::size_t g = 0; g < order.size(); ++g)
        for (auto i : *order[g])
            (g < n_train ? split.train : split.test).push_back(examples[i]);
    return split;
}

std::vector<LabeledExample> augment_examples(const std::vector<LabeledExample>& examples)
{
    std::vector<LabeledExample> out;
    out.reserve(examples.size() * 12);
    for (const auto& e : examples)
        for (auto& view : augment(e.image))
            out.push_back({std::move(view), e.label, e.source_id});
    return out;
}

FaceBox BoxTableDetector::detect(const Image& img, const std::string& source_id) const
{
    const auto it = boxes_.find(source_id);
    return it == boxes_.end() ? FaceBox{0, 0, img.width, img.height} : it->second;
}

std::map<std::string, FaceBox> parse_boxes(const std::string& text)
{
    std::map<std::string, FaceBox> out;
    std::istringstream in(text);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (const auto hash = line.find('#'); hash != std::string::npos)
            line.resize(hash);
        std::istringstream ls(line);
        std::string id;
        if (!(ls >> id))
            continue;
        FaceBox b;
        std::string rest;
        if (!(ls >> b.x >> b.y >> b.w >> b.h) || (ls >> rest))
            throw FormatError("boxes line " + std::to_string(n) + ": expected 'source_id x y w h'");
        if (b.w < 1 || b.h < 1 || b.x < 0 || b.y < 0)
            throw FormatError("boxes line " + std::to_string(n) + ": box must have non-negative origin and positive size");
        if (!out.emplace(id, b).second)
            throw FormatError("boxes line " + std::to_string(n) + ": duplicate source id '" + id + "'");
    }
    return out;
}

std::map<std::string, FaceBox> load_boxes(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open boxes file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_boxes(ss.str());
}

Dataset load_dataset(const std::filesystem::path& dir, Index side, const FaceDetector& detector)
{
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir))
        throw NotFoundError("dataset directory " + dir.string() + " does not exist");

    Dataset ds;
    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_directory())
            class_dirs.push_back(entry.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty())
        throw ArgumentError("dataset " + dir.string() + " has no class directories");

    for (std::size_t label = 0; label < class_dirs.size(); ++label) {
        const auto& cdir = class_dirs[label];
        ds.classes.push_back(cdir.filename().string());
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(cdir))
            files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        std::size_t loaded = 0;
        for (const auto& f : files) {
            if (!fs::is_regular_file(f) || f.extension() != ".ppm") {
                ds.warnings.push_back("skipping unsupported file " + f.string());
                continue;
            }
            try {
                const Image img = read_ppm(f);
                const std::string id = f.stem().string();
                ds.examples.push_back({resize_bilinear(crop_face(img, detector.detect(img, id)), side),
                                       static_cast<Index>(label), id});
                ++loaded;
            } catch (const Error& e) {
                ds.warnings.push_back("skipping " + f.string() + ": " + e.what());
            }
        }
        if (loaded == 0)
            ds.warnings.push_back("class '" + ds.classes.back() + "' has no images");
    }
    return ds;
}

const std::vector<std::string>& emotion_names()
{
    static const std::vector<std::string> names{"anger", "disgust", "fear", "happiness", "sadness", "surprise",
                                                "neutral"};
    return names;
}

// ---------------------------------------------------------------------------
// synthetic patterns

Image synthesize_pattern(Index label, Index side, Rng& rng)
{
    if (label < 0 || label >= 7)
        throw IndexError("synthetic pattern label must be in [0, 7), got " + std::to_string(label));
    const double s = static_cast<double>(side);

    // background and foreground differ in brightness by at least 90 levels
    const double bg = rng.uniform(0.0, 255.0);
    const double gap = rng.uniform(90.0, 160.0);
    const double fg = bg + gap <= 255.0 ? bg + gap : bg - gap;
    double tint[2][3];
    for (auto& t : tint)
        for (double& v : t)
            v = rng.uniform(-25.0, 25.0);

    const double period = rng.uniform(s / 8.0, s / 4.0);
    const double phase = rng.uniform(0.0, period);
    const double cx = rng.uniform(0.35 * s, 0.65 * s), cy = rng.uniform(0.35 * s, 0.65 * s);
    const double radius = rng.uniform(0.2 * s, 0.32 * s);
    const double thick = rng.uniform(0.08 * s, 0.14 * s);

    const auto on = [&](double x, double y) -> bool {
        const auto stripe = [&](double t) { return std::fmod(t + phase + 4.0 * s, period) < period / 2.0; };
        switch (label) {
        case 0:
            return stripe(y);
        case 1:
            return stripe(x);
        case 2:
            return stripe((x + y) / std::sqrt(2.0));
        case 3:
            return stripe(x) != stripe(y);
        case 4:
            return std::hypot(x - cx, y - cy) < radius;
        case 5: {
            const double d = std::hypot(x - cx, y - cy);
            return d < radius && d > radius - thick;
        }
        default:
            return std::abs(x - cx) < thick / 2.0 || std::abs(y - cy) < thick / 2.0;
        }
    };

    Image img(side, side);
    for (Index y = 0; y < side; ++y)
        for (Index x = 0; x < side; ++x) {
            const int which = on(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5) ? 1 : 0;
            const double base = which ? fg : bg;
            for (Index c = 0; c < 3; ++c) {
                const double v = base + tint[which][c] + rng.uniform(-20.0, 20.0);
                img.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    return img;
}

std::vector<LabeledExample> synthesize_dataset(Index per_class, Index side, std::uint64_t seed, Index classes)
{
    if (per_class < 1 || classes < 1 || classes > 7)
        throw ArgumentError("synthetic dataset needs per_class >= 1 and 1..7 classes");
    Rng rng(seed);
    std::vector<LabeledExample> out;
    for (Index i = 0; i < per_class; ++i)
        for (Index c = 0; c < classes; ++c) {
            char id[48];
            std::snprintf(id, sizeof id, "s%02lld_%04lld", static_cast<long long>(c), static_cast<long long>(i));
            out.push_back({synthesize_pattern(c, side, rng), c, id});
        }
    return out;
}

void write_dataset(const std::vector<LabeledExample>& examples, const std::filesystem::path& dir)
{
    namespace fs = std::filesystem;
    const auto& names = emotion_names();
    for (const auto& e : examples) {
        const std::string cls = std::to_string(e.label) + "_" +
                                (e.label < static_cast<Index>(names.size()) ? names[static_cast<std::size_t>(e.label)]
                                                                            : "class");
        fs::create_directories(dir / cls);
        write_ppm(e.image, dir / cls / (e.source_id + ".ppm"));
    }
}

} // namespace resmo
