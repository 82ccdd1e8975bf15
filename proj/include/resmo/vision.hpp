#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "resmo/random.hpp"
#include "resmo/tensor.hpp"

namespace resmo {

/// 8-bit RGB image, row-major, interleaved channels.
struct Image
{
    Index width = 0;
    Index height = 0;
    std::vector<std::uint8_t> data;

    Image() = default;
    Image(Index w, Index h, std::uint8_t fill = 0);

    static constexpr Index channels = 3;

    std::uint8_t& at(Index x, Index y, Index c) { return data[static_cast<std::size_t>((y * width + x) * 3 + c)]; }
    std::uint8_t at(Index x, Index y, Index c) const
    {
        return data[static_cast<std::size_t>((y * width + x) * 3 + c)];
    }

    friend bool operator==(const Image&, const Image&) = default;
};

struct FaceBox
{
    Index x = 0, y = 0, w = 0, h = 0;
    friend bool operator==(const FaceBox&, const FaceBox&) = default;
};

/// Binary PPM (P6, maxval 255). Throws IoError or FormatError.
Image read_ppm(const std::filesystem::path& path);
Image decode_ppm(const std::string& bytes);
void write_ppm(const Image& img, const std::filesystem::path& path);
std::string encode_ppm(const Image& img);

/// Rectangle copied verbatim; throws RangeError when it leaves the image.
Image crop(const Image& img, Index x, Index y, Index w, Index h);

/// Square ROI of side max(w, h) centred on the box, shifted (and if
/// necessary shrunk) to stay inside the image. Throws RangeError when the
/// box is empty or out of bounds.
Image crop_face(const Image& img, const FaceBox& box);
/// The square actually cut by crop_face, as a box.
FaceBox square_roi(const Image& img, const FaceBox& box);

/// Bilinear resampling with half-pixel centres and edge clamping.
Image resize_bilinear(const Image& img, Index out_w, Index out_h);
inline Image resize_bilinear(const Image& img, Index side) { return resize_bilinear(img, side, side); }

/// Mirror around the vertical axis.
Image flip_horizontal(const Image& img);

constexpr Index kModelSide = 224;
constexpr Index kCornerCrop = 186;
constexpr Index kCenterCrop = 148;

/// The twelve training views of a 224x224 image, in this order:
///   0 original, 1-4 corner crops 186x186 at (0,0) (38,0) (0,38) (38,38),
///   5 centre crop 148x148 at (38,38), 6 mirrored original,
///   7-11 the same five crops cut from the mirrored image.
/// Every crop is resized back to 224x224. Throws DimensionError otherwise.
std::vector<Image> augment(const Image& img);

/// (H, W, 3) tensor with values scaled to [0, 1].
Tensor to_tensor(const Image& img);

struct LabeledExample
{
    Image image;
    Index label = 0;
    std::string source_id;
};

struct DatasetSplit
{
    std::vector<LabeledExample> train;
    std::vector<LabeledExample> test;
    std::uint64_t seed = 0;
};

/// Groups examples by source id, shuffles the sorted ids with a seeded
/// Fisher-Yates pass and gives the first floor(fraction * groups) ids to
/// train. Throws ArgumentError for fewer than two examples or two sources.
DatasetSplit split_dataset(const std::vector<LabeledExample>& examples, std::uint64_t seed,
                           double train_fraction = 0.8);

/// Replaces every example by its twelve augment() views (same label and source).
std::vector<LabeledExample> augment_examples(const std::vector<LabeledExample>& examples);

/// Face detector plug-in point.
class FaceDetector
{
public:
    virtual ~FaceDetector() = default;
    virtual FaceBox detect(const Image& img, const std::string& source_id) const = 0;
};

/// Whole frame as the face.
class FullFrameDetector : public FaceDetector
{
public:
    FaceBox detect(const Image& img, const std::string&) const override { return {0, 0, img.width, img.height}; }
};

/// Boxes looked up by source id; unknown ids fall back to the full frame.
class BoxTableDetector : public FaceDetector
{
public:
    explicit BoxTableDetector(std::map<std::string, FaceBox> boxes) : boxes_(std::move(boxes)) {}
    FaceBox detect(const Image& img, const std::string& source_id) const override;

private:
    std::map<std::string, FaceBox> boxes_;
};

/// Lines `source_id x y w h`; `#` comments. Throws FormatError with a line number.
std::map<std::string, FaceBox> parse_boxes(const std::string& text);
std::map<std::string, FaceBox> load_boxes(const std::filesystem::path& path);

struct Dataset
{
    std::vector<std::string> classes;
    std::vector<LabeledExample> examples;
    std::vector<std::string> warnings;
};

/// One subdirectory per class, labels by sorted directory name. Each .ppm is
/// cropped with `detector` and resized to side x side; the source id is the
/// file stem. Other files and unreadable images become warnings. Throws
/// NotFoundError / ArgumentError when the directory or classes are missing.
Dataset load_dataset(const std::filesystem::path& dir, Index side = kModelSide,
                     const FaceDetector& detector = FullFrameDetector{});

/// Names used for the seven emotion classes, in output order.
const std::vector<std::string>& emotion_names();

/// Procedural stand-in for face photographs: seven classes of distinct
/// geometric patterns with random placement, scale, colours and noise.
Image synthesize_pattern(Index label, Index side, Rng& rng);
std::vector<LabeledExample> synthesize_dataset(Index per_class, Index side, std::uint64_t seed, Index classes = 7);
/// Writes a synthesized set in load_dataset layout ("0_anger", "1_disgust", ...).
void write_dataset(const std::vector<LabeledExample>& examples, const std::filesystem::path& dir);

} // namespace resmo
