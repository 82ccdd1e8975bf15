#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "resmo/layers.hpp"
#include "resmo/tensor.hpp"

namespace resmo {

enum class LayerKind {
    Input,
    Conv,
    Depthwise,
    Pointwise,
    BatchNorm,
    Relu,
    AvgPool,
    MaxPool,
    Dense,
    Dropout,
    Softmax,
    Concat,
    Add,
    Flatten,
};

std::string_view to_string(LayerKind kind);
std::optional<LayerKind> parse_layer_kind(std::string_view text);

/// One node of a layer graph. Only the hyperparameters that apply to `kind`
/// are meaningful:
///   input          h, w, c
///   conv           k, stride, padding, out
///   depthwise      k, stride, padding
///   pointwise      out (k is always 1)
///   avgpool/maxpool  k (window), stride, padding
///   dense          out (units), activation
///   batchnorm      epsilon, momentum
///   dropout        rate
struct LayerSpec
{
    std::string name;
    LayerKind kind = LayerKind::Relu;
    int k = 1;
    int stride = 1;
    int padding = 0;
    Index out = 0;
    Index h = 0, w = 0, c = 0;
    Activation activation = Activation::None;
    double epsilon = 1e-5;
    double momentum = 0.99;
    double rate = 0.5;
    std::vector<std::string> inputs;
    std::string block; ///< owning block label, e.g. "mobile1"; empty when ungrouped

    bool has_params() const;
};

/// A validated, topologically ordered layer graph with per-sample output
/// shapes ((H, W, C) for feature maps, (n) after flatten/dense).
class ModelGraph
{
public:
    /// Validates `layers` (in the given order, which must be topological)
    /// and propagates shapes. Throws GraphError on any inconsistency.
    static ModelGraph from_layers(std::vector<LayerSpec> layers, std::string name = "model");

    const std::string& name() const noexcept { return name_; }
    void set_name(std::string name) { name_ = std::move(name); }

    const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
    std::size_t size() const noexcept { return layers_.size(); }
    const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }
    std::size_t index_of(std::string_view name) const;
    bool contains(std::string_view name) const;

    /// Per-sample output shape of layer i.
    const Shape& output_shape(std::size_t i) const { return shapes_.at(i); }
    /// Per-sample shape flowing into layer i (first input; empty for the input node).
    Shape input_shape_of(std::size_t i) const;
    /// Indices of the layers feeding layer i.
    const std::vector<std::size_t>& inputs_of(std::size_t i) const { return edges_.at(i); }

    Shape input_shape() const { return shapes_.front(); }
    Index num_classes() const { return shapes_.back()[0]; }

    /// Number of distinct Mobile / Residual block labels present.
    int mobile_depth() const { return count_blocks("mobile"); }
    int residual_depth() const { return count_blocks("residual"); }
    int count_blocks(std::string_view prefix) const;

private:
    std::string name_;
    std::vector<LayerSpec> layers_;
    std::vector<Shape> shapes_;
    std::vector<std::vector<std::size_t>> edges_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

/// Shape of `spec`'s output given its inputs' per-sample shapes.
Shape infer_output_shape(const LayerSpec& spec, const std::vector<Shape>& inputs);

/// Text graph format, one layer per line:
///   name kind key=value ... <- input1,input2
/// `#` starts a comment. The input node carries h, w and c.
ModelGraph parse_graph(std::string_view text, std::string name = "model");
ModelGraph load_graph(const std::filesystem::path& path);
std::string format_graph(const ModelGraph& graph);
void save_graph(const ModelGraph& graph, const std::filesystem::path& path);

/// Incremental graph construction with eager shape checking.
class GraphBuilder
{
public:
    GraphBuilder(Index height, Index width, Index channels, std::string input_name = "input");

    /// Appends a layer and returns its name. Throws GraphError when its
    /// inputs do not exist or their shapes are inconsistent.
    const std::string& add(LayerSpec spec);

    Shape shape_of(std::string_view name) const;
    const std::string& last() const { return layers_.back().name; }
    const std::vector<LayerSpec>& layers() const { return layers_; }

    ModelGraph build(std::string name = "model") const;

private:
    std::vector<LayerSpec> layers_;
    std::vector<Shape> shapes_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

} // namespace resmo
