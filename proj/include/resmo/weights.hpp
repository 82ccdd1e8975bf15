#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "resmo/graph.hpp"
#include "resmo/random.hpp"
#include "resmo/tensor.hpp"

namespace resmo {

/// Named parameter tensors of one layer, e.g. {"kernel", "bias"}.
using ParamSet = std::map<std::string, Tensor, std::less<>>;

/// Layer name -> parameter tensors.
class WeightStore
{
public:
    bool contains(std::string_view layer) const { return layers_.find(layer) != layers_.end(); }
    const ParamSet& at(std::string_view layer) const;
    ParamSet& at(std::string_view layer);
    const Tensor& get(std::string_view layer, std::string_view param) const;
    Tensor& get(std::string_view layer, std::string_view param);
    void set(const std::string& layer, const std::string& param, Tensor t) { layers_[layer][param] = std::move(t); }

    std::size_t size() const noexcept { return layers_.size(); }
    const std::map<std::string, ParamSet, std::less<>>& layers() const noexcept { return layers_; }

    /// Total scalar count over every stored tensor.
    Index scalar_count() const;

    friend bool operator==(const WeightStore& a, const WeightStore& b) { return a.layers_ == b.layers_; }

private:
    std::map<std::string, ParamSet, std::less<>> layers_;
};

/// Whether a parameter is trained by gradient descent (BN running
/// statistics are stored but not learnable).
bool is_learnable(std::string_view param);

/// Expected parameter names and shapes for layer i of `g`, in a fixed order.
std::vector<std::pair<std::string, Shape>> param_shapes(const ModelGraph& g, std::size_t i);

/// He-uniform kernels (limit sqrt(6 / fan_in)), zero biases, identity BN.
WeightStore init_weights(const ModelGraph& g, std::uint64_t seed);

/// All-zero kernels and biases, identity BN.
WeightStore zero_weights(const ModelGraph& g);

/// Throws ValidationError unless every parameterized layer has exactly the
/// expected tensors with matching shapes and finite values.
void validate_weights(const ModelGraph& g, const WeightStore& w);

/// Binary RMNW v1 file, little-endian.
void save_weights(const WeightStore& w, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_weights(const WeightStore& w);

/// Throws BadMagicError, VersionError, FormatError or TruncationError.
WeightStore load_weights(const std::filesystem::path& path);
WeightStore decode_weights(const std::vector<std::uint8_t>& bytes);

/// load_weights followed by a check against `g`; ShapeMismatchError names the layer.
WeightStore load_weights(const std::filesystem::path& path, const ModelGraph& g);
void check_weights_match(const ModelGraph& g, const WeightStore& w);

} // namespace resmo
