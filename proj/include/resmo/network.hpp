#pragma once

#include <vector>

#include "resmo/graph.hpp"
#include "resmo/layers.hpp"
#include "resmo/weights.hpp"

namespace resmo {

/// Inference pass. `input` is one sample (H, W, C) or a batch (N, H, W, C);
/// the result is (num_classes) or (N, num_classes). Batchnorm uses running
/// statistics and dropout is the identity. Weights are validated first.
Tensor forward_model(const ModelGraph& g, const WeightStore& w, const Tensor& input);

/// Activations and caches recorded by a training-mode forward pass.
struct Tape
{
    std::vector<Tensor> outputs;                     // per layer, batched
    std::vector<BatchNormCache<float>> bn;           // per layer, valid for batchnorm layers
    std::vector<Tensor> masks;                       // per layer, set for dropout layers
};

/// Training pass over a batch (N, H, W, C): batch statistics in batchnorm
/// (running statistics in `w` are updated) and active dropout.
Tape forward_train(const ModelGraph& g, WeightStore& w, const Tensor& batch, Rng& rng);

struct BackwardResult
{
    WeightStore grads; ///< learnable parameters only
    double loss = 0.0; ///< mean cross-entropy over the batch
};

/// Mean softmax cross-entropy of the tape's logits against `labels` and its
/// gradient with respect to every learnable parameter.
BackwardResult backward(const ModelGraph& g, const WeightStore& w, const Tape& tape, const std::vector<Index>& labels);

/// Parameter views for the tensor-core ops.
ConvParams<float> conv_params(const ModelGraph& g, const WeightStore& w, std::size_t i);
DepthwiseParams<float> depthwise_params(const ModelGraph& g, const WeightStore& w, std::size_t i);
BatchNormParams<float> batchnorm_params(const ModelGraph& g, const WeightStore& w, std::size_t i);
DenseParams<float> dense_params(const ModelGraph& g, const WeightStore& w, std::size_t i);

} // namespace resmo
