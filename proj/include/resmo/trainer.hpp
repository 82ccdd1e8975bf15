#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "resmo/graph.hpp"
#include "resmo/vision.hpp"
#include "resmo/weights.hpp"

namespace resmo {

struct TrainConfig
{
    int epochs = 150;
    Index batch_size = 128;
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    std::optional<double> dropout_rate; ///< overrides the graph's dropout layers when set

    void validate() const;
};

struct EpochRecord
{
    int epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_loss = 0.0;
    double test_acc = 0.0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

using TrainHistory = std::vector<EpochRecord>;

/// Rows are true classes, columns predictions.
class ConfusionMatrix
{
public:
    explicit ConfusionMatrix(Index classes);

    Index classes() const noexcept { return n_; }
    void add(Index truth, Index predicted);
    Index at(Index truth, Index predicted) const;
    Index row_sum(Index truth) const;
    Index total() const;
    Index trace() const;
    double accuracy() const;
    /// Each non-empty row divided by its sum; empty rows stay zero.
    std::vector<std::vector<double>> normalized() const;
    std::string format(const std::vector<std::string>& names = {}) const;

private:
    Index n_;
    std::vector<Index> counts_;
};

struct Evaluation
{
    double accuracy = 0.0;
    double loss = 0.0; ///< mean cross-entropy
    ConfusionMatrix confusion{1};
};

/// Index of the largest value; ties go to the lowest index.
Index argmax(const float* values, Index n);

/// Stacks examples [begin, end) into an (N, side, side, 3) batch.
Tensor make_batch(const std::vector<LabeledExample>& examples, const std::vector<std::size_t>& order, std::size_t begin,
                  std::size_t end);

/// Inference-mode accuracy, loss and confusion matrix. Throws ArgumentError
/// on an empty set or a label outside the model's classes.
Evaluation evaluate(const ModelGraph& g, const WeightStore& w, const std::vector<LabeledExample>& examples);

struct TrainResult
{
    WeightStore weights;
    TrainHistory history;
    ModelGraph graph; ///< the graph trained (dropout override applied)
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch SGD with momentum on shuffled batches (the last partial batch
/// is used). Weights start from init_weights(g, seed). Test metrics are NaN
/// when the test set is empty. Throws DivergenceError on a non-finite loss.
TrainResult train(const ModelGraph& g, const DatasetSplit& split, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Same, continuing from given weights.
TrainResult train(const ModelGraph& g, WeightStore initial, const DatasetSplit& split, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// CSV `epoch,train_loss,train_acc,test_loss,test_acc`, 6 significant digits.
std::string format_history(const TrainHistory& h);
TrainHistory parse_history(const std::string& csv);
void export_history(const TrainHistory& h, const std::filesystem::path& path);

/// Copy of `g` with every dropout layer set to `rate`.
ModelGraph with_dropout(const ModelGraph& g, double rate);

} // namespace resmo
