#include "resmo/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "resmo/network.hpp"

namespace resmo {

void TrainConfig::validate() const
{
    if (epochs < 1)
        throw ConfigError("epochs must be >= 1, got " + std::to_string(epochs));
    if (batch_size < 1)
        throw ConfigError("batch size must be >= 1, got " + std::to_string(batch_size));
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("learning rate must be finite and non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0))
        throw ConfigError("momentum must be in [0, 1)");
    if (dropout_rate && !(*dropout_rate >= 0.0 && *dropout_rate < 1.0))
        throw ConfigError("dropout rate must be in [0, 1)");
}

// ---------------------------------------------------------------------------

ConfusionMatrix::ConfusionMatrix(Index classes) : n_(classes)
{
    if (classes < 1)
        throw ArgumentError("confusion matrix needs at least one class");
    counts_.assign(static_cast<std::size_t>(classes * classes), 0);
}

void ConfusionMatrix::add(Index truth, Index predicted)
{
    if (truth < 0 || truth >= n_ || predicted < 0 || predicted >= n_)
        throw IndexError("confusion entry (" + std::to_string(truth) + ", " + std::to_string(predicted) +
                         ") outside " + std::to_string(n_) + " classes");
    ++counts_[static_cast<std::size_t>(truth * n_ + predicted)];
}

Index ConfusionMatrix::at(Index truth, Index predicted) const
{
    if (truth < 0 || truth >= n_ || predicted < 0 || predicted >= n_)
        throw IndexError("confusion index out of range");
    return counts_[static_cast<std::size_t>(truth * n_ + predicted)];
}

Index ConfusionMatrix::row_sum(Index truth) const
{
    Index s = 0;
    for (Index p = 0; p < n_; ++p)
        s += at(truth, p);
    return s;
}

Index ConfusionMatrix::total() const
{
    return std::accumulate(counts_.begin(), counts_.end(), Index{0});
}

Index ConfusionMatrix::trace() const
{
    Index s = 0;
    for (Index i = 0; i < n_; ++i)
        s += at(i, i);
    return s;
}

double ConfusionMatrix::accuracy() const
{
    const Index t = total();
    if (t == 0)
        throw ArgumentError("accuracy of an empty confusion matrix");
    return static_cast<double>(trace()) / static_cast<double>(t);
}

std::vector<std::vector<double>> ConfusionMatrix::normalized() const
{
    std::vector<std::vector<double>> out(static_cast<std::size_t>(n_), std::vector<double>(static_cast<std::size_t>(n_)));
    for (Index t = 0; t < n_; ++t) {
        const Index rs = row_sum(t);
        if (rs == 0)
            continue;
        for (Index p = 0; p < n_; ++p)
            out[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)] =
                static_cast<double>(at(t, p)) / static_cast<double>(rs);
    }
    return out;
}

std::string ConfusionMatrix::format(const std::vector<std::string>& names) const
{
    const auto label = [&](Index i) {
        return i < static_cast<Index>(names.size()) ? names[static_cast<std::size_t>(i)] : std::to_string(i);
    };
    std::size_t width = 6;
    for (Index i = 0; i < n_; ++i)
        width = std::max(width, label(i).size() + 1);
    const auto norm = normalized();
    std::ostringstream out;
    char cell[64];
    out << std::string(width, ' ');
    for (Index p = 0; p < n_; ++p) {
        std::snprintf(cell, sizeof cell, "%*s", static_cast<int>(width), label(p).c_str());
        out << cell;
    }
    out << '\n';
    for (Index t = 0; t < n_; ++t) {
        std::snprintf(cell, sizeof cell, "%-*s", static_cast<int>(width), label(t).c_str());
        out << cell;
        for (Index p = 0; p < n_; ++p) {
            std::snprintf(cell, sizeof cell, "%*.2f", static_cast<int>(width),
                          norm[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)]);
            out << cell;
        }
        out << "   (n=" << row_sum(t) << ")\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------

Index argmax(const float* values, Index n)
{
    Index best = 0;
    for (Index i = 1; i < n; ++i)
        if (values[i] > values[best])
            best = i;
    return best;
}

Tensor make_batch(const std::vector<LabeledExample>& examples, const std::vector<std::size_t>& order, std::size_t begin,
                  std::size_t end)
{
    if (end <= begin)
        throw ArgumentError("empty batch");
    const Image& first = examples[order[begin]].image;
    const Index h = first.height, w = first.width;
    const Index per = h * w * 3;
    Tensor batch(Shape{static_cast<Index>(end - begin), h, w, 3});
    for (std::size_t i = begin; i < end; ++i) {
        const Image& img = examples[order[i]].image;
        if (img.width != w || img.height != h)
            throw DimensionError("batch mixes image sizes " + std::to_string(w) + "x" + std::to_string(h) + " and " +
                                 std::to_string(img.width) + "x" + std::to_string(img.height));
        float* dst = batch.data() + static_cast<Index>(i - begin) * per;
        for (Index k = 0; k < per; ++k)
            dst[k] = static_cast<float>(img.data[static_cast<std::size_t>(k)]) / 255.0f;
    }
    return batch;
}

namespace {

constexpr std::size_t kEvalBatch = 64;

void check_labels(const ModelGraph& g, const std::vector<LabeledExample>& examples)
{
    for (const auto& e : examples)
        if (e.label < 0 || e.label >= g.num_classes())
            throw ArgumentError("example '" + e.source_id + "' has label " + std::to_string(e.label) +
                                " but the model has " + std::to_string(g.num_classes()) + " classes");
}

double xent(const float* probs, Index label)
{
    // probabilities are clamped so a confident mistake stays finite
    return -std::log(std::max(static_cast<double>(probs[label]), 1e-12));
}

} // namespace

Evaluation evaluate(const ModelGraph& g, const WeightStore& w, const std::vector<LabeledExample>& examples)
{
    if (examples.empty())
        throw ArgumentError("cannot evaluate on an empty set");
    check_labels(g, examples);
    const Index k = g.num_classes();
    Evaluation ev;
    ev.confusion = ConfusionMatrix(k);
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    double loss = 0.0;
    for (std::size_t b = 0; b < examples.size(); b += kEvalBatch) {
        const std::size_t e = std::min(examples.size(), b + kEvalBatch);
        const Tensor probs = forward_model(g, w, make_batch(examples, order, b, e));
        for (std::size_t i = b; i < e; ++i) {
            const float* row = probs.data() + static_cast<Index>(i - b) * k;
            ev.confusion.add(examples[i].label, argmax(row, k));
            loss += xent(row, examples[i].label);
        }
    }
    ev.accuracy = ev.confusion.accuracy();
    ev.loss = loss / static_cast<double>(examples.size());
    return ev;
}

ModelGraph with_dropout(const ModelGraph& g, double rate)
{
    auto layers = g.layers();
    for (auto& s : layers)
        if (s.kind == LayerKind::Dropout)
            s.rate = rate;
    return ModelGraph::from_layers(std::move(layers), g.name());
}

TrainResult train(const ModelGraph& g, const DatasetSplit& split, const TrainConfig& cfg, const EpochCallback& on_epoch)
{
    return train(g, init_weights(g, cfg.seed), split, cfg, on_epoch);
}

TrainResult train(const ModelGraph& graph, WeightStore initial, const DatasetSplit& split, const TrainConfig& cfg,
                  const EpochCallback& on_epoch)
{
    cfg.validate();
    if (split.train.empty())
        throw ArgumentError("training set is empty");
    const ModelGraph g = cfg.dropout_rate ? with_dropout(graph, *cfg.dropout_rate) : graph;
    check_labels(g, split.train);
    check_labels(g, split.test);

    TrainResult result{std::move(initial), {}, g};
    WeightStore& w = result.weights;
    validate_weights(g, w);

    WeightStore velocity;
    for (const auto& [layer, set] : w.layers())
        for (const auto& [param, t] : set)
            if (is_learnable(param))
                velocity.set(layer, param, Tensor(t.shape()));

    // batch order and dropout masks come from one stream derived from the seed
    Rng rng(cfg.seed ^ 0x5DEECE66DULL);
    const Index k = g.num_classes();
    const std::size_t n = split.train.size();
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    std::vector<std::size_t> order(n);
    std::vector<Index> labels;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(std::span(order));
        double loss_sum = 0.0;
        Index correct = 0;
        for (std::size_t b = 0, batch_no = 1; b < n; b += bs, ++batch_no) {
            const std::size_t e = std::min(n, b + bs);
            labels.clear();
            for (std::size_t i = b; i < e; ++i)
                labels.push_back(split.train[order[i]].label);

            const Tape tape = forward_train(g, w, make_batch(split.train, order, b, e), rng);
            const BackwardResult br = backward(g, w, tape, labels);
            if (!std::isfinite(br.loss))
                throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(batch_no));
            loss_sum += br.loss * static_cast<double>(e - b);
            const Tensor& probs = tape.outputs.back();
            for (std::size_t i = 0; i < e - b; ++i)
                correct += argmax(probs.data() + static_cast<Index>(i) * k, k) == labels[i];

            const auto lr = static_cast<float>(cfg.learning_rate);
            const auto mu = static_cast<float>(cfg.momentum);
            for (auto& [layer, set] : velocity.layers())
                for (const auto& [param, _] : set) {
                    Tensor& v = velocity.get(layer, param);
                    const Tensor& grad = br.grads.get(layer, param);
                    v.storage() = mu * v.storage() - lr * grad.storage();
                    w.get(layer, param).storage() += v.storage();
                }
            for (const auto& [layer, set] : w.layers())
                for (const auto& [param, t] : set)
                    if (!t.all_finite())
                        throw DivergenceError("non-finite weights in '" + layer + "." + param + "' after epoch " +
                                              std::to_string(epoch) + ", batch " + std::to_string(batch_no));
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(n);
        rec.train_acc = static_cast<double>(correct) / static_cast<double>(n);
        if (split.test.empty()) {
            rec.test_loss = rec.test_acc = std::numeric_limits<double>::quiet_NaN();
        } else {
            const Evaluation ev = evaluate(g, w, split.test);
            rec.test_loss = ev.loss;
            rec.test_acc = ev.accuracy;
        }
        result.history.push_back(rec);
        if (on_epoch)
            on_epoch(rec);
    }
    return result;
}

// ---------------------------------------------------------------------------

std::string format_history(const TrainHistory& h)
{
    std::string out = "epoch,train_loss,train_acc,test_loss,test_acc\n";
    char line[160];
    for (const auto& r : h) {
        std::snprintf(line, sizeof line, "%d,%.6g,%.6g,%.6g,%.6g\n", r.epoch, r.train_loss, r.train_acc, r.test_loss,
                      r.test_acc);
        out += line;
    }
    return out;
}

TrainHistory parse_history(const std::string& csv)
{
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line) || line != "epoch,train_loss,train_acc,test_loss,test_acc")
        throw FormatError("history: missing or wrong header");
    TrainHistory h;
    std::size_t n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty())
            continue;
        EpochRecord r;
        char tail = 0;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf%c", &r.epoch, &r.train_loss, &r.train_acc, &r.test_loss,
                        &r.test_acc, &tail) != 5)
            throw FormatError("history line " + std::to_string(n) + ": expected 5 comma-separated numbers");
        h.push_back(r);
    }
    return h;
}

void export_history(const TrainHistory& h, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw IoError("cannot write history file " + path.string());
    out << format_history(h);
    if (!out.flush())
        throw IoError("failed writing history file " + path.string());
}

} // namespace resmo
