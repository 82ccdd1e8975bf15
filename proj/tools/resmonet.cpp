// resmonet: command-line front end.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <pthread.h>
#include <signal.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "resmo/analyzer.hpp"
#include "resmo/errors.hpp"
#include "resmo/expert_eval.hpp"
#include "resmo/network.hpp"
#include "resmo/profiler.hpp"
#include "resmo/resmonet.hpp"
#include "resmo/server.hpp"
#include "resmo/trainer.hpp"

using namespace resmo;
namespace fs = std::filesystem;

namespace {

fs::path graph_sidecar(const fs::path& weights) { return fs::path(weights.string() + ".graph"); }

struct Model
{
    ModelGraph graph;
    WeightStore weights;
};

Model load_model(const fs::path& weights, const std::string& graph_path)
{
    const fs::path gp = graph_path.empty() ? graph_sidecar(weights) : fs::path(graph_path);
    if (!fs::exists(gp))
        throw NotFoundError("graph file " + gp.string() + " not found (pass --graph)");
    Model m{load_graph(gp), {}};
    m.weights = load_weights(weights, m.graph);
    return m;
}

ModelGraph choose_graph(const std::string& graph_path, bool desk, int m, int r)
{
    if (!graph_path.empty())
        return load_graph(graph_path);
    return assemble_resmonet(m, r, desk ? ResMoNetProfile::desk() : ResMoNetProfile::standard());
}

Image face_input(const fs::path& image, Index side)
{
    const Image img = read_ppm(image);
    return resize_bilinear(crop_face(img, FullFrameDetector{}.detect(img, image.stem().string())), side);
}

// analyze <graph...>
struct AnalyzeArgs
{
    std::vector<std::string> graphs;
    std::string convention = "per-weight";
    bool csv = false;
    bool layers = false;
};

int run_analyze(const AnalyzeArgs& a)
{
    const auto conv = parse_convention(a.convention);
    std::vector<EfficiencyReport> rows;
    for (const auto& g : a.graphs)
        rows.push_back(analyze(load_graph(g)));
    if (a.csv)
        std::cout << render_csv(rows);
    else
        std::cout << render_table(rows, conv);
    if (a.layers)
        for (const auto& r : rows)
            std::cout << '\n' << render_layers(r);
    return 0;
}

// train <dataset>
struct TrainArgs
{
    std::string dataset;
    std::string graph;
    bool desk = false;
    int m = 1, r = 1;
    int epochs = 150;
    Index batch = 128;
    double lr = 0.01;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    std::string boxes;
    std::string out = "resmonet.rmnw";
    std::string history;
    bool augment = true;
};

int run_train(const TrainArgs& a)
{
    const ModelGraph g = choose_graph(a.graph, a.desk, a.m, a.r);
    const auto in = g.input_shape();
    if (in[0] != in[1])
        throw DimensionError("model input must be square");
    std::unique_ptr<FaceDetector> det = std::make_unique<FullFrameDetector>();
    if (!a.boxes.empty())
        det = std::make_unique<BoxTableDetector>(load_boxes(a.boxes));
    const Dataset ds = load_dataset(a.dataset, in[0], *det);
    for (const auto& w : ds.warnings)
        std::cerr << "warning: " << w << '\n';
    if (static_cast<Index>(ds.classes.size()) != g.num_classes())
        throw ArgumentError("dataset has " + std::to_string(ds.classes.size()) + " classes, model has " +
                            std::to_string(g.num_classes()));
    DatasetSplit split = split_dataset(ds.examples, a.seed);
    std::cout << "dataset: " << ds.examples.size() << " images, " << split.train.size() << " train / "
              << split.test.size() << " test\n";
    if (a.augment && in[0] == kModelSide) {
        split.train = augment_examples(split.train);
        std::cout << "augmented training set: " << split.train.size() << " images\n";
    }

    TrainConfig cfg;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch;
    cfg.learning_rate = a.lr;
    cfg.momentum = a.momentum;
    cfg.seed = a.seed;
    const auto result = train(g, split, cfg, [&](const EpochRecord& e) {
        std::printf("epoch %d/%d  loss %.4f  acc %.4f  test_loss %.4f  test_acc %.4f\n", e.epoch, a.epochs,
                    e.train_loss, e.train_acc, e.test_loss, e.test_acc);
        std::fflush(stdout);
    });

    const fs::path out(a.out);
    save_weights(result.weights, out);
    save_graph(result.graph, graph_sidecar(out));
    const fs::path hist = a.history.empty() ? fs::path(a.out + ".history.csv") : fs::path(a.history);
    export_history(result.history, hist);
    if (!split.test.empty()) {
        const auto ev = evaluate(result.graph, result.weights, split.test);
        std::cout << "test confusion matrix:\n" << ev.confusion.format(ds.classes);
    }
    std::cout << "wrote " << out.string() << ", " << graph_sidecar(out).string() << ", " << hist.string() << '\n';
    return 0;
}

// graph: the built-in model as a graph file
int run_graph(bool desk, int m, int r, const std::string& out)
{
    const ModelGraph g = choose_graph("", desk, m, r);
    if (out.empty())
        std::cout << format_graph(g);
    else
        save_graph(g, out);
    return 0;
}

// infer <weights> <image>
int run_infer(const std::string& weights, const std::string& image, const std::string& graph, bool names)
{
    const Model m = load_model(weights, graph);
    const Index side = m.graph.input_shape()[0];
    const Tensor p = forward_model(m.graph, m.weights, to_tensor(face_input(image, side)));
    const auto& labels = emotion_names();
    for (Index i = 0; i < p.size(); ++i) {
        if (i)
            std::cout << ' ';
        if (names && i < static_cast<Index>(labels.size()))
            std::cout << labels[static_cast<std::size_t>(i)] << '=';
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.9f", static_cast<double>(p[i]));
        std::cout << buf;
    }
    std::cout << '\n';
    return 0;
}

// profile <weights>
struct ProfileArgs
{
    std::string weights;
    std::string graph;
    std::string image;
    int runs = 5;
    double duration = 10.0;
    std::string csv;
};

int run_profile(const ProfileArgs& a)
{
    const Model m = load_model(a.weights, a.graph);
    const Index side = m.graph.input_shape()[0];
    std::vector<Image> frames;
    if (!a.image.empty()) {
        frames.push_back(read_ppm(a.image));
    } else {
        Rng rng(1);
        for (Index c = 0; c < 7; ++c)
            frames.push_back(synthesize_pattern(c, side, rng));
    }
    ProfileConfig cfg;
    cfg.runs = a.runs;
    cfg.duration = std::chrono::duration<double>(a.duration);
    const auto rep = profile(make_model_runner(m.graph, m.weights, std::move(frames)), cfg);
    std::cout << rep.format();
    if (!a.csv.empty()) {
        Measured meas;
        meas.rte_s = rep.rte.rte_seconds;
        if (rep.mmu.supported)
            meas.mmu_mb = rep.mmu.peak_mb;
        std::ofstream out(a.csv);
        if (!out)
            throw IoError("cannot write " + a.csv);
        out << render_csv({analyze(m.graph, meas)});
    }
    return 0;
}

int run_serve(const std::string& config)
{
    const ServiceConfig cfg = config.empty() ? ServiceConfig{} : load_service_config(config);
    // block before any server thread exists so every thread inherits the mask
    sigset_t stop_signals;
    sigemptyset(&stop_signals);
    sigaddset(&stop_signals, SIGINT);
    sigaddset(&stop_signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);
    SessionServer server(cfg);
    const int port = server.start();
    std::cout << "listening on " << cfg.host << ':' << port << '\n' << std::flush;
    int sig = 0;
    sigwait(&stop_signals, &sig);
    server.stop();
    std::cout << "stopped\n";
    return 0;
}

int run_score(const std::string& csv, bool as_csv)
{
    const auto rep = evaluate_experts(load_expert_csv(csv));
    std::cout << (as_csv ? rep.format_csv() : rep.format_table());
    return 0;
}

const char* const kViewNames[] = {"original", "crop_tl", "crop_tr", "crop_bl", "crop_br", "crop_center"};

int run_augment(const std::string& image, const std::string& outdir)
{
    const Image face = face_input(image, kModelSide);
    const auto views = augment(face);
    fs::create_directories(outdir);
    for (std::size_t i = 0; i < views.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof name, "%02zu_%s%s.ppm", i + 1, i < 6 ? "" : "flip_", kViewNames[i % 6]);
        write_ppm(views[i], fs::path(outdir) / name);
        std::cout << (fs::path(outdir) / name).string() << '\n';
    }
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Facial emotion recognition toolkit"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    AnalyzeArgs aa;
    auto* analyze_cmd = app.add_subcommand("analyze", "Parameter and mult-add counts of model graphs");
    analyze_cmd->add_option("graphs", aa.graphs, "Graph files")->required()->check(CLI::ExistingFile);
    analyze_cmd->add_option("--convention", aa.convention, "per-weight or per-activation")->capture_default_str();
    analyze_cmd->add_flag("--csv", aa.csv, "CSV instead of a table");
    analyze_cmd->add_flag("--layers", aa.layers, "Per-layer breakdown");

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "Train on a directory of class subdirectories");
    train_cmd->add_option("dataset", ta.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    train_cmd->add_option("--graph", ta.graph, "Model graph file (default: built-in ResMoNet)");
    train_cmd->add_flag("--desk", ta.desk, "Small 32x32 profile of the built-in model");
    train_cmd->add_option("--mobile-blocks", ta.m, "Mobile blocks of the built-in model")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    train_cmd->add_option("--residual-blocks", ta.r, "Residual blocks of the built-in model")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    train_cmd->add_option("--epochs", ta.epochs)->capture_default_str();
    train_cmd->add_option("--batch", ta.batch)->capture_default_str();
    train_cmd->add_option("--lr", ta.lr)->capture_default_str();
    train_cmd->add_option("--momentum", ta.momentum)->capture_default_str();
    train_cmd->add_option("--seed", ta.seed, "Initialisation, split and shuffle seed")->capture_default_str();
    train_cmd->add_option("--boxes", ta.boxes, "Face box table (id x y w h)")->check(CLI::ExistingFile);
    train_cmd->add_option("--out", ta.out, "Weights file; the graph goes to <out>.graph")->capture_default_str();
    train_cmd->add_option("--history", ta.history, "History CSV (default <out>.history.csv)");
    train_cmd->add_flag("!--no-augment", ta.augment, "Skip the 12-view augmentation at 224x224");

    bool gdesk = false;
    int gm = 1, gr = 1;
    std::string gout;
    auto* graph_cmd = app.add_subcommand("graph", "Print the built-in model graph");
    graph_cmd->add_flag("--desk", gdesk, "Small 32x32 profile");
    graph_cmd->add_option("--mobile-blocks", gm)->capture_default_str()->check(CLI::PositiveNumber);
    graph_cmd->add_option("--residual-blocks", gr)->capture_default_str()->check(CLI::PositiveNumber);
    graph_cmd->add_option("--out", gout, "Write to a file instead of stdout");

    std::string iw, ii, ig;
    bool inames = false;
    auto* infer_cmd = app.add_subcommand("infer", "Emotion probabilities for one image");
    infer_cmd->add_option("weights", iw)->required()->check(CLI::ExistingFile);
    infer_cmd->add_option("image", ii, "PPM image")->required()->check(CLI::ExistingFile);
    infer_cmd->add_option("--graph", ig, "Graph file (default <weights>.graph)");
    infer_cmd->add_flag("--names", inames, "Prefix each value with its emotion");

    ProfileArgs pa;
    auto* profile_cmd = app.add_subcommand("profile", "Measure recognition time and memory");
    profile_cmd->add_option("weights", pa.weights)->required()->check(CLI::ExistingFile);
    profile_cmd->add_option("--graph", pa.graph, "Graph file (default <weights>.graph)");
    profile_cmd->add_option("--image", pa.image, "Frame to recognise (default: synthetic frames)")
        ->check(CLI::ExistingFile);
    profile_cmd->add_option("--runs", pa.runs)->capture_default_str()->check(CLI::PositiveNumber);
    profile_cmd->add_option("--duration", pa.duration, "Seconds per run")->capture_default_str()->check(
        CLI::PositiveNumber);
    profile_cmd->add_option("--csv", pa.csv, "Also write an efficiency CSV row with rte_s and mmu_mb");

    std::string config;
    auto* serve_cmd = app.add_subcommand("serve", "Run the session service");
    serve_cmd->add_option("--config", config, "key = value config file")->check(CLI::ExistingFile);

    std::string scsv;
    bool sas_csv = false;
    auto* score_cmd = app.add_subcommand("score", "Usability and utility scores of an expert panel");
    score_cmd->add_option("responses", scsv, "Responses CSV")->required()->check(CLI::ExistingFile);
    score_cmd->add_flag("--csv", sas_csv, "CSV instead of a table");

    std::string aimg, aout;
    auto* augment_cmd = app.add_subcommand("augment", "Write the 12 augmented views of an image");
    augment_cmd->add_option("image", aimg, "PPM image")->required()->check(CLI::ExistingFile);
    augment_cmd->add_option("outdir", aout)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*analyze_cmd)
            return run_analyze(aa);
        if (*train_cmd)
            return run_train(ta);
        if (*graph_cmd)
            return run_graph(gdesk, gm, gr, gout);
        if (*infer_cmd)
            return run_infer(iw, ii, ig, inames);
        if (*profile_cmd)
            return run_profile(pa);
        if (*serve_cmd)
            return run_serve(config);
        if (*score_cmd)
            return run_score(scsv, sas_csv);
        if (*augment_cmd)
            return run_augment(aimg, aout);
    } catch (const Error& e) {
        std::cerr << e.name() << ": " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "Error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
