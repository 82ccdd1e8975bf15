// resmonet-synth: writes the procedural seven-class image set as a dataset
// directory that `resmonet train` reads.

#include <iostream>

#include <CLI11.hpp>

#include "resmo/errors.hpp"
#include "resmo/vision.hpp"

int main(int argc, char** argv)
{
    CLI::App app{"Write a synthetic seven-class dataset"};
    std::string out;
    resmo::Index per_class = 30, side = 32;
    std::uint64_t seed = 0;
    app.add_option("outdir", out)->required();
    app.add_option("--per-class", per_class)->capture_default_str()->check(CLI::PositiveNumber);
    app.add_option("--side", side, "Image side in pixels")->capture_default_str()->check(CLI::PositiveNumber);
    app.add_option("--seed", seed)->capture_default_str();
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return e.get_exit_code() == 0 ? app.exit(e) : (app.exit(e), 1);
    }
    try {
        const auto examples = resmo::synthesize_dataset(per_class, side, seed);
        resmo::write_dataset(examples, out);
        std::cout << "wrote " << examples.size() << " images to " << out << '\n';
    } catch (const resmo::Error& e) {
        std::cerr << e.name() << ": " << e.what() << '\n';
        return 2;
    }
    return 0;
}
