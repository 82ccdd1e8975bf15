// resmonet-passwd: prints a credential line for the session service.
// The secret is read from stdin so it stays out of the process list.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "resmo/auth.hpp"
#include "resmo/errors.hpp"

int main(int argc, char** argv)
{
    CLI::App app{"Create a credential line (secret read from stdin)"};
    std::string user;
    int iterations = 100000;
    app.add_option("user", user)->required();
    app.add_option("--iterations", iterations)->capture_default_str()->check(CLI::PositiveNumber);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return e.get_exit_code() == 0 ? app.exit(e) : (app.exit(e), 1);
    }
    std::string secret;
    std::getline(std::cin, secret);
    try {
        std::cout << resmo::make_credential_line(user, secret, iterations) << '\n';
    } catch (const resmo::Error& e) {
        std::cerr << e.name() << ": " << e.what() << '\n';
        return 2;
    }
    return 0;
}
