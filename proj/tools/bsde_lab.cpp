#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "bsdelab/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"bsde-lab: truncated BSDE solver and terminal-behaviour checks"};
    std::string command, scenario, out = "out";
    std::optional<std::uint64_t> seed;
    app.add_option("command", command, "check|simulate|solve|sweep|verify|control|report")->required();
    app.add_option("--scenario", scenario, "scenario JSON file")->required();
    app.add_option("--out", out, "output directory");
    app.add_option("--seed", seed, "override the scenario seed");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : bsdelab::kExitSchema;
    }
    return bsdelab::run_command(command, scenario, out, seed, std::cerr);
}
