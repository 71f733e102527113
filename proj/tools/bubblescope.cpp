#include "bubblescope/scenario.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace bubblescope;

namespace {

int report(const RunResult& res)
{
    std::cout << "wrote " << res.files.size() << " files to " << res.out_dir.string() << "\n";
    std::cout << res.assertions - res.failures << "/" << res.assertions << " assertions passed\n";
    for (const auto& a : res.failed)
        std::cout << "FAIL " << a.name << ": " << a.value << " " << a.relation << " " << a.limit << (a.where.empty() ? "" : " at " + a.where)
                  << "\n";
    return res.failures ? 2 : 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Numerical toolkit for the energy identity of stationary harmonic maps into S^2"};
    app.require_subcommand(1);
    app.set_version_flag("--version", BUBBLESCOPE_VERSION);

    std::string config;
    RunOptions opt;
    auto* run = app.add_subcommand("run", "Run every analysis listed in a scenario file");
    run->add_option("config", config, "Scenario JSON file")->required()->check(CLI::ExistingFile);
    run->add_option("--out", opt.out_dir, "Output directory");
    run->add_option("--workers", opt.workers, "Worker threads")->check(CLI::Range(1, 256));

    auto* sc = app.add_subcommand("self-check", "Check mollifier, quadrature and geometry invariants");
    double R = 20.0;
    sc->add_option("--R", R, "Mollifier cutoff")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*run) return report(run_scenario(config, opt));
        const AnalysisOutput out = self_check_suite(Engine(R, QuadratureSpec{}), 0);
        int failed = 0;
        for (const auto& a : out.assertions) {
            std::cout << (a.pass ? "ok   " : "FAIL ") << a.name << ": " << a.value << " " << a.relation << " " << a.limit << "\n";
            failed += !a.pass;
        }
        return failed ? 2 : 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
