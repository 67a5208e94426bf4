// sclens command-line driver: batch experiments over the semiclassical
// laboratory. Each subcommand reads a flat key=value config, runs one
// experiment family, and writes CSV sweeps plus a JSON summary and a gnuplot
// script into the output directory.
//
// Exit codes: 0 all pass, 1 an acceptance flag failed, 2 configuration error,
// 3 numerical failure (divergence / boundary contamination).

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <iostream>

#include "sclens/harness.hpp"

using namespace sclens;

int main(int argc, char** argv) {
    CLI::App app{"sclens: semiclassical dispersive-PDE laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 1;
    bool seed_given = false;
    int threads = 2;

    struct Sub {
        std::string name;
        std::function<DriverResult(const Config&, int)> fn;
    };
    const std::vector<Sub> subs = {
        {"geodesic", [](const Config& c, int t) { return run_geodesic(c, t); }},
        {"extinction", [](const Config& c, int t) { return run_extinction(c, t); }},
        {"dispersive", [](const Config& c, int t) { return run_dispersive(c, t); }},
        {"converge", [](const Config& c, int t) { return run_propagator_convergence(c, t); }},
        {"morawetz", [](const Config& c, int t) { return run_morawetz(c, t); }},
        {"smoothing", [](const Config& c, int t) { return run_local_smoothing(c, t); }},
        {"profiles", [](const Config& c, int t) { return run_profiles(c, t); }},
        {"nls", [](const Config& c, int t) { return run_nls(c, t); }},
    };

    std::map<std::string, CLI::App*> cmd;
    for (const auto& sub : subs) {
        CLI::App* s = app.add_subcommand(sub.name, "run the " + sub.name + " experiment");
        s->add_option("--config", config_path, "config file (key = value lines)");
        s->add_option("--out", out_dir, "output directory");
        s->add_option("--seed", seed, "RNG seed")->each([&seed_given](const std::string&) {
            seed_given = true;
        });
        s->add_option("--threads", threads, "worker threads");
        cmd[sub.name] = s;
    }

    CLI11_PARSE(app, argc, argv);

    try {
        Config cfg;
        if (!config_path.empty()) cfg = Config::parse_file(config_path);
        if (seed_given || !cfg.has("seed")) cfg.set("seed", std::to_string(seed));
        if (const char* env = std::getenv("SCLENS_OUT")) out_dir = env;

        for (const auto& sub : subs) {
            if (!cmd[sub.name]->parsed()) continue;
            const auto t0 = std::chrono::steady_clock::now();
            DriverResult res = sub.fn(cfg, threads);
            const double wall =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                    .count();
            write_outputs(res, out_dir, wall);
            std::cout << res.name << ": " << (res.pass ? "PASS" : "FAIL")
                      << "  (config " << res.config_hash << ", " << wall << " s)\n";
            if (res.summary.contains("flags"))
                for (const auto& [fk, fv] : res.summary["flags"].items())
                    std::cout << "  [" << (fv.get<bool>() ? "ok" : "FAIL") << "] " << fk
                              << "\n";
            return res.pass ? 0 : 1;
        }
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
