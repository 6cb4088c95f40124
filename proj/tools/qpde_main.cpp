#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "qpde/config.hpp"
#include "qpde/runner.hpp"

int main(int argc, char** argv) {
    CLI::App app{"qpde: deep-BSDE PDE solver with simulated quantum Monte Carlo subroutines"};
    app.require_subcommand(0, 1);

    std::string config_path, out_dir, seed_str, threads_str;
    bool show_schema = false;
    app.add_flag("--schema", show_schema, "print the config-file schema and exit");

    const std::vector<std::pair<std::string, std::string>> subcommands = {
        {"bsde-train", "train the stacked deep-BSDE model (CSV per estimator)"},
        {"bsde-eval", "evaluate a saved model checkpoint on fresh paths"},
        {"grad-bench", "compare gradient estimators against backprop"},
        {"qamc", "quantum-accelerated vs classical mean estimation sweep"},
        {"ae-bench", "amplitude-estimation error benchmark"},
        {"mlmc", "multilevel Monte Carlo on a GBM payoff (per-level CSV)"},
        {"hybrid-train", "classical vs hybrid vs PQC-only training comparison"},
        {"cost-model", "closed-form query-complexity tables and pipeline ledger"},
        {"plot-data", "merge training histories into long-format CSV"},
    };
    std::string schema_footer;
    {
        std::ostringstream ss;
        ss << "Config file keys (unknown keys are rejected):\n";
        qpde::config::print_schema(ss);
        schema_footer = ss.str();
    }
    for (const auto& [name, desc] : subcommands) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->add_option("--config", config_path, "config file ([section] key = value)");
        sub->add_option("--seed", seed_str, "RNG seed (overrides [run] seed)");
        sub->add_option("--out", out_dir, "output directory (overrides [run] out)");
        sub->add_option("--threads", threads_str, "worker threads (overrides [run] threads)");
        sub->footer(schema_footer);
    }

    CLI11_PARSE(app, argc, argv);

    if (show_schema) {
        qpde::config::print_schema(std::cout);
        return 0;
    }
    if (app.get_subcommands().empty()) {
        std::cout << app.help() << '\n';
        return 0;
    }

    try {
        qpde::config::RunConfig cfg = config_path.empty()
                                          ? qpde::config::RunConfig()
                                          : qpde::config::RunConfig::from_file(config_path);
        if (!seed_str.empty()) cfg.set("run", "seed", seed_str);
        if (!out_dir.empty()) cfg.set("run", "out", out_dir);
        if (!threads_str.empty()) cfg.set("run", "threads", threads_str);
        cfg.subcommand = app.get_subcommands().front()->get_name();
        return qpde::runner::run(cfg);
    } catch (const qpde::config::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return qpde::runner::kExitConfig;
    }
}
