// Command-line driver for the concept unit-test pipeline.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "unitconcepts/errors.hpp"
#include "unitconcepts/pipeline.hpp"

namespace {

struct Command {
    const char* name;
    const char* help;
    uc::Stage last;
};

constexpr Command kCommands[] = {
    {"gen-data", "render datasets and minimal pairs", uc::Stage::GenData},
    {"train-encoder", "train encoders (runs earlier stages as needed)", uc::Stage::TrainEncoder},
    {"extract", "write representation bundles", uc::Stage::Extract},
    {"train-probes", "train composite probes", uc::Stage::TrainProbes},
    {"fit-ablation", "fit INLP projections", uc::Stage::FitAblation},
    {"run-tests", "run the four unit tests", uc::Stage::RunTests},
    {"analyze-layers", "layerwise probing and NMI", uc::Stage::AnalyzeLayers},
    {"report", "write report.json, report.md and CSVs", uc::Stage::Report},
    {"run", "all stages", uc::Stage::Report},
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Unit tests for concepts in learned representations.\n"
                 "Any config field can be overridden with --section.key=value."};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    bool quiet = false;
    std::vector<CLI::App*> subs;
    for (const auto& c : kCommands) {
        auto* sub = app.add_subcommand(c.name, c.help);
        sub->add_option("-c,--config", config_path, "JSON config file");
        sub->add_option("-o,--out", out_dir, "experiment directory");
        sub->add_flag("-q,--quiet", quiet, "suppress progress output");
        sub->allow_extras();
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    std::size_t which = 0;
    while (!subs[which]->parsed()) ++which;

    uc::ExperimentConfig cfg;
    try {
        if (!config_path.empty()) cfg = uc::load_config(config_path);
        for (const auto& extra : subs[which]->remaining()) {
            if (extra.rfind("--", 0) != 0 || extra.find('=') == std::string::npos)
                throw uc::ConfigError("unexpected argument '" + extra + "' (overrides look like --key=value)");
            cfg.apply_override(extra.substr(2));
        }
        if (!out_dir.empty()) cfg.output_dir = out_dir;
        cfg.validate();
    } catch (const uc::Error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    }

    try {
        const auto report = uc::run_pipeline(cfg, kCommands[which].last, quiet ? nullptr : &std::cerr);
        if (!report.is_null()) std::cout << (cfg.output_dir / "report.json").string() << '\n';
    } catch (const uc::StageError& e) {
        std::cerr << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
