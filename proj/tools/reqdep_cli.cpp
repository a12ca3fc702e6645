// reqdep: command-line front end for the retrieval/classification pipeline.
//
// Exit codes: 0 ok, 2 configuration, 3 data integrity or parse, 4 model
// transport exhausted, 5 anything else.

#include "reqdep/errors.hpp"
#include "reqdep/pipeline.hpp"
#include "reqdep/text.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace pl = reqdep::pipeline;

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kTransport = 4, kInternal = 5 };

struct Common {
    std::string config;
    std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config, "Experiment config (JSON)")->required();
    cmd->add_option("--set", c.sets, "Override a config key: key.path=value")->take_all();
}

pl::ExperimentConfig load(const Common& c) { return pl::load_config(c.config, c.sets); }

template <class F>
int guarded(F&& f) {
    try {
        f();
        return kOk;
    } catch (const reqdep::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const reqdep::TransportError& e) {
        std::cerr << "transport error: " << e.what() << "\n";
        return kTransport;
    } catch (const reqdep::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kData;
    } catch (const reqdep::IntegrityError& e) {
        std::cerr << "integrity error: " << e.what() << "\n";
        return kData;
    } catch (const reqdep::LookupError& e) {
        std::cerr << "missing input: " << e.what() << "\n";
        return kData;
    } catch (const reqdep::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInternal;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Requirement dependency retrieval, classification and sustainability reporting"};
    app.require_subcommand(1);

    Common common;
    struct Stage {
        const char* name;
        const char* help;
        void (*fn)(const pl::ExperimentConfig&);
    };
    const Stage stages[] = {
        {"ingest", "Load, deduplicate and describe the configured datasets", pl::stage_ingest},
        {"extract", "Extract structured entities from every requirement", pl::stage_extract},
        {"index-kg", "Build the requirement/entity graph", pl::stage_index_kg},
        {"index-vsr", "Embed requirements and build the vector index", pl::stage_index_vsr},
        {"retrieve", "Shortlist candidates for every anchor", pl::stage_retrieve},
        {"classify", "Classify shortlisted pairs (resumes from the journal)", pl::stage_classify},
        {"evaluate", "Compute Recall@K, macro P/R/F1 and the sustainability report", pl::stage_evaluate},
    };
    std::vector<std::pair<CLI::App*, const Stage*>> stage_cmds;
    for (const auto& s : stages) {
        auto* cmd = app.add_subcommand(s.name, s.help);
        add_common(cmd, common);
        stage_cmds.emplace_back(cmd, &s);
    }

    auto* run = app.add_subcommand("run", "Run every stage and write the reports");
    add_common(run, common);

    auto* sweep = app.add_subcommand("sweep-weights", "Grid search over the KGR score weights");
    add_common(sweep, common);

    auto* report = app.add_subcommand("report", "Write reports for one or more evaluated runs");
    std::vector<std::string> run_dirs;
    std::string formats = "json,csv,md";
    std::string out_dir;
    report->add_option("--config,-c", common.config, "Config whose run directory to report on");
    report->add_option("--set", common.sets, "Override a config key: key.path=value")->take_all();
    report->add_option("--runs", run_dirs, "Run directories; the first is compared against the rest");
    report->add_option("--format", formats, "Comma-separated subset of json,csv,md");
    report->add_option("--out", out_dir, "Output directory (default: the first run directory)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kConfig;  // --help exits 0
    }

    for (const auto& [cmd, stage] : stage_cmds) {
        if (cmd->parsed()) return guarded([&] { stage->fn(load(common)); });
    }
    if (run->parsed()) {
        return guarded([&] {
            const auto summary = pl::run_experiment(load(common));
            std::cout << "run complete: " << summary.run_dir.string() << " ("
                      << summary.classified_pairs << " pairs classified, "
                      << summary.classification_errors << " unparsed)\n";
        });
    }
    if (sweep->parsed()) {
        return guarded([&] {
            const auto cfg = load(common);
            const auto rows = pl::sweep_weights(cfg);
            std::cout << rows.size() << " grid rows written to " << (cfg.run_dir() / "sweep.csv").string()
                      << "\n";
        });
    }
    if (report->parsed()) {
        return guarded([&] {
            std::vector<std::filesystem::path> dirs(run_dirs.begin(), run_dirs.end());
            if (dirs.empty()) {
                if (common.config.empty()) throw reqdep::ConfigError("report needs --runs or --config");
                dirs.push_back(load(common).run_dir());
            }
            std::set<pl::ReportFormat> wanted;
            std::string f = formats;
            for (auto& c : f) {
                if (c == ',') c = ' ';
            }
            for (const auto& part : reqdep::text::split_ws(f)) wanted.insert(pl::parse_report_format(part));
            pl::emit_report(dirs, wanted, out_dir.empty() ? dirs.front() : std::filesystem::path(out_dir));
        });
    }
    return kInternal;
}
