#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dynhd/error.hpp"
#include "dynhd/evidence.hpp"
#include "dynhd/io.hpp"
#include "dynhd/simulator.hpp"
#include "dynhd/token_filter.hpp"
#include "dynhd/training.hpp"

namespace dynhd::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public Error {
public:
    using Error::Error;
};

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> k;
    std::optional<double> lambda1;
    std::optional<double> lambda2;
    std::optional<double> quantile;
    std::optional<double> beta;
    std::optional<double> warmup;
    bool standardize = false;

    void apply(TrainConfig& cfg) const {
        if (seed) cfg.seed = *seed;
        if (k) cfg.k = *k;
        if (lambda1) cfg.stage2.lambda1 = *lambda1;
        if (lambda2) cfg.stage2.lambda2 = *lambda2;
        if (quantile) cfg.stage2.quantile_level = *quantile;
        if (beta) cfg.stage2.beta = *beta;
        if (warmup) cfg.stage2.warmup_fraction = *warmup;
        if (standardize) cfg.standardize = true;
        cfg.validate();
    }
};

void add_overrides(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--seed", o.seed, "Random seed");
    cmd->add_option("--k", o.k, "Top-k size for evidence");
    cmd->add_option("--lambda1", o.lambda1, "Path-deviation regularizer weight");
    cmd->add_option("--lambda2", o.lambda2, "Rebound regularizer weight");
    cmd->add_option("--quantile", o.quantile, "Margin quantile level");
    cmd->add_option("--beta", o.beta, "Margin EMA rate");
    cmd->add_option("--warmup", o.warmup, "Fraction of stage-2 epochs used to ramp lambda1/lambda2");
    cmd->add_flag("--standardize", o.standardize, "Standardize detector evidence with stage-1 statistics");
}

// Relative data paths fall back to $DYNHD_DATA_DIR when absent from the working directory.
std::string resolve_data(const std::string& path) {
    if (path.empty() || io::file_exists(path) || fs::path(path).is_absolute()) return path;
    if (const char* dir = std::getenv("DYNHD_DATA_DIR"); dir != nullptr && *dir != '\0') {
        const auto candidate = (fs::path(dir) / path).string();
        if (io::file_exists(candidate)) return candidate;
    }
    return path;
}

std::string require_file(const std::string& path, const char* what) {
    const auto resolved = resolve_data(path);
    if (!io::file_exists(resolved)) throw IoError(std::string(what) + " '" + path + "' does not exist");
    return resolved;
}

void guard_output(const std::string& out, const std::vector<std::string>& inputs) {
    std::error_code ec;
    for (const auto& in : inputs) {
        if (!in.empty() && io::file_exists(in) && fs::exists(out, ec) && fs::equivalent(out, in, ec)) {
            throw UsageError("output '" + out + "' would overwrite input '" + in + "'");
        }
    }
}

void write_or_print(const std::string& path, const std::string& text, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << text;
    } else {
        io::write_file(path, text);
    }
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

Dataset load_data(const std::string& path, bool hash_queries) {
    auto ds = read_dataset(path);
    if (hash_queries) {
        for (auto& t : ds.trajectories) t.query_embedding = hashed_query_embedding(t.question, ds.header.d_q);
    }
    return ds;
}

TrainConfig load_config(const std::string& path, const Overrides& o) {
    TrainConfig cfg = path.empty() ? TrainConfig{} : TrainConfig::load(require_file(path, "config"));
    o.apply(cfg);
    return cfg;
}

IgnoreSpec pick_ignore(const std::string& config, const std::string& ignore, bool no_filter) {
    if (no_filter) return IgnoreSpec{};
    if (!ignore.empty()) return IgnoreSpec::load(require_file(ignore, "ignore spec"));
    if (!config.empty()) return TrainConfig::load(require_file(config, "config")).ignore;
    return IgnoreSpec::defaults();
}

// Shortest text that reads back to the same double.
std::string fmt(double v) { return json(v).dump(); }

int report_error(std::ostream& err, int code, std::string_view kind, const std::string& msg) {
    std::string one_line = msg;
    for (auto& c : one_line) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    err << "dynhd: error code=" << code << " kind=" << kind << ": " << one_line << '\n';
    return code;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"dynhd: hallucination detection from diffusion-LM denoising entropy trajectories", "dynhd"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    std::string data, out_path, config, model, regimes, grid, ignore;
    bool no_filter = false;
    bool by_class = false;
    bool verbose = false;
    bool hash_queries = false;
    int threads = 1;
    Overrides ov;
    app.add_flag("-v,--verbose", verbose, "Progress messages on stderr");

    auto* simulate = app.add_subcommand("simulate", "Generate a labeled synthetic dataset");
    simulate->add_option("--regimes", regimes, "Simulation config (JSON); defaults when omitted");
    simulate->add_option("--out", out_path, "Dataset file to write (.gz compresses)")->required();
    simulate->add_option("--seed", ov.seed, "Random seed");

    auto* evidence = app.add_subcommand("evidence", "Dump evidence trajectories as CSV");
    evidence->add_option("--data", data, "Dataset file")->required();
    evidence->add_option("--out", out_path, "CSV file (stdout when omitted)");
    evidence->add_option("--config", config, "Training config whose ignore spec to use");
    evidence->add_option("--ignore", ignore, "Ignore spec file");
    evidence->add_option("--k", ov.k, "Top-k size");
    evidence->add_flag("--no-filter", no_filter, "Disable token filtering");
    evidence->add_flag("--by-class", by_class, "Per-class mean/std curves instead of per-sample rows");

    auto* stats = app.add_subcommand("filter-stats", "Per-category token filter counts");
    stats->add_option("--data", data, "Dataset file")->required();
    stats->add_option("--config", config, "Training config whose ignore spec to use");
    stats->add_option("--ignore", ignore, "Ignore spec file");
    stats->add_flag("--no-filter", no_filter, "Disable token filtering");

    auto* train_ref = app.add_subcommand("train-ref", "Train only the reference generator");
    train_ref->add_option("--data", data, "Dataset file")->required();
    train_ref->add_flag("--hash-queries", hash_queries, "Replace query embeddings with hashed bag-of-words of the question");
    train_ref->add_option("--out", out_path, "Generator checkpoint to write")->required();
    train_ref->add_option("--config", config, "Training config (JSON)");
    add_overrides(train_ref, ov);

    auto* train = app.add_subcommand("train", "Two-stage training with validation model selection");
    train->add_option("--data", data, "Dataset file")->required();
    train->add_flag("--hash-queries", hash_queries, "Replace query embeddings with hashed bag-of-words of the question");
    train->add_option("--out", out_path, "Output directory")->required();
    train->add_option("--config", config, "Training config (JSON)");
    add_overrides(train, ov);

    auto* score = app.add_subcommand("score", "Per-sample probability, scores and attention weights");
    score->add_option("--model", model, "Model checkpoint")->required();
    score->add_option("--data", data, "Dataset file")->required();
    score->add_flag("--hash-queries", hash_queries, "Replace query embeddings with hashed bag-of-words of the question");
    score->add_option("--out", out_path, "CSV file (stdout when omitted)");

    auto* eval = app.add_subcommand("eval", "AUROC of a trained model on a labeled dataset");
    eval->add_option("--model", model, "Model checkpoint")->required();
    eval->add_option("--data", data, "Dataset file")->required();
    eval->add_flag("--hash-queries", hash_queries, "Replace query embeddings with hashed bag-of-words of the question");
    eval->add_option("--out", out_path, "Report file (stdout when omitted)");

    auto* gridsearch = app.add_subcommand("gridsearch", "Exhaustive hyperparameter search");
    gridsearch->add_option("--grid", grid, "Grid spec (JSON)")->required();
    gridsearch->add_option("--data", data, "Dataset file")->required();
    gridsearch->add_option("--out", out_path, "Output directory")->required();
    gridsearch->add_option("--threads", threads, "Worker threads (overrides the grid file)");
    add_overrides(gridsearch, ov);

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    if (!argv_rev.empty()) argv_rev.pop_back();  // program name
    try {
        app.parse(argv_rev);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        return report_error(err, kUsage, "usage", e.what());
    }

    auto log = [&](const std::string& m) {
        if (verbose) err << "dynhd: " << m << '\n';
    };

    try {
        if (*simulate) {
            auto cfg = regimes.empty() ? sim::SimulationConfig::defaults()
                                       : sim::SimulationConfig::load(require_file(regimes, "regimes file"));
            if (ov.seed) cfg.seed = *ov.seed;
            guard_output(out_path, {regimes});
            const auto ds = sim::simulate_dataset(cfg);
            write_dataset(ds.header, ds.trajectories, out_path);
            out << "wrote " << ds.trajectories.size() << " trajectories to " << out_path << '\n';
        } else if (*evidence) {
            const auto path = require_file(data, "dataset");
            guard_output(out_path, {path});
            const auto ds = read_dataset(path);
            const auto spec = pick_ignore(config, ignore, no_filter);
            const int k = ov.k.value_or(config.empty() ? kDefaultTopK : TrainConfig::load(resolve_data(config)).k);
            std::ostringstream csv;
            if (by_class) {
                sim::emit_plot_csv(ds, spec, k, csv);
            } else {
                write_evidence_csv(csv, ds.trajectories, build_trajectories(ds.trajectories, spec, k));
            }
            write_or_print(out_path, csv.str(), out);
        } else if (*stats) {
            const auto ds = read_dataset(require_file(data, "dataset"));
            const auto counts = count_filtered(ds.trajectories, pick_ignore(config, ignore, no_filter));
            out << "category,count,fraction\n";
            for (std::size_t c = 0; c < kTokenClassCount; ++c) {
                const double frac = counts.total ? static_cast<double>(counts.by_class[c]) / counts.total : 0.0;
                const auto name = static_cast<TokenClass>(c) == TokenClass::semantic
                                      ? std::string("kept")
                                      : std::string(to_string(static_cast<TokenClass>(c)));
                out << name << ',' << counts.by_class[c] << ',' << fmt(frac) << '\n';
            }
            out << "total," << counts.total << ",1\n";
        } else if (*train_ref) {
            const auto path = require_file(data, "dataset");
            guard_output(out_path, {path, config});
            const auto cfg = load_config(config, ov);
            const auto ds = load_data(path, hash_queries);
            log("building evidence");
            const auto prepared = prepare_data(cfg, ds);
            log("training reference generator");
            const auto s1 = run_stage1(cfg, prepared);
            const json ckpt{{"format", "dynhd-generator/1"},
                            {"config", cfg.to_json()},
                            {"loss_history", s1.loss_history},
                            {"generator", s1.generator.to_json()}};
            io::write_file(out_path, ckpt.dump() + "\n");
            out << "stage-1 loss " << fmt(s1.loss_history.front()) << " -> " << fmt(s1.loss_history.back()) << '\n';
        } else if (*train) {
            const auto path = require_file(data, "dataset");
            const auto cfg = load_config(config, ov);
            ensure_dir(out_path);
            const auto ds = load_data(path, hash_queries);
            log("training on " + std::to_string(ds.trajectories.size()) + " trajectories");
            const auto result = run_two_stage(cfg, ds);
            const fs::path dir(out_path);
            result.model.save((dir / "model.json").string());
            io::write_file((dir / "report.json").string(), result.report.to_text());
            io::write_file((dir / "epochs.csv").string(), result.report.epochs_csv());
            out << "selected epoch " << result.report.selected_epoch << ", validation AUROC "
                << fmt(result.report.best_val_auroc) << ", test AUROC " << fmt(result.report.test_auroc) << '\n';
        } else if (*score) {
            const auto mpath = require_file(model, "model");
            const auto dpath = require_file(data, "dataset");
            guard_output(out_path, {mpath, dpath});
            const auto m = TrainedModel::load(mpath);
            const auto ds = load_data(dpath, hash_queries);
            const auto scores = score_trajectories(m, ds.trajectories);
            std::ostringstream csv;
            csv << std::setprecision(17) << "id,label,probability,s_path,s_reb";
            for (int t = ds.header.T; t >= 0; --t) csv << ",omega_t" << t;
            csv << '\n';
            for (std::size_t i = 0; i < scores.size(); ++i) {
                const auto& s = scores[i];
                csv << ds.trajectories[i].id << ',' << to_string(ds.trajectories[i].label) << ',' << s.probability << ','
                    << s.s_path << ',' << s.s_reb;
                for (Eigen::Index j = 0; j < s.omega.size(); ++j) csv << ',' << s.omega(j);
                csv << '\n';
            }
            write_or_print(out_path, csv.str(), out);
        } else if (*eval) {
            const auto mpath = require_file(model, "model");
            const auto dpath = require_file(data, "dataset");
            guard_output(out_path, {mpath, dpath});
            const auto m = TrainedModel::load(mpath);
            const auto ds = load_data(dpath, hash_queries);
            const double a = cross_eval(m, ds.trajectories);
            const json report{{"auroc", a}, {"n", ds.trajectories.size()}, {"config", m.config.to_json()}};
            write_or_print(out_path, report.dump(2) + "\n", out);
        } else if (*gridsearch) {
            const auto dpath = require_file(data, "dataset");
            auto spec = GridSpec::load(require_file(grid, "grid"));
            ov.apply(spec.base);
            if (gridsearch->count("--threads") > 0) spec.threads = threads;
            ensure_dir(out_path);
            const auto ds = read_dataset(dpath);
            log("running " + std::to_string(spec.expand().size()) + " configurations");
            const auto result = grid_search(spec, ds);
            json reports = json::array();
            for (const auto& r : result.reports) reports.push_back(r.to_json());
            const json summary{{"best_index", result.best_index},
                               {"best_config", result.best.to_json()},
                               {"runs", result.reports.size()},
                               {"reports", std::move(reports)}};
            const fs::path dir(out_path);
            io::write_file((dir / "grid_report.json").string(), summary.dump(2) + "\n");
            io::write_file((dir / "best_config.json").string(), result.best.to_json().dump(2) + "\n");
            out << "evaluated " << result.reports.size() << " configurations; best validation AUROC "
                << fmt(result.reports[result.best_index].best_val_auroc) << " at index " << result.best_index << '\n';
        }
    } catch (const UsageError& e) {
        return report_error(err, kUsage, "usage", e.what());
    } catch (const IoError& e) {
        return report_error(err, kIo, "io", e.what());
    } catch (const ValidationError& e) {
        return report_error(err, kValidation, "validation", e.what());
    } catch (const DimensionError& e) {
        return report_error(err, kValidation, "validation", e.what());
    } catch (const TrainingError& e) {
        return report_error(err, kTraining, "training", e.what());
    } catch (const std::exception& e) {
        return report_error(err, kInternal, "internal", e.what());
    }
    return kOk;
}

int dispatch(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return dispatch(args, std::cout, std::cerr);
}

}  // namespace dynhd::cli
