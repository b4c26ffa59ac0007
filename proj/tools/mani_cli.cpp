// Command-line front end: synth, train, eval, ablate.
// Links only against the C interface in mani/mani.h.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mani/mani.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct ConfigDeleter {
    void operator()(mani_config* c) const { mani_config_destroy(c); }
};
struct DatasetDeleter {
    void operator()(mani_dataset* d) const { mani_dataset_destroy(d); }
};
struct RunDeleter {
    void operator()(mani_run* r) const { mani_run_destroy(r); }
};
struct ModelDeleter {
    void operator()(mani_model* m) const { mani_model_destroy(m); }
};
struct ReportDeleter {
    void operator()(mani_report* r) const { mani_report_destroy(r); }
};
struct AblationDeleter {
    void operator()(mani_ablation* a) const { mani_ablation_destroy(a); }
};

using ConfigPtr = std::unique_ptr<mani_config, ConfigDeleter>;
using DatasetPtr = std::unique_ptr<mani_dataset, DatasetDeleter>;
using RunPtr = std::unique_ptr<mani_run, RunDeleter>;
using ModelPtr = std::unique_ptr<mani_model, ModelDeleter>;
using ReportPtr = std::unique_ptr<mani_report, ReportDeleter>;
using AblationPtr = std::unique_ptr<mani_ablation, AblationDeleter>;

/// Failure carrying the exit code it should map to.
struct CommandError {
    int code;
    std::string message;
};

int exit_code_for(mani_status s) { return s == MANI_ERR_CONFIG || s == MANI_ERR_INVALID_ARGUMENT ? kExitUsage : kExitRuntime; }

void check(mani_status s, const std::string& context) {
    if (s != MANI_OK) {
        throw CommandError{exit_code_for(s), context + ": " + mani_last_error()};
    }
}

std::string now_iso8601() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string stamp() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
    return buf;
}

fs::path output_root() {
    if (const char* env = std::getenv("MANI_OUT"); env && *env) return env;
    return "runs";
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw CommandError{kExitRuntime, "cannot write " + path.string()};
}

/// Records the command, resolved configuration, version and outputs before any side effect.
void write_manifest(const fs::path& dir, const std::string& command, mani_config* config,
                    const std::vector<std::pair<std::string, std::string>>& outputs) {
    fs::create_directories(dir);
    nlohmann::json j;
    j["command"] = command;
    j["code_version"] = mani_version();
    j["started_at"] = now_iso8601();
    nlohmann::json cfg = nlohmann::json::object();
    const std::string dump = mani_config_dump(config);
    std::size_t pos = 0;
    while (pos < dump.size()) {
        const auto nl = dump.find('\n', pos);
        const auto line = dump.substr(pos, nl - pos);
        if (const auto eq = line.find(" = "); eq != std::string::npos) cfg[line.substr(0, eq)] = line.substr(eq + 3);
        pos = nl == std::string::npos ? dump.size() : nl + 1;
    }
    j["config"] = cfg;
    nlohmann::json outs = nlohmann::json::object();
    for (const auto& [k, v] : outputs) outs[k] = v;
    j["outputs"] = outs;
    write_file(dir / "manifest.json", j.dump(2) + "\n");
}

/// Shared config flags: --preset, --config, --set key=value (applied in that order).
struct ConfigFlags {
    std::string preset;
    std::string file;
    std::vector<std::string> sets;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--preset", preset, "Configuration preset (default, paper-semantic, desk)");
        cmd->add_option("--config", file, "Flat key=value configuration file");
        cmd->add_option("--set", sets, "Override one key: --set key=value (repeatable)");
    }
    [[nodiscard]] bool any() const { return !preset.empty() || !file.empty() || !sets.empty(); }
};

/// Built-in defaults < preset < config file < --set flags < dedicated flags.
ConfigPtr resolve(const ConfigFlags& flags, const std::vector<std::pair<std::string, std::string>>& dedicated) {
    mani_config* raw = nullptr;
    check(mani_config_create(&raw), "config");
    ConfigPtr cfg(raw);
    if (!flags.preset.empty()) check(mani_config_apply_preset(cfg.get(), flags.preset.c_str()), "preset");
    if (!flags.file.empty()) check(mani_config_load_file(cfg.get(), flags.file.c_str()), "config file");
    for (const auto& kv : flags.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw CommandError{kExitUsage, "--set expects key=value, got '" + kv + "'"};
        check(mani_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()), "--set " + kv);
    }
    for (const auto& [k, v] : dedicated) check(mani_config_set(cfg.get(), k.c_str(), v.c_str()), "--" + k);
    check(mani_config_validate(cfg.get()), "configuration");
    return cfg;
}

DatasetPtr load(const fs::path& root, mani_role role, mani_split split) {
    mani_dataset* raw = nullptr;
    check(mani_dataset_load(root.c_str(), role, split, &raw), "dataset " + root.string());
    return DatasetPtr(raw);
}

/// Loads a split only when the dataset root has a split manifest and the split is non-empty.
DatasetPtr load_optional_split(const fs::path& root, mani_role role, mani_split split) {
    if (!fs::exists(root / "manifest.txt")) return nullptr;
    auto d = load(root, role, split);
    return mani_dataset_size(d.get()) > 0 ? std::move(d) : nullptr;
}

void require_dir(const std::string& path, const char* flag) {
    if (path.empty()) throw CommandError{kExitUsage, std::string(flag) + " is required"};
    if (!fs::is_directory(path)) throw CommandError{kExitUsage, std::string(flag) + " directory does not exist: " + path};
}

// ---- synth ---------------------------------------------------------------

struct SynthArgs {
    std::string out;
    int n_train = 200;
    int n_val = 20;
    int n_test = 20;
    std::optional<std::uint64_t> seed;
    std::optional<int> image_size;
    bool force = false;
    ConfigFlags config;
};

int cmd_synth(const SynthArgs& a, const std::string& command) {
    std::vector<std::pair<std::string, std::string>> dedicated;
    if (a.seed) dedicated.emplace_back("synth.seed", std::to_string(*a.seed));
    if (a.image_size) dedicated.emplace_back("synth.image_size", std::to_string(*a.image_size));
    auto cfg = resolve(a.config, dedicated);
    const fs::path out(a.out);
    if (fs::exists(out) && !fs::is_empty(out) && !a.force) {
        throw CommandError{kExitUsage, "output directory " + out.string() + " is not empty; pass --force to overwrite"};
    }
    write_manifest(out, command, cfg.get(), {{"source", (out / "source").string()}, {"target", (out / "target").string()}});
    check(mani_synth_write(cfg.get(), out.c_str(), a.n_train, a.n_val, a.n_test, 1), "synth");
    std::cout << "wrote " << (a.n_train + a.n_val + a.n_test) << " source and " << (a.n_train + a.n_val + a.n_test)
              << " target samples under " << out.string() << "\n";
    return kExitOk;
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
    std::string source;
    std::string target;
    std::string out;
    std::optional<double> mi_weight;
    std::optional<std::string> pooling;
    std::optional<int> pooling_n;
    std::optional<std::uint64_t> seed;
    std::optional<int> warmup_iters;
    std::optional<int> joint_iters;
    bool deterministic = false;
    bool print_config = false;
    ConfigFlags config;
};

std::vector<std::pair<std::string, std::string>> train_overrides(const TrainArgs& a) {
    std::vector<std::pair<std::string, std::string>> d;
    if (a.mi_weight) d.emplace_back("mi_weight", std::to_string(*a.mi_weight));
    if (a.pooling) d.emplace_back("pooling", *a.pooling);
    if (a.pooling_n) d.emplace_back("pooling_n", std::to_string(*a.pooling_n));
    if (a.seed) d.emplace_back("seed", std::to_string(*a.seed));
    if (a.warmup_iters) d.emplace_back("warmup_iters", std::to_string(*a.warmup_iters));
    if (a.joint_iters) d.emplace_back("joint_iters", std::to_string(*a.joint_iters));
    if (a.deterministic) d.emplace_back("deterministic", "true");
    return d;
}

int cmd_train(const TrainArgs& a, const std::string& command) {
    auto cfg = resolve(a.config, train_overrides(a));
    if (a.print_config) {
        std::cout << mani_config_dump(cfg.get());
        return kExitOk;
    }
    require_dir(a.source, "--source");
    require_dir(a.target, "--target");
    const fs::path out = a.out.empty() ? output_root() / ("train-" + stamp()) : fs::path(a.out);

    auto source = load(a.source, MANI_ROLE_SOURCE_LABELED, MANI_SPLIT_TRAIN);
    auto target = load(a.target, MANI_ROLE_TARGET_UNLABELED, MANI_SPLIT_TRAIN);
    auto source_val = load_optional_split(a.source, MANI_ROLE_SOURCE_LABELED, MANI_SPLIT_VAL);
    auto source_test = load_optional_split(a.source, MANI_ROLE_SOURCE_LABELED, MANI_SPLIT_TEST);
    auto target_val = load_optional_split(a.target, MANI_ROLE_TARGET_UNLABELED, MANI_SPLIT_VAL);
    auto target_test = load_optional_split(a.target, MANI_ROLE_TARGET_UNLABELED, MANI_SPLIT_TEST);

    write_manifest(out, command, cfg.get(),
                   {{"best_checkpoint", (out / "best.pt").string()},
                    {"last_checkpoint", (out / "last.pt").string()},
                    {"history_csv", (out / "history.csv").string()},
                    {"summary_json", (out / "summary.json").string()},
                    {"loss_plot", (out / "loss_curve.png").string()}});

    mani_run* raw = nullptr;
    check(mani_train(cfg.get(), source.get(), target.get(), target_val.get(), source_val.get(), target_test.get(),
                     source_test.get(), out.c_str(), &raw),
          "train");
    RunPtr run(raw);
    std::cout << mani_run_summary_json(run.get()) << "\n";
    std::cout << "outputs in " << out.string() << "\n";
    return kExitOk;
}

// ---- eval ----------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string predictions;
    std::string data;
    std::string split = "test";
    std::string role = "target";
    std::string json_out;
    ConfigFlags config;
};

mani_split parse_split(const std::string& s) {
    if (s == "train") return MANI_SPLIT_TRAIN;
    if (s == "val") return MANI_SPLIT_VAL;
    if (s == "test") return MANI_SPLIT_TEST;
    throw CommandError{kExitUsage, "--split must be train, val or test"};
}

int cmd_eval(const EvalArgs& a, const std::string& command) {
    require_dir(a.data, "--data");
    if (a.checkpoint.empty() == a.predictions.empty()) {
        throw CommandError{kExitUsage, "exactly one of --checkpoint or --predictions is required"};
    }
    if (!a.checkpoint.empty() && !fs::exists(a.checkpoint)) {
        throw CommandError{kExitUsage, "checkpoint does not exist: " + a.checkpoint};
    }
    if (!a.predictions.empty()) require_dir(a.predictions, "--predictions");
    const mani_role role = a.role == "source" ? MANI_ROLE_SOURCE_LABELED : MANI_ROLE_TARGET_UNLABELED;
    const mani_split split = fs::exists(fs::path(a.data) / "manifest.txt") ? parse_split(a.split) : MANI_SPLIT_TRAIN;
    auto cfg = resolve(a.config, {});

    const fs::path json_path = a.json_out.empty() ? output_root() / ("eval-" + stamp()) / "metrics.json" : fs::path(a.json_out);
    write_manifest(json_path.parent_path().empty() ? fs::path(".") : json_path.parent_path(), command, cfg.get(),
                   {{"metrics_json", json_path.string()}});

    auto data = load(a.data, role, split);
    mani_report* raw = nullptr;
    if (!a.checkpoint.empty()) {
        mani_model* model_raw = nullptr;
        const mani_status s = mani_model_load(a.checkpoint.c_str(), a.config.any() ? cfg.get() : nullptr, &model_raw);
        if (s == MANI_ERR_MISMATCH) throw CommandError{kExitRuntime, mani_last_error()};
        check(s, "checkpoint " + a.checkpoint);
        ModelPtr model(model_raw);
        check(mani_evaluate(model.get(), data.get(), &raw), "evaluate");
    } else {
        auto preds = load(a.predictions, MANI_ROLE_TARGET_UNLABELED, split);
        check(mani_evaluate_predictions(preds.get(), data.get(), &raw), "evaluate");
    }
    ReportPtr report(raw);
    const std::string json = mani_report_json(report.get());
    write_file(json_path, json + "\n");
    std::cout << mani_report_table(report.get());
    std::cout << json << "\n";
    return kExitOk;
}

// ---- ablate --------------------------------------------------------------

struct AblateArgs {
    std::string source;
    std::string target;
    std::string out;
    std::string grid = "both";
    int seeds = 1;
    int jobs = 1;
    std::optional<std::uint64_t> seed;
    std::optional<int> warmup_iters;
    std::optional<int> joint_iters;
    bool deterministic = false;
    ConfigFlags config;
};

int cmd_ablate(const AblateArgs& a, const std::string& command) {
    require_dir(a.source, "--source");
    require_dir(a.target, "--target");
    mani_grid grid = MANI_GRID_BOTH;
    if (a.grid == "weights") grid = MANI_GRID_WEIGHTS;
    else if (a.grid == "pooling") grid = MANI_GRID_POOLING;
    else if (a.grid != "both") throw CommandError{kExitUsage, "--grid must be weights, pooling or both"};
    if (a.seeds < 1 || a.jobs < 1) throw CommandError{kExitUsage, "--seeds and --jobs must be >= 1"};

    std::vector<std::pair<std::string, std::string>> d;
    if (a.seed) d.emplace_back("seed", std::to_string(*a.seed));
    if (a.warmup_iters) d.emplace_back("warmup_iters", std::to_string(*a.warmup_iters));
    if (a.joint_iters) d.emplace_back("joint_iters", std::to_string(*a.joint_iters));
    if (a.deterministic) d.emplace_back("deterministic", "true");
    auto cfg = resolve(a.config, d);
    const fs::path out = a.out.empty() ? output_root() / ("ablate-" + stamp()) : fs::path(a.out);

    auto source = load(a.source, MANI_ROLE_SOURCE_LABELED, MANI_SPLIT_TRAIN);
    auto target = load(a.target, MANI_ROLE_TARGET_UNLABELED, MANI_SPLIT_TRAIN);
    auto target_val = load_optional_split(a.target, MANI_ROLE_TARGET_UNLABELED, MANI_SPLIT_VAL);
    auto target_test = load_optional_split(a.target, MANI_ROLE_TARGET_UNLABELED, MANI_SPLIT_TEST);
    if (!target_val && !target_test) {
        throw CommandError{kExitRuntime, "target dataset has no labelled val or test split to score ablation cells"};
    }

    write_manifest(out, command, cfg.get(),
                   {{"ablation_csv", (out / "ablation.csv").string()}, {"ablation_table", (out / "ablation.txt").string()}});
    mani_ablation* raw = nullptr;
    check(mani_ablate(cfg.get(), grid, a.seeds, a.jobs, source.get(), target.get(), target_val.get(), target_test.get(), &raw),
          "ablate");
    AblationPtr ablation(raw);
    const std::string csv = mani_ablation_csv(ablation.get());
    const std::string table = mani_ablation_table(ablation.get());
    write_file(out / "ablation.csv", csv);
    write_file(out / "ablation.txt", table);
    std::cout << table;
    const auto rows = mani_ablation_rows(ablation.get());
    const auto failed = mani_ablation_failed(ablation.get());
    if (failed > 0) std::cerr << failed << " of " << rows << " cells FAILED (see " << (out / "ablation.csv").string() << ")\n";
    return failed < rows ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MI-maximisation domain adaptation for nuclei segmentation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", mani_version());

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic source/target datasets");
    synth_cmd->add_option("--out", synth.out, "Output directory")->required();
    synth_cmd->add_option("--n-train", synth.n_train, "Training images per domain");
    synth_cmd->add_option("--n-val", synth.n_val, "Validation images per domain");
    synth_cmd->add_option("--n-test", synth.n_test, "Test images per domain");
    synth_cmd->add_option("--seed", synth.seed, "Generator seed");
    synth_cmd->add_option("--image-size", synth.image_size, "Square image size in pixels");
    synth_cmd->add_flag("--force", synth.force, "Overwrite a non-empty output directory");
    synth.config.add_to(synth_cmd);

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Warm-up then joint segmentation + MI training");
    train_cmd->add_option("--source", train.source, "Labelled source dataset root");
    train_cmd->add_option("--target", train.target, "Unlabelled target dataset root");
    train_cmd->add_option("--out", train.out, "Output directory (default $MANI_OUT/train-<time>)");
    train_cmd->add_option("--mi-weight", train.mi_weight, "Weight of the MI term");
    train_cmd->add_option("--pooling", train.pooling, "mean | max | random_pixels");
    train_cmd->add_option("--pooling-n", train.pooling_n, "Pixels sampled per target image for random_pixels");
    train_cmd->add_option("--seed", train.seed, "Training seed");
    train_cmd->add_option("--warmup-iters", train.warmup_iters, "Source-only warm-up iterations");
    train_cmd->add_option("--joint-iters", train.joint_iters, "Joint segmentation + MI iterations");
    train_cmd->add_flag("--deterministic", train.deterministic, "Single-threaded, fixed reduction order");
    train_cmd->add_flag("--print-config", train.print_config, "Print the resolved configuration and exit");
    train.config.add_to(train_cmd);

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint or prediction masks");
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint archive");
    eval_cmd->add_option("--predictions", eval.predictions, "Prediction directory (dataset layout)");
    eval_cmd->add_option("--data", eval.data, "Labelled dataset root");
    eval_cmd->add_option("--split", eval.split, "train | val | test (used when the dataset has a manifest)");
    eval_cmd->add_option("--role", eval.role, "source | target");
    eval_cmd->add_option("--json-out", eval.json_out, "Where to write the metrics JSON");
    eval.config.add_to(eval_cmd);

    AblateArgs ablate;
    auto* ablate_cmd = app.add_subcommand("ablate", "Train one model per grid cell and tabulate target dice");
    ablate_cmd->add_option("--source", ablate.source, "Labelled source dataset root")->required();
    ablate_cmd->add_option("--target", ablate.target, "Target dataset root (val/test splits need masks)")->required();
    ablate_cmd->add_option("--out", ablate.out, "Output directory (default $MANI_OUT/ablate-<time>)");
    ablate_cmd->add_option("--grid", ablate.grid, "weights | pooling | both");
    ablate_cmd->add_option("--seeds", ablate.seeds, "Seeds per cell (mean reported)");
    ablate_cmd->add_option("--jobs", ablate.jobs, "Cells trained concurrently");
    ablate_cmd->add_option("--seed", ablate.seed, "First seed");
    ablate_cmd->add_option("--warmup-iters", ablate.warmup_iters, "Source-only warm-up iterations");
    ablate_cmd->add_option("--joint-iters", ablate.joint_iters, "Joint iterations");
    ablate_cmd->add_flag("--deterministic", ablate.deterministic, "Single-threaded, fixed reduction order");
    ablate.config.add_to(ablate_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    std::string command;
    for (int i = 1; i < argc; ++i) command += (i > 1 ? " " : "") + std::string(argv[i]);

    try {
        if (*synth_cmd) return cmd_synth(synth, command);
        if (*train_cmd) return cmd_train(train, command);
        if (*eval_cmd) return cmd_eval(eval, command);
        if (*ablate_cmd) return cmd_ablate(ablate, command);
    } catch (const CommandError& e) {
        std::cerr << "error: " << e.message << "\n";
        if (e.code == kExitUsage) std::cerr << "run with --help for usage\n";
        return e.code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
