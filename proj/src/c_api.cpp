#include "mani/mani.h"

#include <filesystem>
#include <optional>
#include <string>

#include "mani/config.hpp"
#include "mani/data.hpp"
#include "mani/metrics.hpp"
#include "mani/model.hpp"
#include "mani/trainer.hpp"

struct mani_config {
    mani::RunConfig value;
    std::string scratch;
};

struct mani_dataset {
    mani::DomainDataset value;
};

struct mani_model {
    mani::ModelBundle bundle;
    std::string config_text;
};

struct mani_report {
    mani::MetricsReport value;
    std::string scratch;
};

struct mani_run {
    mani::TrainResult result;
    std::string config_text;
    std::string scratch;
};

struct mani_ablation {
    std::vector<mani::AblationRow> rows;
    std::string title;
    std::string scratch;
};

namespace {

thread_local std::string g_last_error;

mani_status fail(mani_status code, const std::string& message) {
    g_last_error = message;
    return code;
}

template <typename F>
mani_status guarded(F&& body) {
    try {
        return body();
    } catch (const mani::ConfigError& e) {
        return fail(MANI_ERR_CONFIG, e.what());
    } catch (const mani::DataError& e) {
        return fail(MANI_ERR_DATA, e.what());
    } catch (const mani::ShapeError& e) {
        return fail(MANI_ERR_SHAPE, e.what());
    } catch (const mani::NumericalError& e) {
        return fail(MANI_ERR_NUMERICAL, e.what());
    } catch (const std::invalid_argument& e) {
        return fail(MANI_ERR_INVALID_ARGUMENT, e.what());
    } catch (const c10::Error& e) {
        return fail(MANI_ERR_RUNTIME, e.what_without_backtrace());
    } catch (const std::exception& e) {
        return fail(MANI_ERR_RUNTIME, e.what());
    } catch (...) {
        return fail(MANI_ERR_RUNTIME, "unknown error");
    }
}

mani_status null_arg(const char* what) { return fail(MANI_ERR_INVALID_ARGUMENT, std::string(what) + " is NULL"); }

const mani::DomainDataset* opt(const mani_dataset* d) { return d ? &d->value : nullptr; }

}  // namespace

extern "C" {

MANI_API const char* mani_version(void) { return "1.0.0"; }

MANI_API const char* mani_last_error(void) { return g_last_error.c_str(); }

MANI_API mani_status mani_config_create(mani_config** out) {
    if (!out) return null_arg("out");
    return guarded([&] {
        *out = new mani_config{};
        return MANI_OK;
    });
}

MANI_API void mani_config_destroy(mani_config* config) { delete config; }

MANI_API mani_status mani_config_apply_preset(mani_config* config, const char* preset) {
    if (!config || !preset) return null_arg("config/preset");
    return guarded([&] {
        mani::apply_preset(config->value, preset);
        return MANI_OK;
    });
}

MANI_API mani_status mani_config_load_file(mani_config* config, const char* path) {
    if (!config || !path) return null_arg("config/path");
    return guarded([&] {
        mani::load_config_file(config->value, path);
        return MANI_OK;
    });
}

MANI_API mani_status mani_config_set(mani_config* config, const char* key, const char* value) {
    if (!config || !key || !value) return null_arg("config/key/value");
    return guarded([&] {
        mani::set_key(config->value, key, value);
        return MANI_OK;
    });
}

MANI_API const char* mani_config_get(mani_config* config, const char* key) {
    if (!config || !key) return nullptr;
    try {
        config->scratch = mani::get_key(config->value, key);
        return config->scratch.c_str();
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return nullptr;
    }
}

MANI_API const char* mani_config_dump(mani_config* config) {
    if (!config) return nullptr;
    config->scratch = mani::to_key_values(config->value);
    return config->scratch.c_str();
}

MANI_API mani_status mani_config_validate(const mani_config* config) {
    if (!config) return null_arg("config");
    return guarded([&] {
        config->value.train.validate();
        config->value.synth.for_domain(mani::Domain::source).validate();
        config->value.synth.for_domain(mani::Domain::target).validate();
        return MANI_OK;
    });
}

MANI_API mani_status mani_synth_write(const mani_config* config, const char* out_dir, int n_train, int n_val,
                                      int n_test, int force) {
    if (!config || !out_dir) return null_arg("config/out_dir");
    return guarded([&] {
        namespace fs = std::filesystem;
        const fs::path root(out_dir);
        if (fs::exists(root) && !fs::is_empty(root)) {
            if (!force) {
                return fail(MANI_ERR_DATA, "output directory " + root.string() + " is not empty (use force)");
            }
            fs::remove_all(root / "source");
            fs::remove_all(root / "target");
        }
        const struct {
            int n;
            mani::Split split;
        } splits[] = {{n_train, mani::Split::train}, {n_val, mani::Split::val}, {n_test, mani::Split::test}};
        for (auto domain : {mani::Domain::source, mani::Domain::target}) {
            const auto cfg = config->value.synth.for_domain(domain);
            const auto dir = root / mani::to_string(domain);
            for (const auto& s : splits) {
                if (s.n <= 0) continue;
                mani::write_dataset(mani::generate_synthetic(cfg, s.n, domain, s.split), dir);
            }
        }
        return MANI_OK;
    });
}

MANI_API mani_status mani_dataset_load(const char* root, mani_role role, mani_split split, mani_dataset** out) {
    if (!root || !out) return null_arg("root/out");
    if (role != MANI_ROLE_SOURCE_LABELED && role != MANI_ROLE_TARGET_UNLABELED) return fail(MANI_ERR_INVALID_ARGUMENT, "bad role");
    if (split < MANI_SPLIT_TRAIN || split > MANI_SPLIT_TEST) return fail(MANI_ERR_INVALID_ARGUMENT, "bad split");
    return guarded([&] {
        const auto r = role == MANI_ROLE_SOURCE_LABELED ? mani::Role::source_labeled : mani::Role::target_unlabeled;
        const auto s = split == MANI_SPLIT_TRAIN ? mani::Split::train : split == MANI_SPLIT_VAL ? mani::Split::val : mani::Split::test;
        *out = new mani_dataset{mani::load_dataset(root, r, s)};
        return MANI_OK;
    });
}

MANI_API void mani_dataset_destroy(mani_dataset* dataset) { delete dataset; }

MANI_API size_t mani_dataset_size(const mani_dataset* dataset) { return dataset ? dataset->value.size() : 0; }

MANI_API size_t mani_dataset_labeled_count(const mani_dataset* dataset) {
    if (!dataset) return 0;
    size_t n = 0;
    for (const auto& s : dataset->value.samples) n += s.mask.has_value();
    return n;
}

MANI_API mani_status mani_train(const mani_config* config, const mani_dataset* source, const mani_dataset* target,
                                const mani_dataset* target_val, const mani_dataset* source_val,
                                const mani_dataset* target_test, const mani_dataset* source_test, const char* out_dir,
                                mani_run** out) {
    if (!config || !source || !target || !out) return null_arg("config/source/target/out");
    return guarded([&] {
        mani::EvalSets sets{opt(target_val), opt(source_val), opt(target_test), opt(source_test)};
        std::optional<std::filesystem::path> dir;
        if (out_dir) dir = out_dir;
        auto result = mani::train(config->value, source->value, target->value, sets, dir);
        *out = new mani_run{std::move(result), mani::to_key_values(config->value), {}};
        return MANI_OK;
    });
}

MANI_API void mani_run_destroy(mani_run* run) { delete run; }

MANI_API const char* mani_run_summary_json(mani_run* run) { return run ? run->result.summary_json.c_str() : nullptr; }

MANI_API const char* mani_run_history_csv(mani_run* run) {
    if (!run) return nullptr;
    run->scratch = run->result.history.to_csv();
    return run->scratch.c_str();
}

MANI_API size_t mani_run_iterations(const mani_run* run) { return run ? run->result.history.iterations.size() : 0; }

MANI_API mani_status mani_run_model(const mani_run* run, mani_model** out) {
    if (!run || !out) return null_arg("run/out");
    return guarded([&] {
        const auto& chosen = run->result.best ? *run->result.best : run->result.bundle;
        *out = new mani_model{chosen.clone(), run->config_text};
        return MANI_OK;
    });
}

MANI_API mani_status mani_model_load(const char* path, const mani_config* expected, mani_model** out) {
    if (!path || !out) return null_arg("path/out");
    return guarded([&] {
        auto ckpt = mani::load_checkpoint(path);
        if (expected && expected->value.train.model.base_width != ckpt.bundle.feature_dim()) {
            return fail(MANI_ERR_MISMATCH, "feature dimension mismatch: checkpoint has " +
                                                std::to_string(ckpt.bundle.feature_dim()) + ", configuration expects " +
                                                std::to_string(expected->value.train.model.base_width));
        }
        ckpt.bundle.eval();
        *out = new mani_model{std::move(ckpt.bundle), std::move(ckpt.config_text)};
        return MANI_OK;
    });
}

MANI_API mani_status mani_model_save(const mani_model* model, const char* path) {
    if (!model || !path) return null_arg("model/path");
    return guarded([&] {
        mani::save_checkpoint(model->bundle, model->config_text, path);
        return MANI_OK;
    });
}

MANI_API void mani_model_destroy(mani_model* model) { delete model; }

MANI_API int mani_model_feature_dim(const mani_model* model) { return model ? model->bundle.feature_dim() : 0; }

MANI_API mani_status mani_evaluate(mani_model* model, const mani_dataset* dataset, mani_report** out) {
    if (!model || !dataset || !out) return null_arg("model/dataset/out");
    return guarded([&] {
        std::string hash;
        try {
            hash = mani::config_hash(mani::from_key_values(model->config_text));
        } catch (const mani::ConfigError&) {
            hash.clear();
        }
        *out = new mani_report{mani::evaluate(model->bundle, dataset->value, hash), {}};
        return MANI_OK;
    });
}

MANI_API mani_status mani_evaluate_predictions(const mani_dataset* predictions, const mani_dataset* ground_truth,
                                               mani_report** out) {
    if (!predictions || !ground_truth || !out) return null_arg("predictions/ground_truth/out");
    return guarded([&] {
        *out = new mani_report{mani::evaluate_predictions(predictions->value, ground_truth->value, "predictions"), {}};
        return MANI_OK;
    });
}

MANI_API void mani_report_destroy(mani_report* report) { delete report; }

MANI_API const char* mani_report_json(mani_report* report) {
    if (!report) return nullptr;
    report->scratch = report->value.to_json();
    return report->scratch.c_str();
}

MANI_API const char* mani_report_table(mani_report* report) {
    if (!report) return nullptr;
    report->scratch = report->value.to_table();
    return report->scratch.c_str();
}

MANI_API mani_status mani_report_aggregate(const mani_report* report, mani_metric metric, double* value) {
    if (!report || !value) return null_arg("report/value");
    const auto& a = report->value.aggregate;
    std::optional<double> v;
    switch (metric) {
        case MANI_METRIC_DICE: v = a.dice; break;
        case MANI_METRIC_AJI: v = a.aji; break;
        case MANI_METRIC_DQ: v = a.dq; break;
        case MANI_METRIC_SQ: v = a.sq; break;
        case MANI_METRIC_PQ: v = a.pq; break;
        default: return fail(MANI_ERR_INVALID_ARGUMENT, "bad metric");
    }
    if (!v) return fail(MANI_ERR_DATA, "metric unavailable (no ground-truth instance maps)");
    *value = *v;
    return MANI_OK;
}

MANI_API size_t mani_report_images(const mani_report* report) { return report ? report->value.n_images : 0; }

MANI_API mani_status mani_ablate(const mani_config* base, mani_grid grid, int seeds, int jobs,
                                 const mani_dataset* source, const mani_dataset* target,
                                 const mani_dataset* target_val, const mani_dataset* target_test, mani_ablation** out) {
    if (!base || !source || !target || !out) return null_arg("base/source/target/out");
    return guarded([&] {
        std::vector<mani::AblationCell> cells;
        std::string title;
        switch (grid) {
            case MANI_GRID_WEIGHTS:
                cells = mani::weight_grid();
                title = "MI loss weight";
                break;
            case MANI_GRID_POOLING:
                cells = mani::pooling_grid();
                title = "MI pooling type";
                break;
            case MANI_GRID_BOTH: {
                cells = mani::weight_grid();
                auto p = mani::pooling_grid();
                cells.insert(cells.end(), p.begin(), p.end());
                title = "MI loss weight and pooling type";
                break;
            }
            default: return fail(MANI_ERR_INVALID_ARGUMENT, "bad grid");
        }
        mani::EvalSets sets{opt(target_val), nullptr, opt(target_test), nullptr};
        auto rows = mani::run_ablation(cells, base->value, source->value, target->value, sets, seeds, jobs);
        *out = new mani_ablation{std::move(rows), std::move(title), {}};
        return MANI_OK;
    });
}

MANI_API void mani_ablation_destroy(mani_ablation* ablation) { delete ablation; }

MANI_API const char* mani_ablation_csv(mani_ablation* ablation) {
    if (!ablation) return nullptr;
    ablation->scratch = mani::ablation_csv(ablation->rows);
    return ablation->scratch.c_str();
}

MANI_API const char* mani_ablation_table(mani_ablation* ablation) {
    if (!ablation) return nullptr;
    ablation->scratch = mani::ablation_table(ablation->rows, ablation->title);
    return ablation->scratch.c_str();
}

MANI_API size_t mani_ablation_rows(const mani_ablation* ablation) { return ablation ? ablation->rows.size() : 0; }

MANI_API size_t mani_ablation_failed(const mani_ablation* ablation) {
    if (!ablation) return 0;
    size_t n = 0;
    for (const auto& r : ablation->rows) n += r.failed();
    return n;
}

MANI_API mani_status mani_ablation_row(const mani_ablation* ablation, size_t index, const char** label, double* mean_dice) {
    if (!ablation || !label || !mean_dice) return null_arg("ablation/label/mean_dice");
    if (index >= ablation->rows.size()) return fail(MANI_ERR_INVALID_ARGUMENT, "row index out of range");
    const auto& r = ablation->rows[index];
    *label = r.cell.label.c_str();
    if (r.failed() || !r.mean_target_dice) return fail(MANI_ERR_DATA, "row failed: " + r.error);
    *mean_dice = *r.mean_target_dice;
    return MANI_OK;
}

}  // extern "C"
