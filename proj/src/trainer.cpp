#include "mani/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <future>
#include <mutex>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mani/losses.hpp"
#include "mani/pooling.hpp"
#include "mani/report.hpp"
#include "mani/tensors.hpp"

namespace mani {

const char* to_string(Phase p) { return p == Phase::warmup ? "warmup" : "joint"; }

namespace {

std::string cell(const std::optional<double>& v) {
    if (!v) return {};
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", *v);
    return buf;
}

std::vector<const Sample*> pointers(const std::vector<Sample>& samples) {
    std::vector<const Sample*> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(&s);
    return out;
}

std::vector<std::string> ids_of(const std::vector<Sample>& samples) {
    std::vector<std::string> out;
    for (const auto& s : samples) out.push_back(s.id);
    return out;
}

std::string join(const std::vector<std::string>& ids) {
    std::string out;
    for (const auto& id : ids) out += (out.empty() ? "" : ",") + id;
    return out;
}

torch::optim::AdamOptions adam_options(const TrainConfig& c) {
    return torch::optim::AdamOptions(c.learning_rate).betas({c.beta1, c.beta2});
}

// Model construction draws from the global torch generator; serialise it so
// concurrent ablation cells get reproducible initialisations.
std::mutex& init_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace

std::string TrainHistory::to_csv() const {
    std::ostringstream out;
    out << "iter,phase,seg_loss,mi_estimate,target_val_dice,source_val_dice\n";
    std::size_t e = 0;
    for (const auto& r : iterations) {
        std::optional<double> tv;
        std::optional<double> sv;
        while (e < evals.size() && evals[e].iter < r.iter) ++e;
        if (e < evals.size() && evals[e].iter == r.iter) {
            tv = evals[e].target_val_dice;
            sv = evals[e].source_val_dice;
        }
        out << r.iter << ',' << to_string(r.phase) << ',' << cell(r.seg_loss) << ',' << cell(r.mi_estimate) << ','
            << cell(tv) << ',' << cell(sv) << '\n';
    }
    return out.str();
}

Trainer::Trainer(ModelBundle& bundle, const TrainConfig& config)
    : bundle_(bundle), config_(config), optimizer_(bundle.parameters(), adam_options(config)) {
    config_.validate();
}

void Trainer::apply_step(const torch::Tensor& loss, const std::vector<std::string>& ids, const char* what) {
    if (!std::isfinite(loss.item<double>())) {
        throw NumericalError(std::string("non-finite ") + what + " on batch [" + join(ids) + "]", ids);
    }
    optimizer_.zero_grad();
    loss.backward();
    if (backbone_frozen_) {
        for (auto& p : bundle_.parameters(Part::backbone)) p.mutable_grad() = torch::Tensor();
    }
    optimizer_.step();
}

StepResult Trainer::warmup_step(const std::vector<Sample>& source_batch) {
    bundle_.train();
    const auto ptrs = pointers(source_batch);
    const auto dtype = bundle_.parameters().front().scalar_type();
    const auto images = images_to_tensor(ptrs).to(dtype);
    const auto masks = masks_to_tensor(ptrs).to(dtype);
    const auto loss = seg_loss(bundle_.segment(images), masks);
    apply_step(loss, ids_of(source_batch), "segmentation loss");
    return {loss.item<double>(), std::nullopt};
}

StepResult Trainer::joint_step(const PairBatch& batch, Rng& pooling_rng) {
    std::vector<Sample> sources;
    std::vector<Sample> targets;
    sources.reserve(batch.size());
    targets.reserve(batch.size());
    for (const auto& p : batch.pairs) {
        sources.push_back(p.source);
        targets.push_back(p.target);
    }
    if (config_.mi_weight == 0.0) {
        return warmup_step(sources);
    }

    bundle_.train();
    const auto dtype = bundle_.parameters().front().scalar_type();
    const auto src_images = images_to_tensor(pointers(sources)).to(dtype);
    const auto src_masks = masks_to_tensor(pointers(sources)).to(dtype);
    const auto tgt_images = images_to_tensor(pointers(targets)).to(dtype);

    const auto src = bundle_.forward_all(src_images);
    const auto tgt = bundle_.forward_all(tgt_images);
    const auto seg = seg_loss(src.logits, src_masks);

    std::vector<PooledPairTriple> triples;
    for (std::int64_t b = 0; b < src_images.size(0); ++b) {
        const auto pseudo = pseudo_label(tgt.logits[b][0]);
        auto t = build_triples(src.projections[b], src_masks[b][0], tgt.projections[b], pseudo, config_.pooling,
                               pooling_rng);
        triples.insert(triples.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
    }

    auto ids = ids_of(sources);
    for (const auto& t : targets) ids.push_back(t.id);

    StepResult result;
    result.seg_loss = seg.item<double>();
    if (triples.empty()) {
        apply_step(seg, ids, "segmentation loss");
        return result;
    }
    const auto mi = jsd_mi_estimate(triples, bundle_.discriminator);
    result.mi_estimate = mi.item<double>();
    if (!std::isfinite(*result.mi_estimate)) {
        throw NumericalError("non-finite MI estimate on batch [" + join(ids) + "]", ids);
    }
    apply_step(seg - config_.mi_weight * mi, ids, "joint loss");
    return result;
}

TrainResult train(const RunConfig& run, const DomainDataset& source, const DomainDataset& target, const EvalSets& eval,
                  const std::optional<std::filesystem::path>& out_dir) {
    const TrainConfig& cfg = run.train;
    cfg.validate();
    source.validate();
    if (source.role != Role::source_labeled) {
        throw DataError("training source dataset must have role source_labeled");
    }
    const int total = cfg.warmup_iters + cfg.joint_iters;
    if (total > 0) {
        target.validate();
    }
    if (cfg.deterministic) {
        at::set_num_threads(1);
        at::globalContext().setDeterministicAlgorithms(true, false);
    }

    std::optional<ModelBundle> init;
    {
        std::lock_guard lock(init_mutex());
        torch::manual_seed(cfg.seed);
        init.emplace(cfg.model);
    }
    TrainResult result{std::move(*init), {}, std::nullopt, -1, std::nullopt, std::nullopt, std::nullopt, {}};
    ModelBundle& bundle = result.bundle;
    const std::string config_text = to_key_values(run);
    const std::string hash = config_hash(run);

    if (out_dir) {
        std::filesystem::create_directories(*out_dir);
    }

    Trainer trainer(bundle, cfg);
    // Separate streams keep the image sequence independent of the MI settings.
    Rng data_rng(cfg.seed);
    Rng pool_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

    auto evaluate_now = [&](int iter) {
        EvalRecord rec{iter, std::nullopt, std::nullopt};
        if (eval.target_val) rec.target_val_dice = evaluate(bundle, *eval.target_val).aggregate.dice;
        if (eval.source_val) rec.source_val_dice = evaluate(bundle, *eval.source_val).aggregate.dice;
        result.history.evals.push_back(rec);
        if (rec.target_val_dice && (!result.best_target_val_dice || *rec.target_val_dice > *result.best_target_val_dice)) {
            result.best_target_val_dice = rec.target_val_dice;
            result.best_iter = iter;
            result.best = bundle.clone();
            if (out_dir) save_checkpoint(bundle, config_text, *out_dir / "best.pt");
        }
    };

    for (int iter = 1; iter <= total; ++iter) {
        const bool warm = iter <= cfg.warmup_iters;
        trainer.set_backbone_frozen(iter <= cfg.freeze_backbone_iters);
        PairBatch batch = sample_pair_batch(source, target, cfg.batch_size, data_rng);
        if (cfg.augment) {
            for (auto& p : batch.pairs) {
                p.source = augment_rotation(p.source, data_rng);
                p.target = augment_rotation(p.target, data_rng);
            }
        }
        StepResult step;
        if (warm) {
            std::vector<Sample> sources;
            for (auto& p : batch.pairs) sources.push_back(std::move(p.source));
            step = trainer.warmup_step(sources);
        } else {
            step = trainer.joint_step(batch, pool_rng);
        }
        result.history.iterations.push_back({iter, warm ? Phase::warmup : Phase::joint, step.seg_loss, step.mi_estimate});
        if (iter % cfg.eval_every == 0 || iter == total) {
            evaluate_now(iter);
        }
    }
    bundle.eval();

    if (out_dir) {
        save_checkpoint(bundle, config_text, *out_dir / "last.pt");
        write_text_file(*out_dir / "history.csv", result.history.to_csv());
        write_loss_plot(result.history, *out_dir / "loss_curve.png");
    }

    ModelBundle& chosen = result.selected();
    if (eval.target_test) result.target_test = evaluate(chosen, *eval.target_test, hash);
    if (eval.source_test) result.source_test = evaluate(chosen, *eval.source_test, hash);

    nlohmann::json summary;
    summary["config_hash"] = hash;
    summary["iterations"] = total;
    summary["warmup_iters"] = cfg.warmup_iters;
    summary["joint_iters"] = cfg.joint_iters;
    summary["seed"] = cfg.seed;
    summary["mi_weight"] = cfg.mi_weight;
    summary["pooling"] = to_string(cfg.pooling.kind);
    summary["selected_model"] = result.best ? "best" : "last";
    summary["best_iter"] = result.best_iter;
    summary["best_target_val_dice"] = result.best_target_val_dice ? nlohmann::json(*result.best_target_val_dice) : nlohmann::json(nullptr);
    if (!result.history.iterations.empty()) {
        const auto& last = result.history.iterations.back();
        summary["final_seg_loss"] = last.seg_loss;
    }
    auto metrics_json = [](const MetricsReport& r) { return nlohmann::json::parse(r.to_json())["aggregate"]; };
    summary["target_test"] = result.target_test ? metrics_json(*result.target_test) : nlohmann::json(nullptr);
    summary["source_test"] = result.source_test ? metrics_json(*result.source_test) : nlohmann::json(nullptr);
    result.summary_json = summary.dump(2);
    if (out_dir) {
        write_text_file(*out_dir / "summary.json", result.summary_json);
    }
    return result;
}

std::vector<AblationCell> weight_grid() {
    return {{"mi_weight=1", {{"mi_weight", "1"}}, 0.776},
            {"mi_weight=0.1", {{"mi_weight", "0.1"}}, 0.769},
            {"mi_weight=0.01", {{"mi_weight", "0.01"}}, 0.751}};
}

std::vector<AblationCell> pooling_grid() {
    return {{"pooling=mean", {{"pooling", "mean"}}, 0.776},
            {"pooling=max", {{"pooling", "max"}}, 0.751},
            {"pooling=random_pixels", {{"pooling", "random_pixels"}}, 0.771}};
}

namespace {

AblationRow run_cell(const AblationCell& c, const RunConfig& base, const DomainDataset& source,
                     const DomainDataset& target, const EvalSets& eval, int seeds) {
    AblationRow row;
    row.cell = c;
    try {
        RunConfig cfg = base;
        for (const auto& [k, v] : c.overrides) set_key(cfg, k, v);
        for (int s = 0; s < seeds; ++s) {
            RunConfig seeded = cfg;
            seeded.train.seed = base.train.seed + static_cast<std::uint64_t>(s);
            row.seeds.push_back(seeded.train.seed);
            EvalSets sets = eval;
            auto r = train(seeded, source, target, sets);
            double dice = 0.0;
            if (r.target_test) {
                dice = r.target_test->aggregate.dice;
            } else if (eval.target_val) {
                dice = evaluate(r.selected(), *eval.target_val).aggregate.dice;
            } else {
                throw DataError("ablation needs a target test or validation split");
            }
            row.target_dice.push_back(dice);
        }
        row.mean_target_dice =
            std::accumulate(row.target_dice.begin(), row.target_dice.end(), 0.0) / static_cast<double>(row.target_dice.size());
    } catch (const std::exception& e) {
        row.error = e.what();
        if (row.error.empty()) row.error = "unknown error";
    }
    return row;
}

}  // namespace

std::vector<AblationRow> run_ablation(const std::vector<AblationCell>& grid, const RunConfig& base,
                                      const DomainDataset& source, const DomainDataset& target, const EvalSets& eval,
                                      int seeds, int jobs) {
    if (grid.empty()) throw ConfigError("ablation grid is empty");
    if (seeds < 1) throw ConfigError("ablation needs at least one seed");
    std::vector<AblationRow> rows(grid.size());
    if (jobs <= 1) {
        for (std::size_t i = 0; i < grid.size(); ++i) rows[i] = run_cell(grid[i], base, source, target, eval, seeds);
        return rows;
    }
    std::size_t next = 0;
    while (next < grid.size()) {
        std::vector<std::future<AblationRow>> running;
        const std::size_t first = next;
        for (int j = 0; j < jobs && next < grid.size(); ++j, ++next) {
            running.push_back(std::async(std::launch::async, run_cell, std::cref(grid[next]), std::cref(base),
                                         std::cref(source), std::cref(target), std::cref(eval), seeds));
        }
        for (std::size_t k = 0; k < running.size(); ++k) rows[first + k] = running[k].get();
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out << "cell,seeds,mean_target_dice,per_seed_target_dice,reference,status\n";
    for (const auto& r : rows) {
        std::string seeds;
        for (auto s : r.seeds) seeds += (seeds.empty() ? "" : ";") + std::to_string(s);
        std::string per;
        for (auto d : r.target_dice) per += (per.empty() ? "" : ";") + cell(d);
        out << r.cell.label << ',' << seeds << ',' << cell(r.mean_target_dice) << ',' << per << ','
            << cell(r.cell.reference) << ',' << (r.failed() ? "FAILED" : "ok") << '\n';
    }
    return out.str();
}

std::string ablation_table(const std::vector<AblationRow>& rows, const std::string& title) {
    std::ostringstream out;
    char line[256];
    out << title << '\n';
    std::snprintf(line, sizeof line, "| %-24s | %-12s | %-22s |\n", "setting", "target dice", "full-scale reference");
    out << line;
    out << "|" << std::string(26, '-') << "|" << std::string(14, '-') << "|" << std::string(24, '-') << "|\n";
    for (const auto& r : rows) {
        const std::string value = r.failed() ? "FAILED" : cell(r.mean_target_dice).substr(0, 6);
        const std::string ref = r.cell.reference ? cell(r.cell.reference) : "-";
        std::snprintf(line, sizeof line, "| %-24s | %-12s | %-22s |\n", r.cell.label.c_str(), value.c_str(), ref.c_str());
        out << line;
    }
    return out.str();
}

}  // namespace mani
