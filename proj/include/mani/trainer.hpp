#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "mani/config.hpp"
#include "mani/data.hpp"
#include "mani/metrics.hpp"
#include "mani/model.hpp"

namespace mani {

enum class Phase { warmup, joint };
const char* to_string(Phase p);

struct IterationRecord {
    int iter = 0;
    Phase phase = Phase::warmup;
    double seg_loss = 0.0;
    std::optional<double> mi_estimate;  // absent in warm-up and when no triple survived
};

struct EvalRecord {
    int iter = 0;
    std::optional<double> target_val_dice;
    std::optional<double> source_val_dice;
};

struct TrainHistory {
    std::vector<IterationRecord> iterations;
    std::vector<EvalRecord> evals;

    /// iter,phase,seg_loss,mi_estimate,target_val_dice,source_val_dice; empty cells for absent values.
    [[nodiscard]] std::string to_csv() const;
};

struct StepResult {
    double seg_loss = 0.0;
    std::optional<double> mi_estimate;
};

/// Owns the single Adam optimiser over all four parts of a bundle and
/// performs warm-up and joint gradient steps.
class Trainer {
public:
    Trainer(ModelBundle& bundle, const TrainConfig& config);

    /// One step on L_seg over the source batch. Only backbone and
    /// segmentation-head parameters receive gradients.
    StepResult warmup_step(const std::vector<Sample>& source_batch);

    /// One step minimising L_seg - mi_weight * I_jsd. With mi_weight == 0 this
    /// is exactly warmup_step on the source halves.
    StepResult joint_step(const PairBatch& batch, Rng& pooling_rng);

    /// Excludes backbone parameters from updates while set.
    void set_backbone_frozen(bool frozen) { backbone_frozen_ = frozen; }

    torch::optim::Adam& optimizer() { return optimizer_; }

private:
    void apply_step(const torch::Tensor& loss, const std::vector<std::string>& ids, const char* what);

    ModelBundle& bundle_;
    TrainConfig config_;
    torch::optim::Adam optimizer_;
    bool backbone_frozen_ = false;
};

/// Optional evaluation splits. Any pointer may be null.
struct EvalSets {
    const DomainDataset* target_val = nullptr;
    const DomainDataset* source_val = nullptr;
    const DomainDataset* target_test = nullptr;
    const DomainDataset* source_test = nullptr;
};

struct TrainResult {
    ModelBundle bundle;  // final parameters
    TrainHistory history;
    std::optional<ModelBundle> best;  // best by target-val dice, when target_val was given
    int best_iter = -1;
    std::optional<double> best_target_val_dice;
    // Test metrics of the selected model (best when available, else final).
    std::optional<MetricsReport> target_test;
    std::optional<MetricsReport> source_test;
    std::string summary_json;

    ModelBundle& selected() { return best ? *best : bundle; }
};

/// Warm-up then joint training. When out_dir is set, writes best.pt, last.pt,
/// history.csv, summary.json and loss_curve.png there.
TrainResult train(const RunConfig& config, const DomainDataset& source, const DomainDataset& target,
                  const EvalSets& eval = {}, const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// One grid cell: a label plus config overrides applied on top of the base config.
struct AblationCell {
    std::string label;
    std::vector<std::pair<std::string, std::string>> overrides;
    std::optional<double> reference;  // published full-scale value, when one exists
};

struct AblationRow {
    AblationCell cell;
    std::vector<std::uint64_t> seeds;
    std::vector<double> target_dice;
    std::optional<double> mean_target_dice;
    std::string error;

    [[nodiscard]] bool failed() const { return !error.empty(); }
};

/// mi_weight in {1, 0.1, 0.01}.
std::vector<AblationCell> weight_grid();
/// pooling in {mean, max, random_pixels}.
std::vector<AblationCell> pooling_grid();

/// Trains one model per (cell, seed) from identical initialisation seeds and
/// reports target test dice (target val when no test split is given). A
/// failing cell is recorded and the rest continue. jobs > 1 runs cells on
/// worker threads.
std::vector<AblationRow> run_ablation(const std::vector<AblationCell>& grid, const RunConfig& base,
                                      const DomainDataset& source, const DomainDataset& target, const EvalSets& eval,
                                      int seeds = 1, int jobs = 1);

std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_table(const std::vector<AblationRow>& rows, const std::string& title);

}  // namespace mani
