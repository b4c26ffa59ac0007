#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mani/data.hpp"
#include "mani/types.hpp"

namespace mani {

class ModelBundle;

/// 2|P & G| / (|P| + |G|); 1.0 when both are empty.
double dice_score(const Mask& pred, const Mask& gt);

/// 8-connected components, labelled 1..k in raster order of each component's first pixel.
InstanceMap extract_instances(const Mask& mask);

/// Aggregated Jaccard Index. GT instances are visited in ascending label
/// order; each takes the unused prediction with the highest IoU (lowest
/// label on ties). Unmatched GT areas and unused predictions add to the union.
double aji(const InstanceMap& gt, const InstanceMap& pred);

struct PanopticQuality {
    double dq = 0.0;
    double sq = 0.0;
    double pq = 0.0;
    int tp = 0;
    int fp = 0;
    int fn = 0;
};

/// Detection, segmentation and panoptic quality with IoU > threshold matching.
PanopticQuality panoptic(const InstanceMap& gt, const InstanceMap& pred, double iou_threshold = 0.5);

struct ImageMetrics {
    std::string id;
    double dice = 0.0;
    // Absent when the ground truth carries no instance map.
    std::optional<double> aji;
    std::optional<double> dq;
    std::optional<double> sq;
    std::optional<double> pq;
};

struct AggregateMetrics {
    double dice = 0.0;
    std::optional<double> aji;
    std::optional<double> dq;
    std::optional<double> sq;
    std::optional<double> pq;
};

struct MetricsReport {
    std::vector<ImageMetrics> per_image;
    AggregateMetrics aggregate;
    std::size_t n_images = 0;
    std::string config_hash;

    [[nodiscard]] std::string to_json() const;
    [[nodiscard]] std::string to_table() const;
};

/// Scores one predicted mask against a ground-truth sample (mask + optional instances).
ImageMetrics score_prediction(const std::string& id, const Mask& pred, const Sample& truth);
/// As above with an explicit predicted instance map instead of connected components of pred.
ImageMetrics score_prediction(const std::string& id, const Mask& pred, const InstanceMap& pred_instances,
                              const Sample& truth);

/// Builds the report from per-image rows, aggregating by unweighted mean in row order.
MetricsReport aggregate(std::vector<ImageMetrics> rows, std::string config_hash = {});

/// Evaluation-mode forward pass, logit > 0 threshold, connected components, all metrics.
/// Throws DataError on an empty dataset or a sample without a mask.
MetricsReport evaluate(ModelBundle& bundle, const DomainDataset& dataset, std::string config_hash = {});

/// Scores prediction masks (matched to ground truth by sample id).
MetricsReport evaluate_predictions(const DomainDataset& predictions, const DomainDataset& ground_truth,
                                   std::string config_hash = {});

}  // namespace mani
