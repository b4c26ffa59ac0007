#include "mani/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "mani/model.hpp"
#include "mani/tensors.hpp"

namespace mani {

namespace {

void require_same_shape(int h1, int w1, int h2, int w2, const char* what) {
    if (h1 != h2 || w1 != w2) {
        throw ShapeError(std::string(what) + ": shapes differ");
    }
}

// Areas per label and intersections per (gt, pred) label pair.
struct Overlap {
    std::map<std::int32_t, std::int64_t> gt_area;
    std::map<std::int32_t, std::int64_t> pred_area;
    std::map<std::pair<std::int32_t, std::int32_t>, std::int64_t> inter;
};

Overlap overlap(const InstanceMap& gt, const InstanceMap& pred) {
    require_same_shape(gt.height, gt.width, pred.height, pred.width, "instance metrics");
    Overlap o;
    for (std::size_t i = 0; i < gt.data.size(); ++i) {
        const auto g = gt.data[i];
        const auto p = pred.data[i];
        if (g > 0) ++o.gt_area[g];
        if (p > 0) ++o.pred_area[p];
        if (g > 0 && p > 0) ++o.inter[{g, p}];
    }
    return o;
}

}  // namespace

double dice_score(const Mask& pred, const Mask& gt) {
    require_same_shape(pred.height, pred.width, gt.height, gt.width, "dice_score");
    std::int64_t p = 0;
    std::int64_t g = 0;
    std::int64_t both = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool a = pred.data[i] != 0;
        const bool b = gt.data[i] != 0;
        p += a;
        g += b;
        both += a && b;
    }
    if (p + g == 0) {
        return 1.0;
    }
    return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

InstanceMap extract_instances(const Mask& mask) {
    InstanceMap out(mask.height, mask.width, 1, 0);
    std::int32_t next = 0;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(y, x) || out.at(y, x) != 0) {
                continue;
            }
            ++next;
            out.at(y, x) = next;
            queue.emplace_back(y, x);
            while (!queue.empty()) {
                const auto [cy, cx] = queue.front();
                queue.pop_front();
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = cy + dy;
                        const int nx = cx + dx;
                        if (ny < 0 || nx < 0 || ny >= mask.height || nx >= mask.width) continue;
                        if (mask.at(ny, nx) && out.at(ny, nx) == 0) {
                            out.at(ny, nx) = next;
                            queue.emplace_back(ny, nx);
                        }
                    }
                }
            }
        }
    }
    return out;
}

double aji(const InstanceMap& gt, const InstanceMap& pred) {
    const auto o = overlap(gt, pred);
    if (o.gt_area.empty() && o.pred_area.empty()) return 1.0;
    if (o.gt_area.empty() || o.pred_area.empty()) return 0.0;

    std::map<std::int32_t, bool> used;
    std::int64_t inter_sum = 0;
    std::int64_t union_sum = 0;
    for (const auto& [g, g_area] : o.gt_area) {
        std::int32_t best = 0;
        double best_iou = 0.0;
        std::int64_t best_inter = 0;
        std::int64_t best_union = 0;
        // inter is ordered by (g, p), so this range walks predictions in ascending label order.
        for (auto it = o.inter.lower_bound({g, 0}); it != o.inter.end() && it->first.first == g; ++it) {
            const auto p = it->first.second;
            if (used[p]) continue;
            const std::int64_t i = it->second;
            const std::int64_t u = g_area + o.pred_area.at(p) - i;
            const double iou = static_cast<double>(i) / static_cast<double>(u);
            if (iou > best_iou) {
                best = p;
                best_iou = iou;
                best_inter = i;
                best_union = u;
            }
        }
        if (best != 0) {
            used[best] = true;
            inter_sum += best_inter;
            union_sum += best_union;
        } else {
            union_sum += g_area;
        }
    }
    for (const auto& [p, area] : o.pred_area) {
        if (!used[p]) union_sum += area;
    }
    return static_cast<double>(inter_sum) / static_cast<double>(union_sum);
}

PanopticQuality panoptic(const InstanceMap& gt, const InstanceMap& pred, double iou_threshold) {
    const auto o = overlap(gt, pred);
    PanopticQuality q;
    double iou_sum = 0.0;
    for (const auto& [key, i] : o.inter) {
        const auto u = o.gt_area.at(key.first) + o.pred_area.at(key.second) - i;
        const double iou = static_cast<double>(i) / static_cast<double>(u);
        if (iou > iou_threshold) {
            ++q.tp;
            iou_sum += iou;
        }
    }
    q.fp = static_cast<int>(o.pred_area.size()) - q.tp;
    q.fn = static_cast<int>(o.gt_area.size()) - q.tp;
    if (o.gt_area.empty() && o.pred_area.empty()) {
        q.dq = q.sq = q.pq = 1.0;
        return q;
    }
    q.dq = q.tp / (q.tp + 0.5 * q.fp + 0.5 * q.fn);
    q.sq = q.tp > 0 ? iou_sum / q.tp : 0.0;
    q.pq = q.dq * q.sq;
    return q;
}

ImageMetrics score_prediction(const std::string& id, const Mask& pred, const Sample& truth) {
    return score_prediction(id, pred, extract_instances(pred), truth);
}

ImageMetrics score_prediction(const std::string& id, const Mask& pred, const InstanceMap& pred_inst,
                              const Sample& truth) {
    if (!truth.mask) {
        throw DataError("sample '" + truth.id + "' has no ground-truth mask to evaluate against");
    }
    ImageMetrics m;
    m.id = id;
    m.dice = dice_score(pred, *truth.mask);
    if (truth.instances) {
        m.aji = aji(*truth.instances, pred_inst);
        const auto q = panoptic(*truth.instances, pred_inst);
        m.dq = q.dq;
        m.sq = q.sq;
        m.pq = q.pq;
    }
    return m;
}

MetricsReport aggregate(std::vector<ImageMetrics> rows, std::string config_hash) {
    MetricsReport r;
    r.n_images = rows.size();
    r.config_hash = std::move(config_hash);
    double dice = 0.0;
    double sums[4] = {0, 0, 0, 0};
    std::size_t with_instances = 0;
    for (const auto& m : rows) {
        dice += m.dice;
        if (m.aji) {
            ++with_instances;
            sums[0] += *m.aji;
            sums[1] += *m.dq;
            sums[2] += *m.sq;
            sums[3] += *m.pq;
        }
    }
    if (!rows.empty()) {
        r.aggregate.dice = dice / static_cast<double>(rows.size());
    }
    if (with_instances > 0) {
        const auto n = static_cast<double>(with_instances);
        r.aggregate.aji = sums[0] / n;
        r.aggregate.dq = sums[1] / n;
        r.aggregate.sq = sums[2] / n;
        r.aggregate.pq = sums[3] / n;
    }
    r.per_image = std::move(rows);
    return r;
}

MetricsReport evaluate(ModelBundle& bundle, const DomainDataset& dataset, std::string config_hash) {
    if (dataset.empty()) {
        throw DataError("cannot evaluate on an empty dataset");
    }
    const bool was_training = bundle.backbone->is_training();
    bundle.eval();
    torch::NoGradGuard no_grad;
    const auto dtype = bundle.parameters().front().scalar_type();

    std::vector<ImageMetrics> rows;
    rows.reserve(dataset.size());
    constexpr std::size_t kChunk = 16;
    for (std::size_t start = 0; start < dataset.size(); start += kChunk) {
        std::vector<const Sample*> chunk;
        for (std::size_t i = start; i < std::min(dataset.size(), start + kChunk); ++i) {
            chunk.push_back(&dataset.samples[i]);
        }
        const auto logits = bundle.segment(images_to_tensor(chunk).to(dtype));
        for (std::size_t k = 0; k < chunk.size(); ++k) {
            const auto pred = mask_from_tensor(logits[static_cast<std::int64_t>(k)][0] > 0);
            rows.push_back(score_prediction(chunk[k]->id, pred, *chunk[k]));
        }
    }
    bundle.train(was_training);
    return aggregate(std::move(rows), std::move(config_hash));
}

MetricsReport evaluate_predictions(const DomainDataset& predictions, const DomainDataset& ground_truth,
                                   std::string config_hash) {
    if (ground_truth.empty()) {
        throw DataError("cannot evaluate on an empty dataset");
    }
    std::map<std::string, const Sample*> by_id;
    for (const auto& s : predictions.samples) {
        by_id[s.id] = &s;
    }
    std::vector<ImageMetrics> rows;
    for (const auto& truth : ground_truth.samples) {
        auto it = by_id.find(truth.id);
        if (it == by_id.end()) {
            throw DataError("no prediction for ground-truth sample '" + truth.id + "'");
        }
        const Sample& p = *it->second;
        Mask pred;
        if (p.mask) {
            pred = *p.mask;
        } else if (p.instances) {
            pred = mask_from_instances(*p.instances);
        } else {
            // Prediction stored as a plain image: foreground where the first channel exceeds 0.5.
            pred = Mask(p.image.height, p.image.width, 1, 0);
            for (int y = 0; y < p.image.height; ++y)
                for (int x = 0; x < p.image.width; ++x) pred.at(y, x) = p.image.at(y, x, 0) > 0.5F ? 1 : 0;
        }
        rows.push_back(p.instances ? score_prediction(truth.id, pred, *p.instances, truth)
                                   : score_prediction(truth.id, pred, truth));
    }
    return aggregate(std::move(rows), std::move(config_hash));
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::string fmt(const std::optional<double>& v) {
    if (!v) return "    -";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return buf;
}

}  // namespace

std::string MetricsReport::to_json() const {
    nlohmann::json j;
    j["per_image"] = nlohmann::json::array();
    for (const auto& m : per_image) {
        j["per_image"].push_back({{"id", m.id}, {"dice", m.dice}, {"aji", opt(m.aji)}, {"dq", opt(m.dq)},
                                  {"sq", opt(m.sq)}, {"pq", opt(m.pq)}});
    }
    j["aggregate"] = {{"dice", aggregate.dice}, {"aji", opt(aggregate.aji)}, {"dq", opt(aggregate.dq)},
                      {"sq", opt(aggregate.sq)}, {"pq", opt(aggregate.pq)}};
    j["n_images"] = n_images;
    j["config_hash"] = config_hash;
    return j.dump(2);
}

std::string MetricsReport::to_table() const {
    std::ostringstream out;
    out << "metric   value\n";
    out << "dice     " << fmt(aggregate.dice) << '\n';
    out << "aji      " << fmt(aggregate.aji) << '\n';
    out << "dq       " << fmt(aggregate.dq) << '\n';
    out << "sq       " << fmt(aggregate.sq) << '\n';
    out << "pq       " << fmt(aggregate.pq) << '\n';
    out << "images   " << n_images << '\n';
    return out.str();
}

}  // namespace mani
