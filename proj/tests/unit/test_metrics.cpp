#include "doctest_torch.hpp"

#include <algorithm>
#include <json.hpp>
#include <numeric>
#include <map>
#include <random>

#include "mani/data.hpp"
#include "mani/metrics.hpp"
#include "mani/model.hpp"
#include "mani/tensors.hpp"
#include "oracles.hpp"
#include "suites.hpp"

using namespace mani;

namespace {

InstanceMap from_rows(const std::vector<std::vector<int>>& rows) {
    InstanceMap m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()), 1);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) m.at(y, x) = rows[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)];
    return m;
}

/// Fresh labels from 50 upward; keep_order preserves the relative label order.
InstanceMap relabel(const InstanceMap& m, std::mt19937_64& rng, bool keep_order = false) {
    const auto labels = oracle::labels(m);
    std::vector<int> fresh(labels.size());
    std::iota(fresh.begin(), fresh.end(), 50);
    if (!keep_order) std::shuffle(fresh.begin(), fresh.end(), rng);
    std::map<int, int> to;
    std::size_t i = 0;
    for (int l : labels) to[l] = fresh[i++];
    InstanceMap out = m;
    for (auto& v : out.data)
        if (v > 0) v = to[v];
    return out;
}

InstanceMap permute(const InstanceMap& m, const std::vector<std::size_t>& perm) {
    InstanceMap out = m;
    for (std::size_t i = 0; i < perm.size(); ++i) out.data[i] = m.data[perm[i]];
    return out;
}

}  // namespace

TEST_CASE("dice_score values and symmetry") {
    Mask a(2, 4, 1), b(2, 4, 1);
    a.data = {1, 1, 0, 0, 1, 1, 0, 0};
    b.data = {0, 1, 1, 0, 0, 1, 1, 0};
    CHECK(dice_score(a, b) == doctest::Approx(0.5));
    CHECK(dice_score(a, b) == dice_score(b, a));
    CHECK(dice_score(Mask(3, 3, 1), Mask(3, 3, 1)) == 1.0);
    CHECK(dice_score(a, Mask(2, 4, 1)) == 0.0);
}

TEST_CASE("extract_instances uses 8-connectivity in raster order") {
    Mask m(4, 5, 1);
    m.data = {1, 0, 0, 0, 1,  //
              0, 1, 0, 0, 1,  //
              0, 0, 0, 0, 0,  //
              1, 1, 0, 1, 0};
    const auto inst = extract_instances(m);
    const std::vector<std::int32_t> expected{1, 0, 0, 0, 2, 0, 1, 0, 0, 2, 0, 0, 0, 0, 0, 3, 3, 0, 4, 0};
    CHECK(inst.data == expected);
}

TEST_CASE("AJI worked values") {
    // 8-pixel GT and 8-pixel prediction overlapping in 6 pixels.
    const auto gt = from_rows({{1, 1, 1, 1, 0}, {1, 1, 1, 1, 0}});
    const auto pr = from_rows({{0, 1, 1, 1, 1}, {0, 1, 1, 1, 1}});
    CHECK(aji(gt, pr) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(aji(gt, gt) == 1.0);
    CHECK(aji(gt, InstanceMap(2, 5, 1)) == 0.0);
    CHECK(aji(InstanceMap(2, 5, 1), pr) == 0.0);
    CHECK(aji(InstanceMap(2, 5, 1), InstanceMap(2, 5, 1)) == 1.0);
}

TEST_CASE("AJI is not symmetric") {
    // GT 1 claims prediction 1 first, leaving GT 2 only the one-pixel prediction 2.
    const auto gt = from_rows({{1, 1, 2, 2, 2, 2}});
    const auto pr = from_rows({{0, 1, 1, 1, 1, 2}});
    CHECK(aji(gt, pr) == doctest::Approx(2.0 / 9.0));
    CHECK(aji(pr, gt) == doctest::Approx(3.0 / 8.0));
}

TEST_CASE("AJI tie-break takes the lowest prediction label") {
    // GT 1 overlaps predictions 7 and 3 equally; 3 wins, 7 stays unmatched.
    const auto gt = from_rows({{1, 1, 0, 0}, {0, 0, 0, 0}});
    const auto pr = from_rows({{3, 7, 0, 0}, {0, 0, 0, 0}});
    CHECK(aji(gt, pr) == doctest::Approx(1.0 / (2.0 + 1.0)));
}

TEST_CASE("panoptic worked values") {
    const auto gt = from_rows({{1, 1, 1, 1, 1, 0, 0, 0, 0, 0}});
    const auto p6 = from_rows({{0, 2, 2, 2, 2, 2, 2, 0, 0, 0}});  // inter 4, union 7 -> 0.571
    auto q = panoptic(gt, p6);
    CHECK(q.tp == 1);
    CHECK(q.dq == 1.0);
    CHECK(q.sq == doctest::Approx(4.0 / 7.0));
    CHECK(q.pq == doctest::Approx(4.0 / 7.0));

    // IoU = 0.6: 3 shared of a 5-pixel union.
    const auto g = from_rows({{1, 1, 1, 1, 0}});
    const auto p = from_rows({{0, 4, 4, 4, 4}});
    q = panoptic(g, p);
    CHECK(q.dq == 1.0);
    CHECK(q.sq == doctest::Approx(0.6));
    CHECK(q.pq == doctest::Approx(0.6));

    // IoU = 0.4: 2 shared of 5.
    const auto p4 = from_rows({{0, 0, 4, 4, 4}});
    const auto g4 = from_rows({{1, 1, 1, 1, 0}});
    q = panoptic(g4, p4);
    CHECK(q.tp == 0);
    CHECK(q.fp == 1);
    CHECK(q.fn == 1);
    CHECK(q.dq == 0.0);
    CHECK(q.pq == 0.0);
}

TEST_CASE("PQ requires IoU strictly above 0.5") {
    const auto g = from_rows({{1, 1, 1, 0}});
    const auto p = from_rows({{0, 2, 2, 2}});  // IoU = 2/4
    CHECK(panoptic(g, p).tp == 0);
}

TEST_CASE("metrics oracle suite") {
    const auto r = suites::metrics_suite(100);
    INFO(r.detail);
    CHECK(r.pass);
}

TEST_CASE("metrics are invariant under order-preserving relabeling and shared spatial permutation") {
    std::mt19937_64 rng(17);
    for (int k = 0; k < 40; ++k) {
        const auto gt = oracle::random_instance_map(rng, 20, 24, 6);
        const auto pr = oracle::perturb(rng, gt);
        const double a = aji(gt, pr);
        const auto q = panoptic(gt, pr);
        // Greedy AJI visits GT labels in ascending order, so only order-preserving relabels are neutral.
        CHECK(aji(relabel(gt, rng, true), relabel(pr, rng, true)) == doctest::Approx(a).epsilon(1e-12));
        const auto q2 = panoptic(relabel(gt, rng), pr);
        CHECK(q2.pq == doctest::Approx(q.pq).epsilon(1e-12));

        std::vector<std::size_t> perm(gt.data.size());
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        const auto gp = permute(gt, perm), pp = permute(pr, perm);
        CHECK(aji(gp, pp) == doctest::Approx(a).epsilon(1e-12));
        CHECK(panoptic(gp, pp).pq == doctest::Approx(q.pq).epsilon(1e-12));
        CHECK(dice_score(mask_from_instances(gp), mask_from_instances(pp)) ==
              doctest::Approx(dice_score(mask_from_instances(gt), mask_from_instances(pr))).epsilon(1e-12));
    }
}

TEST_CASE("evaluate on a fixture equal to the model's own predictions scores 1.0") {
    torch::manual_seed(8);
    ModelBundle b(ModelConfig{3, 8, 2, 16, 2});
    SynthConfig sc;
    sc.image_size = 16;
    sc.radius_range = {2.0, 4.0};
    auto data = generate_synthetic(sc, 3, Domain::target, Split::test);
    b.eval();
    // Shift the seg head bias so that roughly half the pixels are positive, then label with it.
    {
        torch::NoGradGuard g;
        const auto logits = b.segment(images_to_tensor({&data.samples[0]}));
        b.seg_head->bias.sub_(logits.median());
    }
    for (auto& s : data.samples) {
        torch::NoGradGuard g;
        const auto logits = b.segment(images_to_tensor({&s}));
        s.mask = mask_from_tensor((logits[0][0] > 0).to(torch::kFloat32));
        s.instances = extract_instances(*s.mask);
    }
    const auto report = evaluate(b, data, "abc");
    CHECK(report.aggregate.dice == 1.0);
    CHECK(*report.aggregate.aji == 1.0);
    CHECK(*report.aggregate.dq == 1.0);
    CHECK(*report.aggregate.sq == 1.0);
    CHECK(*report.aggregate.pq == 1.0);
    for (const auto& row : report.per_image) CHECK(*row.pq == *row.dq * *row.sq);

    const auto j = nlohmann::json::parse(report.to_json());
    CHECK(j["config_hash"] == "abc");
    CHECK(j["per_image"].size() == 3);
    CHECK(j["aggregate"]["pq"] == 1.0);
    CHECK(report.to_table().find("pq") != std::string::npos);
}

TEST_CASE("evaluate rejects an empty dataset and missing masks") {
    ModelBundle b(ModelConfig{3, 8, 2, 16, 2});
    DomainDataset empty;
    CHECK_THROWS_AS(evaluate(b, empty), DataError);
    SynthConfig sc;
    sc.image_size = 16;
    sc.radius_range = {2.0, 4.0};
    auto d = generate_synthetic(sc, 1, Domain::target);
    d.samples[0].mask.reset();
    d.samples[0].instances.reset();
    d.role = Role::target_unlabeled;
    CHECK_THROWS_AS(evaluate(b, d), DataError);
}

TEST_CASE("evaluate_predictions matches by id and omits instance metrics without instance maps") {
    SynthConfig sc;
    sc.image_size = 16;
    sc.radius_range = {2.0, 4.0};
    auto gt = generate_synthetic(sc, 3, Domain::target);
    auto preds = gt;
    std::reverse(preds.samples.begin(), preds.samples.end());
    auto r = evaluate_predictions(preds, gt);
    CHECK(r.aggregate.dice == 1.0);
    CHECK(*r.aggregate.pq == 1.0);
    for (auto& s : gt.samples) s.instances.reset();
    r = evaluate_predictions(preds, gt);
    CHECK_FALSE(r.aggregate.aji.has_value());
    CHECK_FALSE(r.per_image[0].pq.has_value());
    preds.samples.pop_back();
    CHECK_THROWS_AS(evaluate_predictions(preds, gt), DataError);
}
