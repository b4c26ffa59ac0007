#include "doctest_torch.hpp"

#include <set>

#include "mani/model.hpp"
#include "mani/pooling.hpp"
#include "suites.hpp"

using namespace mani;

namespace {
const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);
const torch::Tensor P22 = torch::tensor({1.0, 2.0, 3.0, 4.0}, f64).reshape({1, 2, 2});
const torch::Tensor diag = torch::tensor({1.0, 0.0, 0.0, 1.0}, f64).reshape({2, 2});
}  // namespace

TEST_CASE("pseudo_label thresholds strictly at zero and is detached") {
    CHECK(pseudo_label(torch::full({3, 3}, 3.0)).sum().item<double>() == 9.0);
    CHECK(pseudo_label(torch::full({3, 3}, -3.0)).sum().item<double>() == 0.0);
    CHECK(pseudo_label(torch::zeros({2, 2})).sum().item<double>() == 0.0);
    auto logits = torch::randn({4, 4}).set_requires_grad(true);
    CHECK_FALSE(pseudo_label(logits).requires_grad());
}

TEST_CASE("masked pooling worked values") {
    CHECK(masked_mean_pool(P22, diag)->item<double>() == 2.5);
    CHECK(masked_max_pool(P22, diag)->item<double>() == 4.0);
    CHECK(masked_mean_pool(P22, torch::ones({2, 2}, f64))->item<double>() == 2.5);
    CHECK_FALSE(masked_mean_pool(P22, torch::zeros({2, 2}, f64)).has_value());
    CHECK_FALSE(masked_max_pool(P22, torch::zeros({2, 2}, f64)).has_value());

    const auto P = torch::randn({3, 4, 4}, f64);
    auto single = torch::zeros({4, 4}, f64);
    single[2][1] = 1.0;
    CHECK(torch::equal(*masked_max_pool(P, single), P.select(1, 2).select(1, 1)));
    CHECK(torch::equal(*masked_mean_pool(P, single), P.select(1, 2).select(1, 1)));
}

TEST_CASE("pooling oracle suite") {
    const auto r = suites::pooling_suite(200);
    INFO(r.detail);
    CHECK(r.pass);
}

TEST_CASE("masked_mean_pool is linear in P") {
    const auto P = torch::randn({4, 6, 6}, f64);
    const auto Q = torch::randn({4, 6, 6}, f64);
    const auto m = (torch::rand({6, 6}, f64) > 0.5).to(torch::kFloat64);
    m[0][0] = 1.0;
    const auto lhs = *masked_mean_pool(2.5 * P - 1.5 * Q, m);
    const auto rhs = 2.5 * *masked_mean_pool(P, m) - 1.5 * *masked_mean_pool(Q, m);
    CHECK(torch::allclose(lhs, rhs, 0, 1e-12));
}

TEST_CASE("pooling is invariant under a shared spatial permutation") {
    const auto P = torch::randn({3, 5, 5}, f64);
    auto m = (torch::rand({5, 5}, f64) > 0.4).to(torch::kFloat64);
    m[1][1] = 1.0;
    const auto perm = torch::randperm(25, torch::TensorOptions().dtype(torch::kLong));
    const auto Pp = P.reshape({3, 25}).index_select(1, perm).reshape({3, 5, 5});
    const auto mp = m.reshape({25}).index_select(0, perm).reshape({5, 5});
    CHECK(torch::allclose(*masked_mean_pool(P, m), *masked_mean_pool(Pp, mp), 0, 1e-12));
    CHECK(torch::equal(*masked_max_pool(P, m), *masked_max_pool(Pp, mp)));
}

TEST_CASE("masked_mean_pool gradient is mask / |mask| per channel") {
    auto P = torch::randn({2, 3, 3}, f64).set_requires_grad(true);
    const auto m = torch::tensor({1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0}, f64).reshape({3, 3});
    masked_mean_pool(P, m)->sum().backward();
    CHECK(torch::allclose(P.grad(), (m / 4.0).unsqueeze(0).expand({2, 3, 3}), 0, 1e-15));
}

TEST_CASE("random_pixel_sample membership, forcing and determinism") {
    const auto P = torch::randn({3, 4, 4}, f64);
    auto two = torch::zeros({4, 4}, f64);
    two[0][1] = 1.0;
    two[3][2] = 1.0;
    Rng rng(1);
    const auto got = random_pixel_sample(P, two, 4, rng);
    REQUIRE(got.size() == 2);
    std::set<std::pair<int, int>> seen;
    for (const auto& v : got) {
        for (auto [y, x] : {std::pair{0, 1}, std::pair{3, 2}}) {
            if (torch::equal(v, P.select(1, y).select(1, x))) seen.insert({y, x});
        }
    }
    CHECK(seen.size() == 2);

    const auto dense = (torch::rand({4, 4}, f64) > 0.3).to(torch::kFloat64);
    Rng a(9), b(9);
    const auto x = random_pixel_sample(P, dense, 3, a);
    const auto y = random_pixel_sample(P, dense, 3, b);
    REQUIRE(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(torch::equal(x[i], y[i]));
}

TEST_CASE("build_triples composition and counting") {
    const auto Ps = torch::randn({4, 6, 6}, f64);
    const auto Pt = torch::randn({4, 6, 6}, f64);
    auto src = torch::zeros({6, 6}, f64);
    src.slice(0, 1, 4).slice(1, 1, 4).fill_(1.0);
    auto tgt = torch::zeros({6, 6}, f64);
    tgt.slice(0, 0, 2).slice(1, 0, 5).fill_(1.0);  // 10 pixels
    Rng rng(2);

    const auto mean = build_triples(Ps, src, Pt, tgt, {PoolingStrategy::Kind::mean, 4}, rng);
    REQUIRE(mean.size() == 1);
    CHECK(torch::equal(mean[0].z_s, *masked_mean_pool(Ps, src)));
    CHECK(torch::equal(mean[0].z_s_neg, *masked_mean_pool(Ps, 1.0 - src)));
    CHECK(torch::equal(mean[0].z_t, *masked_mean_pool(Pt, tgt)));

    const auto rp = build_triples(Ps, src, Pt, tgt, {PoolingStrategy::Kind::random_pixels, 4}, rng);
    REQUIRE(rp.size() == 4);
    for (const auto& t : rp) {
        CHECK(torch::equal(t.z_s, rp[0].z_s));
        CHECK(torch::equal(t.z_s_neg, rp[0].z_s_neg));
        CHECK(torch::equal(t.z_s, *masked_mean_pool(Ps, src)));
    }
    CHECK(build_triples(Ps, src, Pt, torch::zeros({6, 6}, f64), {PoolingStrategy::Kind::mean, 4}, rng).empty());
}

TEST_CASE("MI gradient never reaches the logits through the pseudo-label") {
    torch::manual_seed(4);
    ModelBundle b(ModelConfig{3, 8, 2, 16, 2});
    b.to(torch::kFloat64);
    const auto images = torch::rand({2, 3, 8, 8}, f64);
    auto out = b.forward_all(images);
    auto src = torch::zeros({8, 8}, f64);
    src.slice(0, 0, 4).fill_(1.0);
    // Force a non-empty pseudo-label regardless of the random init.
    auto logits = out.logits + 10.0;
    Rng rng(0);
    const auto triples = build_triples(out.projections[0], src, out.projections[1], pseudo_label(logits[1][0]),
                                       PoolingStrategy{}, rng);
    REQUIRE(triples.size() == 1);
    jsd_mi_estimate(triples, b.discriminator).backward();
    for (const auto& p : b.parameters(Part::seg_head)) {
        CHECK_FALSE(p.grad().defined());
    }
    bool backbone_has_grad = false;
    for (const auto& p : b.parameters(Part::backbone)) backbone_has_grad |= p.grad().defined() && p.grad().abs().sum().item<double>() > 0;
    CHECK(backbone_has_grad);
}

TEST_CASE("pooling strategy parsing and validation") {
    CHECK(parse_pooling_kind("max") == PoolingStrategy::Kind::max);
    CHECK(parse_pooling_kind("random_pixels") == PoolingStrategy::Kind::random_pixels);
    CHECK_THROWS_AS(parse_pooling_kind("median"), ConfigError);
    CHECK_THROWS_AS((PoolingStrategy{PoolingStrategy::Kind::random_pixels, 0}).validate(), ConfigError);
}
