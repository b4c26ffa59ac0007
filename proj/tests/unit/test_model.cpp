#include "doctest_torch.hpp"

#include <cmath>
#include <filesystem>

#include "mani/losses.hpp"
#include "mani/model.hpp"
#include "mani/pooling.hpp"
#include "oracles.hpp"

using namespace mani;

namespace {
const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);
ModelConfig small() { return ModelConfig{3, 8, 3, 32, 2}; }
}  // namespace

TEST_CASE("backbone shape contract and parameter count") {
    torch::manual_seed(0);
    Backbone bb(3, 16, 3);
    bb->eval();
    const auto f = bb->forward(torch::rand({1, 3, 64, 64}));
    CHECK(f.sizes() == torch::IntArrayRef({1, 16, 64, 64}));
    std::int64_t n = 0;
    for (const auto& p : bb->parameters()) n += p.numel();
    CHECK(n > 0);
    CHECK_THROWS_AS(bb->forward(torch::rand({1, 3, 62, 64})), ShapeError);
    CHECK_NOTHROW(bb->forward(torch::rand({1, 3, 20, 36})));
}

TEST_CASE("forward_all shapes, single backbone pass and eval determinism") {
    torch::manual_seed(1);
    ModelBundle b(ModelConfig{3, 16, 3, 64, 2});
    const auto x = torch::rand({2, 3, 64, 64});
    const auto before = b.backbone->forward_calls();
    auto out = b.forward_all(x);
    CHECK(b.backbone->forward_calls() == before + 1);
    CHECK(out.logits.sizes() == torch::IntArrayRef({2, 1, 64, 64}));
    CHECK(out.projections.sizes() == torch::IntArrayRef({2, 16, 64, 64}));
    CHECK(b.feature_dim() == 16);
    for (Part p : {Part::backbone, Part::seg_head, Part::proj_head, Part::discriminator}) CHECK(b.parameter_count(p) > 0);

    b.eval();
    torch::NoGradGuard g;
    const auto a1 = b.forward_all(x);
    const auto a2 = b.forward_all(x);
    CHECK(torch::equal(a1.logits, a2.logits));
    CHECK(torch::equal(a1.projections, a2.projections));
    CHECK_THROWS_AS(b.forward_all(torch::rand({2, 4, 64, 64})), ShapeError);
}

TEST_CASE("projection head output is non-negative and matches a hand-rolled 2x2 computation") {
    torch::manual_seed(2);
    const int D = 3;
    ProjectionHead head(D);
    head->to(torch::kFloat64);
    head->train();
    const auto F = torch::randn({2, D, 2, 2}, f64);
    const auto out = head->forward(F);
    CHECK(out.min().item<double>() >= 0.0);
    CHECK(out.sizes() == F.sizes());

    // Per-pixel matrix multiply, then batch statistics over (N, H, W), affine, rectify.
    const auto W = head->conv->weight.detach().reshape({D, D});
    const auto bias = head->conv->bias.detach();
    const auto gamma = head->norm->weight.detach();
    const auto beta = head->norm->bias.detach();
    std::vector<double> lin(2 * D * 4);
    for (int n = 0; n < 2; ++n)
        for (int o = 0; o < D; ++o)
            for (int p = 0; p < 4; ++p) {
                double s = bias[o].item<double>();
                for (int i = 0; i < D; ++i) s += W[o][i].item<double>() * F[n][i][p / 2][p % 2].item<double>();
                lin[static_cast<std::size_t>((n * D + o) * 4 + p)] = s;
            }
    for (int o = 0; o < D; ++o) {
        double mean = 0, var = 0;
        for (int n = 0; n < 2; ++n)
            for (int p = 0; p < 4; ++p) mean += lin[static_cast<std::size_t>((n * D + o) * 4 + p)] / 8;
        for (int n = 0; n < 2; ++n)
            for (int p = 0; p < 4; ++p) {
                const double d = lin[static_cast<std::size_t>((n * D + o) * 4 + p)] - mean;
                var += d * d / 8;
            }
        for (int n = 0; n < 2; ++n)
            for (int p = 0; p < 4; ++p) {
                const double z = (lin[static_cast<std::size_t>((n * D + o) * 4 + p)] - mean) / std::sqrt(var + 1e-5);
                const double expect = std::max(0.0, gamma[o].item<double>() * z + beta[o].item<double>());
                CHECK(out[n][o][p / 2][p % 2].item<double>() == doctest::Approx(expect).epsilon(1e-10));
            }
    }
}

TEST_CASE("projection head 1x1 weight gradient matches finite differences") {
    torch::manual_seed(3);
    const int D = 3;
    ProjectionHead head(D);
    head->to(torch::kFloat64);
    head->eval();  // running statistics make the map a fixed affine function of F
    {
        torch::NoGradGuard g;
        head->norm->running_mean.uniform_(-0.2, 0.2);
        head->norm->running_var.uniform_(0.5, 1.5);
    }
    const auto F = torch::randn({1, D, 4, 4}, f64);
    head->forward(F).sum().backward();
    const auto analytic = head->conv->weight.grad().reshape({-1}).clone();
    std::vector<double> a(analytic.data_ptr<double>(), analytic.data_ptr<double>() + analytic.numel());

    auto w = head->conv->weight.detach().reshape({-1}).clone();
    std::vector<double> w0(w.data_ptr<double>(), w.data_ptr<double>() + w.numel());
    auto f = [&](const std::vector<double>& v) {
        torch::NoGradGuard g;
        head->conv->weight.copy_(torch::tensor(v, f64).reshape({D, D, 1, 1}));
        return head->forward(F).sum().item<double>();
    };
    // A small step keeps the perturbation from crossing a ReLU kink.
    const auto numeric = oracle::numeric_gradient(f, w0, 1e-6);
    CHECK(oracle::relative_error(a, numeric) < 1e-3);
}

TEST_CASE("discriminator output shape, asymmetry and zero final layer") {
    torch::manual_seed(4);
    Discriminator d(5, 32, 2);
    const auto a = torch::randn({7, 5});
    const auto b = torch::randn({7, 5});
    CHECK(d->forward(a, b).sizes() == torch::IntArrayRef({7}));
    CHECK(d->forward(a[0], b[0]).dim() == 0);
    CHECK_FALSE(torch::allclose(d->forward(a, b), d->forward(b, a)));
    {
        torch::NoGradGuard g;
        d->output_layer()->weight.zero_();
        d->output_layer()->bias.zero_();
    }
    CHECK(d->forward(a, b).abs().max().item<double>() == 0.0);
    CHECK_THROWS_AS(d->forward(torch::randn({3, 4}), torch::randn({3, 4})), ShapeError);
}

TEST_CASE("every parameter receives a finite gradient from the joint objective") {
    torch::manual_seed(5);
    ModelBundle b(small());
    const auto src = b.forward_all(torch::rand({2, 3, 16, 16}));
    const auto tgt = b.forward_all(torch::rand({2, 3, 16, 16}));
    auto mask = torch::zeros({2, 1, 16, 16});
    mask.slice(2, 4, 10).slice(3, 4, 10).fill_(1.0);
    std::vector<PooledPairTriple> triples;
    Rng rng(0);
    for (int i = 0; i < 2; ++i) {
        // Force a non-empty target mask; the pseudo-label itself carries no gradient.
        auto t = build_triples(src.projections[i], mask[i][0], tgt.projections[i], mask[i][0], PoolingStrategy{}, rng);
        triples.insert(triples.end(), t.begin(), t.end());
    }
    const auto loss = seg_loss(src.logits, mask) - jsd_mi_estimate(triples, b.discriminator);
    loss.backward();
    for (Part p : {Part::backbone, Part::seg_head, Part::proj_head, Part::discriminator}) {
        for (const auto& param : b.parameters(p)) {
            REQUIRE(param.grad().defined());
            CHECK(torch::isfinite(param.grad()).all().item<bool>());
        }
    }
}

TEST_CASE("clone is independent and checkpoint round-trips parameters and buffers") {
    torch::manual_seed(6);
    ModelBundle b(small());
    b.forward_all(torch::rand({2, 3, 16, 16}));  // move BN running stats
    auto c = b.clone();
    const auto pb = b.parameters();
    const auto pc = c.parameters();
    REQUIRE(pb.size() == pc.size());
    for (std::size_t i = 0; i < pb.size(); ++i) CHECK(torch::equal(pb[i], pc[i]));
    {
        torch::NoGradGuard g;
        pc[0].add_(1.0);
    }
    CHECK_FALSE(torch::equal(pb[0], pc[0]));

    const auto path = std::filesystem::temp_directory_path() / "mani_model_test.pt";
    save_checkpoint(b, "seed = 3\n", path);
    auto loaded = load_checkpoint(path);
    std::filesystem::remove(path);
    CHECK(loaded.config_text == "seed = 3\n");
    CHECK(loaded.bundle.config() == b.config());
    b.eval();
    loaded.bundle.eval();
    torch::NoGradGuard g;
    const auto x = torch::rand({1, 3, 16, 16});
    CHECK(torch::equal(b.forward_all(x).logits, loaded.bundle.forward_all(x).logits));
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/model.pt"), DataError);
}

TEST_CASE("model config validation") {
    CHECK_THROWS_AS((ModelConfig{3, 0, 3, 8, 2}).validate(), ConfigError);
    CHECK_THROWS_AS((ModelConfig{3, 8, 1, 8, 2}).validate(), ConfigError);
    CHECK_THROWS_AS(ModelBundle(ModelConfig{3, 8, 3, 8, 0}), ConfigError);
}
