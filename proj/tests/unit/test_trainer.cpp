#include "doctest_torch.hpp"

#include <cmath>
#include <filesystem>
#include <json.hpp>
#include <limits>

#include "mani/config.hpp"
#include "mani/losses.hpp"
#include "mani/tensors.hpp"
#include "mani/trainer.hpp"
#include "suites.hpp"

using namespace mani;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run() {
    RunConfig run;
    run.train.model = ModelConfig{3, 8, 2, 32, 2};
    run.train.warmup_iters = 4;
    run.train.joint_iters = 4;
    run.train.eval_every = 4;
    run.synth.base.image_size = 16;
    run.synth.base.radius_range = {2.0, 4.0};
    return run;
}

struct Data {
    DomainDataset source, target, target_val;
};

Data tiny_data(const RunConfig& run, int n = 6) {
    Data d;
    d.source = generate_synthetic(run.synth.for_domain(Domain::source), n, Domain::source);
    d.target = generate_synthetic(run.synth.for_domain(Domain::target), n, Domain::target);
    d.target.role = Role::target_unlabeled;
    d.target_val = generate_synthetic(run.synth.for_domain(Domain::target), 3, Domain::target, Split::val);
    return d;
}

std::vector<torch::Tensor> snapshot(const std::vector<torch::Tensor>& ps) {
    std::vector<torch::Tensor> out;
    for (const auto& p : ps) out.push_back(p.detach().clone());
    return out;
}

bool bitwise_equal(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!torch::equal(a[i], b[i])) return false;
    return true;
}

double max_abs_diff(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, (a[i] - b[i]).abs().max().item<double>());
    return worst;
}

PairBatch batch_of(const Data& d, int n) {
    PairBatch b;
    for (int i = 0; i < n; ++i) b.pairs.push_back({d.source.samples[static_cast<std::size_t>(i)], d.target.samples[static_cast<std::size_t>(i)],
                                                    static_cast<std::size_t>(i), static_cast<std::size_t>(i)});
    return b;
}

std::vector<Sample> sources_of(const PairBatch& b) {
    std::vector<Sample> s;
    for (const auto& p : b.pairs) s.push_back(p.source);
    return s;
}

}  // namespace

TEST_CASE("warm-up leaves projection head and discriminator bitwise unchanged") {
    const auto run = tiny_run();
    const auto data = tiny_data(run);
    torch::manual_seed(0);
    ModelBundle b(run.train.model);
    Trainer t(b, run.train);
    const auto proj = snapshot(b.parameters(Part::proj_head));
    const auto disc = snapshot(b.parameters(Part::discriminator));
    const auto proj_buffers = snapshot(b.proj_head->buffers());
    const auto back = snapshot(b.parameters(Part::backbone));
    for (int i = 0; i < 3; ++i) t.warmup_step(sources_of(batch_of(data, 4)));
    CHECK(bitwise_equal(proj, snapshot(b.parameters(Part::proj_head))));
    CHECK(bitwise_equal(disc, snapshot(b.parameters(Part::discriminator))));
    CHECK(bitwise_equal(proj_buffers, snapshot(b.proj_head->buffers())));
    CHECK_FALSE(bitwise_equal(back, snapshot(b.parameters(Part::backbone))));
}

TEST_CASE("warm-up loss equals an independent forward pass before the update") {
    const auto run = tiny_run();
    const auto data = tiny_data(run);
    torch::manual_seed(1);
    ModelBundle b(run.train.model);
    auto ref = b.clone();
    const auto batch = sources_of(batch_of(data, 4));
    std::vector<const Sample*> ptrs;
    for (const auto& s : batch) ptrs.push_back(&s);
    ref.train();
    const double expected = seg_loss(ref.segment(images_to_tensor(ptrs)), masks_to_tensor(ptrs)).item<double>();
    Trainer t(b, run.train);
    CHECK(t.warmup_step(batch).seg_loss == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("joint step with zero MI weight reproduces the warm-up trajectory") {
    auto run = tiny_run();
    run.train.mi_weight = 0.0;
    const auto data = tiny_data(run);
    torch::manual_seed(2);
    ModelBundle a(run.train.model);
    auto b = a.clone();
    Trainer ta(a, run.train);
    Trainer tb(b, run.train);
    Rng rng(0);
    for (int step = 0; step < 5; ++step) {
        const auto batch = batch_of(data, 4);
        const auto ra = ta.joint_step(batch, rng);
        const auto rb = tb.warmup_step(sources_of(batch));
        CHECK_FALSE(ra.mi_estimate.has_value());
        CHECK(ra.seg_loss == rb.seg_loss);
    }
    CHECK(max_abs_diff(a.parameters(), b.parameters()) <= 1e-7);
}

TEST_CASE("all-background target predictions skip MI but still apply the segmentation step") {
    auto run = tiny_run();
    const auto data = tiny_data(run);
    torch::manual_seed(3);
    ModelBundle b(run.train.model);
    {
        torch::NoGradGuard g;
        b.seg_head->bias.fill_(-1e4);
    }
    Trainer t(b, run.train);
    const auto before = snapshot(b.parameters(Part::backbone));
    Rng rng(0);
    const auto r = t.joint_step(batch_of(data, 4), rng);
    CHECK_FALSE(r.mi_estimate.has_value());
    CHECK(std::isfinite(r.seg_loss));
    CHECK_FALSE(bitwise_equal(before, snapshot(b.parameters(Part::backbone))));
}

TEST_CASE("joint step reports a non-positive MI estimate and updates every part") {
    auto run = tiny_run();
    const auto data = tiny_data(run);
    torch::manual_seed(4);
    ModelBundle b(run.train.model);
    {
        torch::NoGradGuard g;
        b.seg_head->bias.fill_(1e4);  // every target pixel is pseudo-foreground
    }
    Trainer t(b, run.train);
    const auto proj = snapshot(b.parameters(Part::proj_head));
    const auto disc = snapshot(b.parameters(Part::discriminator));
    Rng rng(0);
    const auto r = t.joint_step(batch_of(data, 4), rng);
    REQUIRE(r.mi_estimate.has_value());
    CHECK(*r.mi_estimate <= 0.0);
    CHECK_FALSE(bitwise_equal(proj, snapshot(b.parameters(Part::proj_head))));
    CHECK_FALSE(bitwise_equal(disc, snapshot(b.parameters(Part::discriminator))));
}

TEST_CASE("non-finite loss aborts with the offending batch ids") {
    const auto run = tiny_run();
    auto data = tiny_data(run);
    data.source.samples[1].image.data[0] = std::numeric_limits<float>::quiet_NaN();
    torch::manual_seed(5);
    ModelBundle b(run.train.model);
    Trainer t(b, run.train);
    try {
        t.warmup_step(sources_of(batch_of(data, 2)));
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find(data.source.samples[1].id) != std::string::npos);
    }
}

TEST_CASE("frozen backbone is not updated") {
    const auto run = tiny_run();
    const auto data = tiny_data(run);
    torch::manual_seed(6);
    ModelBundle b(run.train.model);
    Trainer t(b, run.train);
    t.set_backbone_frozen(true);
    const auto back = snapshot(b.parameters(Part::backbone));
    const auto head = snapshot(b.parameters(Part::seg_head));
    t.warmup_step(sources_of(batch_of(data, 4)));
    CHECK(bitwise_equal(back, snapshot(b.parameters(Part::backbone))));
    CHECK_FALSE(bitwise_equal(head, snapshot(b.parameters(Part::seg_head))));
}

TEST_CASE("zero iterations returns the initialised bundle and an empty history") {
    auto run = tiny_run();
    run.train.warmup_iters = 0;
    run.train.joint_iters = 0;
    const auto data = tiny_data(run);
    torch::manual_seed(run.train.seed);
    ModelBundle fresh(run.train.model);
    auto result = train(run, data.source, data.target);
    CHECK(result.history.iterations.empty());
    CHECK(result.history.evals.empty());
    CHECK(bitwise_equal(snapshot(fresh.parameters()), snapshot(result.bundle.parameters())));
}

TEST_CASE("history shape, CSV and output files") {
    auto run = tiny_run();
    const auto data = tiny_data(run);
    const auto out = fs::temp_directory_path() / "mani_train_outputs";
    fs::remove_all(out);
    EvalSets eval;
    eval.target_val = &data.target_val;
    eval.target_test = &data.target_val;
    auto result = train(run, data.source, data.target, eval, out);
    const auto& it = result.history.iterations;
    REQUIRE(it.size() == 8);
    for (std::size_t i = 0; i < it.size(); ++i) {
        CHECK(it[i].iter == static_cast<int>(i) + 1);
        if (i < 4) {
            CHECK(it[i].phase == Phase::warmup);
            CHECK_FALSE(it[i].mi_estimate.has_value());
        } else {
            CHECK(it[i].phase == Phase::joint);
        }
    }
    CHECK(result.history.evals.size() == 2);
    for (const char* f : {"best.pt", "last.pt", "history.csv", "summary.json", "loss_curve.png"}) CHECK(fs::exists(out / f));
    const auto summary = nlohmann::json::parse(result.summary_json);
    CHECK(summary["iterations"] == 8);
    CHECK(summary["target_test"]["dice"].get<double>() >= 0.0);
    CHECK(summary["selected_model"] == "best");
    const auto csv = result.history.to_csv();
    CHECK(csv.rfind("iter,phase,seg_loss,mi_estimate,target_val_dice,source_val_dice\n", 0) == 0);
    fs::remove_all(out);
}

TEST_CASE("zero MI weight run has no MI values in its history") {
    auto run = tiny_run();
    run.train.mi_weight = 0.0;
    const auto data = tiny_data(run);
    const auto result = train(run, data.source, data.target);
    for (const auto& r : result.history.iterations) CHECK_FALSE(r.mi_estimate.has_value());
}

TEST_CASE("deterministic runs with equal seeds agree") {
    auto run = tiny_run();
    run.train.deterministic = true;
    run.train.seed = 5;
    const auto data = tiny_data(run);
    EvalSets eval;
    eval.target_val = &data.target_val;
    eval.target_test = &data.target_val;
    const auto a = train(run, data.source, data.target, eval);
    const auto b = train(run, data.source, data.target, eval);
    CHECK(a.summary_json == b.summary_json);
    CHECK(std::abs(*a.best_target_val_dice - *b.best_target_val_dice) <= 1e-6);
}

TEST_CASE("single-cell ablation matches a standalone train call") {
    auto run = tiny_run();
    run.train.seed = 2;
    const auto data = tiny_data(run);
    EvalSets eval;
    eval.target_val = &data.target_val;
    eval.target_test = &data.target_val;
    const std::vector<AblationCell> grid{{"mi_weight=0.1", {{"mi_weight", "0.1"}}, std::nullopt}};
    const auto rows = run_ablation(grid, run, data.source, data.target, eval, 1, 1);
    REQUIRE(rows.size() == 1);
    REQUIRE_FALSE(rows[0].failed());
    auto solo = run;
    solo.train.mi_weight = 0.1;
    const auto r = train(solo, data.source, data.target, eval);
    CHECK(*rows[0].mean_target_dice == r.target_test->aggregate.dice);
}

TEST_CASE("ablation grids, failure isolation, seeds and parallel jobs") {
    CHECK(weight_grid().size() == 3);
    CHECK(pooling_grid().size() == 3);
    CHECK(*weight_grid()[0].reference == 0.776);
    CHECK(*weight_grid()[2].reference == 0.751);
    CHECK(*pooling_grid()[1].reference == 0.751);
    CHECK(*pooling_grid()[2].reference == 0.771);

    auto run = tiny_run();
    run.train.warmup_iters = 2;
    run.train.joint_iters = 2;
    const auto data = tiny_data(run);
    EvalSets eval;
    eval.target_val = &data.target_val;
    std::vector<AblationCell> grid = weight_grid();
    grid.push_back({"broken", {{"pooling", "median"}}, std::nullopt});
    const auto seq = run_ablation(grid, run, data.source, data.target, eval, 2, 1);
    const auto par = run_ablation(grid, run, data.source, data.target, eval, 2, 2);
    REQUIRE(seq.size() == 4);
    CHECK(seq[3].failed());
    CHECK(ablation_csv(seq).find("FAILED") != std::string::npos);
    CHECK(ablation_table(seq, "t").find("FAILED") != std::string::npos);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(seq[i].seeds.size() == 2);
        CHECK(seq[i].target_dice.size() == 2);
        CHECK(*seq[i].mean_target_dice == doctest::Approx((seq[i].target_dice[0] + seq[i].target_dice[1]) / 2));
        CHECK(*seq[i].mean_target_dice == *par[i].mean_target_dice);
    }
}

TEST_CASE("overfit smoke test") {
    const auto r = suites::overfit_suite(500, 0.10);
    INFO(r.detail);
    CHECK(r.pass);
}

TEST_CASE("checkpoint round-trip reproduces the report") {
    const auto r = suites::checkpoint_suite();
    INFO(r.detail);
    CHECK(r.pass);
}
