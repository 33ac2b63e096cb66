#include <doctest.h>

#include <cmath>

#include "dynhd/error.hpp"
#include "dynhd/metrics.hpp"
#include "dynhd/simulator.hpp"
#include "dynhd/training.hpp"
#include "support.hpp"

using namespace dynhd;

namespace {

// Small and quick: 240 samples, short runs.
Dataset small_dataset(std::uint64_t seed = 0) {
    auto cfg = sim::SimulationConfig::defaults();
    cfg.n_factual = 120;
    cfg.n_hallucinated = 120;
    cfg.T = 12;
    cfg.l = 12;
    cfg.seed = seed;
    return sim::simulate_dataset(cfg);
}

TrainConfig small_config() {
    TrainConfig c;
    c.splits = {160, 40, 40};
    c.stage1.epochs = 8;
    c.stage2.epochs = 4;
    c.stage1.batch_size = 32;
    c.stage2.batch_size = 32;
    c.generator.hidden = {16};
    c.detector = {.hidden = 8, .attention_dim = 4, .head_hidden = 4};
    return c;
}

}  // namespace

TEST_CASE("auroc") {
    const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    const std::vector<int> y{0, 0, 1, 1};
    CHECK(auroc(s, y) == 0.75);
    const std::vector<double> sep{0.1, 0.2, 0.8, 0.9};
    CHECK(auroc(sep, y) == 1.0);
    const std::vector<double> tied{0.5, 0.5, 0.5, 0.5};
    CHECK(auroc(tied, y) == 0.5);

    std::vector<double> neg, cubed;
    for (double v : s) {
        neg.push_back(-v);
        cubed.push_back(v * v * v + 2.0);
    }
    CHECK(auroc(s, y) + auroc(neg, y) == doctest::Approx(1.0));
    CHECK(auroc(cubed, y) == auroc(s, y));

    nn::Rng rng(1);
    std::vector<double> rs(4000);
    std::vector<int> ry(4000);
    for (std::size_t i = 0; i < rs.size(); ++i) {
        rs[i] = nn::uniform01(rng);
        ry[i] = static_cast<int>(rng() % 2);
    }
    CHECK(std::abs(auroc(rs, ry) - 0.5) < 0.05);

    const std::vector<int> one_class{1, 1, 1, 1};
    CHECK_THROWS(auroc(s, one_class));
    const std::vector<int> bad{0, 2, 1, 1};
    CHECK_THROWS(auroc(s, bad));
    const std::vector<int> short_y{0, 1};
    CHECK_THROWS(auroc(s, short_y));
}

TEST_CASE("config validation and json") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    const auto back = TrainConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    auto bad = c;
    bad.stage2.warmup_fraction = 1.5;
    CHECK_THROWS(bad.validate());
    bad = c;
    bad.stage1.lr = 0.0;
    CHECK_THROWS(bad.validate());
    bad = c;
    bad.splits.test = 0;
    CHECK_THROWS(bad.validate());

    const auto partial = TrainConfig::from_json({{"stage2", {{"lambda1", 0.05}}}, {"ignore", "none"}, {"k", 3}});
    CHECK(partial.stage2.lambda1 == 0.05);
    CHECK(partial.stage2.lambda2 == c.stage2.lambda2);
    CHECK(partial.k == 3);
    CHECK(partial.ignore == IgnoreSpec{});
}

TEST_CASE("splits follow file order") {
    const auto s = make_splits(10, {5, 3, 2});
    CHECK(s.train == std::vector<std::size_t>{0, 1, 2, 3, 4});
    CHECK(s.validation == std::vector<std::size_t>{5, 6, 7});
    CHECK(s.test == std::vector<std::size_t>{8, 9});
    CHECK_THROWS(make_splits(9, {5, 3, 2}));
}

TEST_CASE("two-stage run") {
    const auto ds = small_dataset();
    const auto cfg = small_config();
    const auto run = run_two_stage(cfg, ds);
    const auto& rep = run.report;
    CHECK(rep.epochs.size() == 4);
    CHECK(rep.stage1_loss.size() == 9);
    CHECK(rep.n_train == 160);
    CHECK(rep.n_validation == 40);
    CHECK(rep.n_test == 40);

    double best = -1.0;
    int arg = 0;
    for (const auto& e : rep.epochs) {
        if (e.val_auroc > best) {
            best = e.val_auroc;
            arg = e.epoch;
        }
    }
    CHECK(rep.selected_epoch == arg);
    CHECK(rep.best_val_auroc == best);
    CHECK(rep.config == cfg.to_json());

    SUBCASE("same seed, same report") {
        CHECK(run_two_stage(cfg, ds).report.to_text() == rep.to_text());
    }
    SUBCASE("cross_eval on the test split reproduces the test AUROC") {
        std::vector<RawTrajectory> test(ds.trajectories.end() - 40, ds.trajectories.end());
        CHECK(cross_eval(run.model, test) == rep.test_auroc);
    }
    SUBCASE("model save and load score identically") {
        const auto path = testing::temp_path("model-roundtrip.json");
        run.model.save(path);
        const auto back = TrainedModel::load(path);
        const auto a = score_trajectories(run.model, ds.trajectories);
        const auto b = score_trajectories(back, ds.trajectories);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].logit == b[i].logit);
    }
    SUBCASE("unlabeled or single-class sets are rejected") {
        auto test = std::vector<RawTrajectory>(ds.trajectories.begin(), ds.trajectories.begin() + 10);
        test[3].label = Label::unlabeled;
        CHECK_THROWS_AS(cross_eval(run.model, test), TrainingError);
        std::vector<RawTrajectory> one;
        for (const auto& r : ds.trajectories) {
            if (r.label == Label::factual) one.push_back(r);
        }
        CHECK_THROWS_AS(cross_eval(run.model, one), TrainingError);
    }
}

TEST_CASE("zero regularizer weights leave total equal to the classification loss") {
    auto cfg = small_config();
    cfg.stage2.lambda1 = 0.0;
    cfg.stage2.lambda2 = 0.0;
    const auto rep = run_two_stage(cfg, small_dataset(1)).report;
    for (const auto& e : rep.epochs) {
        CHECK(e.total == e.cls);
        CHECK(e.path > 0.0);
    }
}

TEST_CASE("warmup ramps the regularizer weights") {
    auto cfg = small_config();
    cfg.stage2.warmup_fraction = 0.5;
    const auto rep = run_two_stage(cfg, small_dataset(2)).report;
    CHECK(rep.epochs.front().lambda1 < cfg.stage2.lambda1);
    CHECK(rep.epochs.back().lambda1 == cfg.stage2.lambda1);
    for (std::size_t i = 1; i < rep.epochs.size(); ++i) CHECK(rep.epochs[i].lambda1 >= rep.epochs[i - 1].lambda1);
}

TEST_CASE("standardization is fitted on factual training evidence") {
    auto cfg = small_config();
    cfg.standardize = true;
    const auto ds = small_dataset(3);
    const auto run = run_two_stage(cfg, ds);
    CHECK(run.model.standardizer.enabled);
    for (double s : run.model.standardizer.scale) CHECK(s > 0.0);
    const auto back = TrainedModel::from_json(run.model.to_json());
    CHECK(back.standardizer.mean == run.model.standardizer.mean);
}

TEST_CASE("dataset missing a class in training is rejected") {
    auto ds = small_dataset();
    for (auto& r : ds.trajectories) r.label = Label::factual;
    CHECK_THROWS_AS(run_two_stage(small_config(), ds), TrainingError);
}

TEST_CASE("grid search") {
    const auto ds = small_dataset(4);
    SUBCASE("size one returns its config") {
        GridSpec g;
        g.base = small_config();
        const auto r = grid_search(g, ds);
        CHECK(r.reports.size() == 1);
        CHECK(r.best.to_json() == g.base.to_json());
    }
    SUBCASE("ties favour smaller regularizer weight, then lower rates") {
        GridSpec g;
        g.base = small_config();
        g.base.stage2.epochs = 1;
        g.lambda1 = {0.4, 0.0, 0.2};
        g.threads = 2;
        const auto r = grid_search(g, ds);
        CHECK(r.reports.size() == 3);
        double best = 0.0;
        for (const auto& rep : r.reports) best = std::max(best, rep.best_val_auroc);
        CHECK(r.reports[r.best_index].best_val_auroc == best);
        const auto single = run_two_stage(g.base, ds).report;
        CHECK(best >= single.best_val_auroc);
    }
    SUBCASE("full search space size") {
        const auto g = GridSpec::search_space(small_config());
        CHECK(g.expand().size() == 2u * 3u * 3u * 3u * 9u * 9u * 2u);
        CHECK(g.expand().size() == 8748u);
    }
    SUBCASE("ranges in json") {
        const auto g = GridSpec::from_json(
            {{"axes", {{"lambda1", {{"min", 0.0}, {"max", 0.4}, {"step", 0.05}}}, {"stage2.lr", {1e-4, 1e-3}}}}});
        REQUIRE(g.lambda1.size() == 9);
        CHECK(g.lambda1.size() == 9);
        CHECK(g.lambda1.back() == doctest::Approx(0.4));
        CHECK(g.expand().size() == 18);
    }
}

TEST_CASE("a detector trained on one regime transfers to the other") {
    const auto defaults = sim::SimulationConfig::defaults();
    auto a = defaults;
    a.regimes = {defaults.regimes[0]};
    a.n_factual = a.n_hallucinated = 300;
    a.seed = 1;
    auto b = defaults;
    b.regimes = {defaults.regimes[1]};
    b.n_factual = b.n_hallucinated = 150;
    b.seed = 2;
    TrainConfig cfg;
    cfg.splits = {400, 100, 100};
    const auto run = run_two_stage(cfg, sim::simulate_dataset(a));
    CHECK(cross_eval(run.model, sim::simulate_dataset(b).trajectories) > 0.7);
}
