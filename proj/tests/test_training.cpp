#include <catch2/catch.hpp>

#include <cmath>

#include "gascn/grad_check.hpp"
#include "gascn/training.hpp"
#include "test_helpers.hpp"

using namespace gascn;
using namespace gascn::train;
using test_helpers::random_cloud;
using test_helpers::random_tensor;

namespace {

model::ModelConfig tiny_config() {
    model::ModelConfig c;
    c.input_k = 4;
    c.n_coarse = 8;
    c.coarse_k = 3;
    c.grid_n = 2;
    c.gat_dim = 5;
    c.cart_dim = 4;
    c.latent_dim = 6;
    c.mlp_cart_hidden = {4};
    c.coarse_fc_hidden = {6, 8};
    c.gcn_dim = 4;
    c.map_coarse_dim = 4;
    c.map_global_dim = 4;
    c.normal_hidden = {5};
    c.sigma_hidden = {4, 4};
    c.refine_hidden = {5, 5};
    return c;
}

std::vector<data::TrainInstance> toy_dataset(std::size_t n, Rng& rng) {
    std::vector<data::TrainInstance> out;
    for (std::size_t i = 0; i < n; ++i) {
        data::TrainInstance inst;
        inst.id = std::to_string(i);
        inst.category = i % 2 == 0 ? "even" : "odd";
        inst.gt = data::gen_primitive(i % 2 == 0 ? "sphere" : "box", 1.0, 0.7, 0.5, 96,
                                      mix_seed(400, i));
        inst.partial = data::simulate_partial_view(inst.gt, test_helpers::random_unit(rng), 24);
        if (inst.partial.size() < 12) inst.partial = inst.gt;
        out.push_back(std::move(inst));
    }
    return out;
}

}  // namespace

TEST_CASE("combined_loss values", "[training]") {
    ad::Tape tape;
    geo::PointCloud gt;
    gt.points = {{0, 0, 0}};

    SECTION("alpha = 0 reduces to the coarse term") {
        auto coarse = ad::Tensor::from_data({1, 3}, {3, 4, 0});
        auto fine = ad::Tensor::from_data({1, 3}, {100, 0, 0});
        auto r = combined_loss(tape, coarse, fine, gt, 0.0, geo::CdVariant::Unsquared);
        CHECK(r.loss->data[0] == Approx(10.0));
        CHECK(r.coarse_cd == Approx(10.0));
        CHECK(r.fine_cd == Approx(200.0));
    }

    SECTION("coarse = fine = gt gives zero") {
        auto c = ad::Tensor::from_data({1, 3}, {0, 0, 0});
        auto r = combined_loss(tape, c, c, gt, 0.5, geo::CdVariant::Unsquared);
        CHECK(r.loss->data[0] == 0.0);
    }

    SECTION("one-point clouds: 10 + 0.01 * 4 = 10.04") {
        auto coarse = ad::Tensor::from_data({1, 3}, {3, 4, 0});   // CD 5+5
        auto fine = ad::Tensor::from_data({1, 3}, {0, 0, 2});     // CD 2+2
        auto r = combined_loss(tape, coarse, fine, gt, 0.01, geo::CdVariant::Unsquared);
        CHECK(r.loss->data[0] == Approx(10.04));
    }

    SECTION("empty ground truth errors") {
        auto c = ad::Tensor::from_data({1, 3}, {0, 0, 0});
        geo::PointCloud empty;
        CHECK_THROWS_AS(combined_loss(tape, c, c, empty, 0.5, geo::CdVariant::Unsquared),
                        ShapeError);
    }

    SECTION("loss gradient reaches both outputs") {
        Rng rng = make_rng(61);
        geo::PointCloud target = random_cloud(20, rng);
        auto coarse = random_tensor({8, 3}, rng, -0.4, 0.4);
        auto fine = random_tensor({25, 3}, rng, -0.4, 0.4);
        auto fc = [&](ad::Tape& t, const ad::TensorPtr& x) {
            auto r = combined_loss(t, x, fine, target, 0.7, geo::CdVariant::Unsquared);
            return r.loss;
        };
        auto rc = ad::grad_check(fc, coarse, 1e-6, 1e-5);
        INFO(rc.summary());
        if (!rc.kink_near) CHECK(rc.passed);

        auto ff = [&](ad::Tape& t, const ad::TensorPtr& x) {
            auto r = combined_loss(t, coarse, x, target, 0.7, geo::CdVariant::Unsquared);
            return r.loss;
        };
        auto rf = ad::grad_check(ff, fine, 1e-6, 1e-5);
        INFO(rf.summary());
        if (!rf.kink_near) CHECK(rf.passed);
    }
}

TEST_CASE("alpha_schedule", "[training]") {
    TrainConfig cfg;
    cfg.epochs = 200;

    CHECK(alpha_schedule(0, cfg) == 0.01);
    CHECK(alpha_schedule(100, cfg) == Approx(1.0));
    CHECK(alpha_schedule(199, cfg) == Approx(1.0));
    CHECK(alpha_schedule(50, cfg) == Approx((0.01 + 1.0) / 2.0));

    SECTION("non-decreasing") {
        double prev = -1.0;
        for (std::size_t e = 0; e < cfg.epochs; ++e) {
            const double a = alpha_schedule(e, cfg);
            CHECK(a >= prev);
            prev = a;
        }
    }

    SECTION("invalid configurations rejected") {
        TrainConfig bad = cfg;
        bad.alpha_initial = 0.0;
        CHECK_THROWS_AS(alpha_schedule(0, bad), ConfigError);
        bad = cfg;
        bad.alpha_ramp_fraction = 1.5;
        CHECK_THROWS_AS(alpha_schedule(0, bad), ConfigError);
    }
}

TEST_CASE("adam_step", "[training]") {
    model::ModelConfig mcfg = tiny_config();
    auto params = model::init_params(mcfg, 17);
    auto state = OptimizerState::for_params(params);

    SECTION("zero gradients leave parameters unchanged") {
        auto before = params.at("gat0.W")->data;
        params.zero_grads();
        adam_step(params, state, 1e-3);
        CHECK(params.at("gat0.W")->data == before);
        CHECK(state.step_count == 1);
    }

    SECTION("first step moves by about -lr * sign(g)") {
        params.zero_grads();
        auto w = params.at("gat0.W");
        w->grad[0] = 3.7;
        w->grad[1] = -0.004;
        const double before0 = w->data[0], before1 = w->data[1];
        adam_step(params, state, 1e-3);
        CHECK(w->data[0] - before0 == Approx(-1e-3).margin(1e-6 * 1e-3 + 1e-12));
        CHECK(w->data[1] - before1 == Approx(1e-3).margin(3e-3 * 1e-3));
    }

    SECTION("non-finite gradient names the parameter") {
        params.zero_grads();
        params.at("mlp_cart.0.W")->grad[0] = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_WITH(adam_step(params, state, 1e-3), Catch::Contains("mlp_cart.0.W"));
    }

    SECTION("100 steps reach the optimum of a convex quadratic within 1e-6") {
        // f(x) = (x - 5e-4)^2 from x = 0 at lr 2e-5; the analytic optimum is
        // the oracle. Adam's hover amplitude scales with lr, so the distance
        // is a couple dozen learning rates.
        model::ModelParams toy;
        toy.tensors["x"] = ad::Tensor::from_data({1}, {0.0}, true);
        auto st = OptimizerState::for_params(toy);
        auto x = toy.tensors["x"];
        const double opt = 5e-4;
        for (int i = 0; i < 100; ++i) {
            x->zero_grad();
            x->grad[0] = 2.0 * (x->data[0] - opt);
            adam_step(toy, st, 2e-5);
        }
        CHECK(std::abs(x->data[0] - opt) < 1e-6);
    }

    SECTION("first-step direction is invariant to gradient rescaling") {
        model::ModelParams a, b;
        a.tensors["x"] = ad::Tensor::from_data({1}, {1.0}, true);
        b.tensors["x"] = ad::Tensor::from_data({1}, {1.0}, true);
        auto sa = OptimizerState::for_params(a);
        auto sb = OptimizerState::for_params(b);
        a.tensors["x"]->grad[0] = 0.3;
        b.tensors["x"]->grad[0] = 3000.0;
        adam_step(a, sa, 1e-2);
        adam_step(b, sb, 1e-2);
        CHECK(a.tensors["x"]->data[0] == Approx(b.tensors["x"]->data[0]).margin(1e-6));
    }
}

TEST_CASE("train_epoch", "[training]") {
    Rng rng = make_rng(62);
    model::ModelConfig mcfg = tiny_config();
    auto dataset = toy_dataset(6, rng);

    TrainConfig tcfg;
    tcfg.epochs = 4;
    tcfg.batch_size = 2;
    tcfg.lr_initial = 1e-3;
    tcfg.lr_decay = 1.0;
    tcfg.seed = 7;
    TrainOptions opts;
    opts.max_input_points = 64;
    opts.deterministic = true;

    SECTION("batch size one steps once per instance") {
        auto params = model::init_params(mcfg, 3);
        auto state = OptimizerState::for_params(params);
        TrainConfig one = tcfg;
        one.batch_size = 1;
        auto metrics = train_epoch(params, mcfg, dataset, one, opts, 0, state);
        CHECK(metrics.optimizer_steps == dataset.size());
        CHECK(state.step_count == dataset.size());
    }

    SECTION("identical seeds give identical metric traces and parameters") {
        auto run = [&] {
            auto params = model::init_params(mcfg, 3);
            auto state = OptimizerState::for_params(params);
            std::vector<std::string> lines;
            for (std::size_t e = 0; e < 3; ++e) {
                auto m = train_epoch(params, mcfg, dataset, tcfg, opts, e, state);
                lines.push_back(metrics_json_line(m));
            }
            return std::make_pair(lines, params.at("coarse_fc.0.W")->data);
        };
        auto [lines1, w1] = run();
        auto [lines2, w2] = run();
        CHECK(lines1 == lines2);
        CHECK(w1 == w2);
    }

    SECTION("threaded accumulation matches within tolerance and trains") {
        auto params = model::init_params(mcfg, 3);
        auto state = OptimizerState::for_params(params);
        TrainOptions threaded = opts;
        threaded.deterministic = false;
        threaded.threads = 3;
        auto m = train_epoch(params, mcfg, dataset, tcfg, threaded, 0, state);
        CHECK(m.optimizer_steps == (dataset.size() + 1) / 2);
        CHECK(std::isfinite(m.mean_loss));
    }

    SECTION("loss decreases over a short run") {
        auto params = model::init_params(mcfg, 3);
        auto state = OptimizerState::for_params(params);
        TrainConfig fast = tcfg;
        fast.lr_initial = 3e-3;
        fast.epochs = 12;
        double first = 0.0, last = 0.0;
        for (std::size_t e = 0; e < fast.epochs; ++e) {
            auto m = train_epoch(params, mcfg, dataset, fast, opts, e, state);
            if (e == 0) first = m.mean_loss;
            last = m.mean_loss;
        }
        CHECK(last < first);
    }
}

TEST_CASE("evaluate", "[training]") {
    Rng rng = make_rng(63);
    auto dataset = toy_dataset(6, rng);

    SECTION("an oracle completer scores zero") {
        auto report = evaluate_with(dataset, [](const data::TrainInstance& inst) {
            return inst.gt;
        });
        CHECK(report.overall_unsquared == 0.0);
        CHECK(report.overall_squared == 0.0);
        CHECK(report.count == dataset.size());
    }

    SECTION("overall equals the instance-count-weighted mean of categories") {
        auto report = evaluate_with(dataset, [&](const data::TrainInstance& inst) {
            // a deliberately biased completer: constant offset per category
            geo::PointCloud out = inst.gt;
            const double off = inst.category == "even" ? 0.02 : 0.07;
            for (auto& p : out.points) p.x += off;
            return out;
        });
        double weighted = 0.0;
        std::size_t total = 0;
        for (const auto& [name, cat] : report.per_category) {
            weighted += cat.mean_unsquared * double(cat.count);
            total += cat.count;
        }
        CHECK(total == report.count);
        CHECK(report.overall_unsquared == Approx(weighted / double(total)).margin(1e-12));
    }

    SECTION("model evaluation is deterministic") {
        model::ModelConfig mcfg = tiny_config();
        auto params = model::init_params(mcfg, 21);
        auto r1 = evaluate(params, mcfg, dataset, 64, 5);
        auto r2 = evaluate(params, mcfg, dataset, 64, 5);
        CHECK(r1.overall_unsquared == r2.overall_unsquared);
        CHECK(r1.overall_squared == r2.overall_squared);
    }
}

TEST_CASE("metrics json line is stable", "[training]") {
    EpochMetrics m;
    m.epoch = 3;
    m.lr = 1e-4;
    m.alpha = 0.01;
    m.mean_coarse_cd = 0.25;
    m.mean_fine_cd = 0.125;
    m.mean_loss = 0.2512345;
    const std::string line = metrics_json_line(m);
    CHECK(line.find("\"epoch\":3") != std::string::npos);
    CHECK(line.find("\"wall_seconds\":0") != std::string::npos);
    CHECK(line == metrics_json_line(m));
}
