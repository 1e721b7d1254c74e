#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "vseg/adversarial.hpp"

using namespace vseg;

namespace {

Volume random_volume(std::array<int, 3> dims, std::mt19937_64& rng, float lo = -100.f,
                     float hi = 240.f) {
    Volume v(dims[0], dims[1], dims[2]);
    for (auto& x : v.data) x = static_cast<float>(uniform_real(rng, lo, hi));
    return v;
}

Mask random_mask(std::array<int, 3> dims, std::mt19937_64& rng) {
    Mask m(dims[0], dims[1], dims[2]);
    for (auto& x : m.data) x = static_cast<std::uint8_t>(uniform_int(rng, 0, 1));
    return m;
}

NetworkGraph<float> micro_graph(int input_size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    NetSpec spec;
    spec.base_channels = 2;
    spec.input_size = input_size;
    return NetworkGraph<float>::build(spec, rng);
}

double infinity_norm(const Volume& a, const Volume& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
    return m;
}

}  // namespace

TEST_CASE("fgsm basics") {
    std::mt19937_64 rng(1);
    Volume vol = random_volume({8, 8, 8}, rng);
    AttackConfig cfg;  // epsilon = 0.03 * 340 = 10.2

    SECTION("perturbation magnitude is epsilon wherever the gradient is nonzero") {
        Volume grad(8, 8, 8);
        for (std::size_t i = 0; i < grad.size(); ++i)
            grad.data[i] = (i % 3 == 0) ? 0.f : (i % 3 == 1 ? 2.5f : -0.01f);
        Volume adv = fgsm(vol, grad, cfg);
        for (std::size_t i = 0; i < vol.size(); ++i) {
            const double diff = static_cast<double>(adv.data[i]) - vol.data[i];
            if (grad.data[i] == 0.f)
                CHECK(diff == 0.0);
            else
                CHECK(std::abs(diff) == Catch::Approx(10.2).margin(1e-3));
        }
    }
    SECTION("zero gradient leaves the volume untouched") {
        Volume grad(8, 8, 8);
        Volume adv = fgsm(vol, grad, cfg);
        CHECK(adv.data == vol.data);
    }
    SECTION("max-norm bound holds exactly") {
        Volume grad = random_volume({8, 8, 8}, rng, -1.f, 1.f);
        Volume adv = fgsm(vol, grad, cfg);
        for (std::size_t i = 0; i < vol.size(); ++i)
            CHECK(std::abs(adv.data[i] - vol.data[i]) <= static_cast<float>(cfg.epsilon));
    }
    SECTION("invalid configs are rejected") {
        AttackConfig bad = cfg;
        bad.iters = 0;
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
        bad = cfg;
        bad.alpha = cfg.epsilon * 2;
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    }
}

TEST_CASE("volume_gradient assembly") {
    auto g = micro_graph(16, 2);
    std::mt19937_64 rng(3);

    SECTION("single full-volume window equals the patch gradient") {
        Volume vol = random_volume({16, 16, 16}, rng);
        Mask lab = random_mask({16, 16, 16}, rng);
        const auto [mean, sd] = truncated_stats(vol, -100.f, 240.f);
        auto plan = plan_windows(vol.dims, 16, 1);
        REQUIRE(plan.starts.size() == 1);
        Volume vg = volume_gradient(g, vol, lab, plan, mean, sd, false);

        Tensor<float> x(1, 1, 16, 16, 16);
        for (std::size_t i = 0; i < x.size(); ++i)
            x.data[i] = static_cast<float>((vol.data[i] - mean) / sd);
        Tensor<std::uint8_t> labt(1, 1, 16, 16, 16);
        labt.data.assign(lab.data.begin(), lab.data.end());
        g.zero_grad();
        auto acts = g.forward(x, false);
        auto r = g.loss_backward(acts, labt);
        for (std::size_t i = 0; i < vg.size(); ++i)
            CHECK(vg.data[i] == Catch::Approx(r.d_input.data[i] / sd).margin(1e-12));
    }

    SECTION("non-overlapping windows concatenate per-window gradients") {
        Volume vol = random_volume({32, 16, 16}, rng);
        Mask lab = random_mask({32, 16, 16}, rng);
        const auto [mean, sd] = truncated_stats(vol, -100.f, 240.f);
        WindowPlan plan;
        plan.patch_edge = 16;
        plan.n = 1;
        plan.starts = {{0, 0, 0}, {16, 0, 0}};
        Volume vg = volume_gradient(g, vol, lab, plan, mean, sd, false);

        for (const auto& s : plan.starts) {
            BoundingBox box{{s[0], s[1], s[2]}, {s[0] + 16, s[1] + 16, s[2] + 16}};
            Volume sub = crop(vol, box);
            Mask subm = crop(lab, box);
            auto single = plan_windows(sub.dims, 16, 1);
            Volume sg = volume_gradient(g, sub, subm, single, mean, sd, false);
            for (int z = 0; z < 16; ++z)
                for (int y = 0; y < 16; ++y)
                    for (int x = 0; x < 16; ++x)
                        REQUIRE(vg.at(s[0] + x, s[1] + y, s[2] + z) == sg.at(x, y, z));
        }
    }

    SECTION("background windows are skipped when the flag is set") {
        Volume vol = random_volume({32, 16, 16}, rng);
        Mask lab(32, 16, 16);
        lab.at(2, 3, 4) = 1;  // only the first window has foreground
        const auto [mean, sd] = truncated_stats(vol, -100.f, 240.f);
        WindowPlan plan;
        plan.patch_edge = 16;
        plan.n = 1;
        plan.starts = {{0, 0, 0}, {16, 0, 0}};
        Volume vg = volume_gradient(g, vol, lab, plan, mean, sd, true);
        bool first_nonzero = false;
        for (int x = 0; x < 16; ++x)
            for (int y = 0; y < 16; ++y)
                for (int z = 0; z < 16; ++z) {
                    if (vg.at(x, y, z) != 0.f) first_nonzero = true;
                    CHECK(vg.at(16 + x, y, z) == 0.f);
                }
        CHECK(first_nonzero);
    }

    SECTION("finite-difference spot check at 64-bit") {
        std::mt19937_64 drng(5);
        NetSpec spec;
        spec.base_channels = 2;
        spec.input_size = 16;
        auto gd = NetworkGraph<double>::build(spec, drng);
        Volume vol = random_volume({16, 16, 16}, drng);
        Mask lab = random_mask({16, 16, 16}, drng);
        const auto [mean, sd] = truncated_stats(vol, -100.f, 240.f);
        auto plan = plan_windows(vol.dims, 16, 1);
        Volume vg = volume_gradient(gd, vol, lab, plan, mean, sd, false);

        Tensor<std::uint8_t> labt(1, 1, 16, 16, 16);
        labt.data.assign(lab.data.begin(), lab.data.end());
        auto loss_at = [&](const Volume& v) {
            Tensor<double> x(1, 1, 16, 16, 16);
            for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = (v.data[i] - mean) / sd;
            auto acts = gd.forward(x, false);
            auto main_x = softmax_xent(acts.logits_main, labt);
            auto a1 = softmax_xent(acts.logits_aux1, labt);
            auto a2 = softmax_xent(acts.logits_aux2, labt);
            return main_x.loss + spec.xi1 * a1.loss + spec.xi2 * a2.loss;
        };
        const double h = 1e-3;  // intensity units
        std::uniform_int_distribution<std::size_t> pick(0, vol.size() - 1);
        for (int t = 0; t < 10; ++t) {
            const std::size_t i = pick(drng);
            Volume vp = vol, vm = vol;
            vp.data[i] += static_cast<float>(h);
            vm.data[i] -= static_cast<float>(h);
            // divide by the realized float step, not the nominal one
            const double realized = static_cast<double>(vp.data[i]) - vm.data[i];
            const double num = (loss_at(vp) - loss_at(vm)) / realized;
            const double ana = vg.data[i];
            const double scale = std::max({std::abs(num), std::abs(ana), 1e-10});
            CHECK(std::abs(num - ana) / scale < 1e-3);
        }
    }
}

TEST_CASE("ifgsm properties") {
    auto g = micro_graph(16, 7);
    std::mt19937_64 rng(11);
    Volume vol = random_volume({16, 16, 16}, rng);
    Mask lab = random_mask({16, 16, 16}, rng);
    const auto [mean, sd] = truncated_stats(vol, -100.f, 240.f);
    auto plan = plan_windows(vol.dims, 16, 1);

    SECTION("epsilon ball bound holds exactly after every iteration") {
        AttackConfig cfg;
        cfg.epsilon = 10.2;
        cfg.alpha = 3.4;
        for (int iters = 1; iters <= 5; ++iters) {
            cfg.iters = iters;
            Volume adv = ifgsm(g, vol, lab, plan, cfg, mean, sd);
            for (std::size_t i = 0; i < vol.size(); ++i)
                REQUIRE(std::abs(adv.data[i] - vol.data[i]) <= static_cast<float>(cfg.epsilon));
            CHECK(adv.dims == vol.dims);
        }
    }
    SECTION("iters = 1 with alpha = epsilon equals fgsm") {
        AttackConfig cfg;
        cfg.epsilon = 10.2;
        cfg.alpha = 10.2;
        cfg.iters = 1;
        cfg.skip_background_windows = false;
        Volume grad = volume_gradient(g, vol, lab, plan, mean, sd, false);
        Volume a = fgsm(vol, grad, cfg);
        Volume b = ifgsm(g, vol, lab, plan, cfg, mean, sd);
        CHECK(a.data == b.data);
    }
    SECTION("epsilon = 0 is the identity") {
        AttackConfig cfg;
        cfg.epsilon = 0.0;
        cfg.alpha = 0.0;
        cfg.iters = 3;
        Volume adv = ifgsm(g, vol, lab, plan, cfg, mean, sd);
        CHECK(adv.data == vol.data);
    }
    SECTION("the attack does not lower the loss on >= 95% of random cases") {
        AttackConfig cfg;  // paper setting: eps 0.03L, alpha 0.01L, 5 iters
        cfg.skip_background_windows = false;
        auto loss_at = [&](const Volume& v, const Mask& m) {
            Tensor<float> x(1, 1, 16, 16, 16);
            for (std::size_t i = 0; i < x.size(); ++i)
                x.data[i] = static_cast<float>((v.data[i] - mean) / sd);
            Tensor<std::uint8_t> labt(1, 1, 16, 16, 16);
            labt.data.assign(m.data.begin(), m.data.end());
            auto acts = g.forward(x, false);
            return softmax_xent(acts.logits_main, labt).loss;
        };
        int up = 0;
        const int cases = 40;
        for (int t = 0; t < cases; ++t) {
            Volume v = random_volume({16, 16, 16}, rng);
            Mask m = random_mask({16, 16, 16}, rng);
            const auto [mu, s] = truncated_stats(v, -100.f, 240.f);
            Volume adv = ifgsm(g, v, m, plan, cfg, mu, s);
            if (loss_at(adv, m) >= loss_at(v, m)) ++up;
        }
        CHECK(up >= static_cast<int>(0.95 * cases));
    }
}

TEST_CASE("adversarial_train with epsilon = 0 equals train step-for-step") {
    auto make_data = [] {
        std::mt19937_64 rng(13);
        Volume vol(24, 24, 24);
        Mask mask(24, 24, 24);
        for (int z = 8; z < 16; ++z)
            for (int y = 8; y < 16; ++y)
                for (int x = 8; x < 16; ++x) mask.at(x, y, z) = 1;
        for (std::size_t i = 0; i < vol.size(); ++i)
            vol.data[i] = mask.data[i] ? 1.f : static_cast<float>(uniform_real(rng, -1.0, -0.5));
        return Dataset{{vol, mask}};
    };
    auto data = make_data();

    auto run = [&](bool adversarial) {
        std::mt19937_64 rng(17);
        NetSpec spec;
        spec.base_channels = 2;
        spec.input_size = 16;
        auto g = NetworkGraph<float>::build(spec, rng);
        TrainRecipe recipe;
        recipe.iterations = 4;
        recipe.optim.max_iter = 4;
        RngPool rngs(23);
        if (adversarial) {
            AttackConfig cfg;
            cfg.epsilon = 0.0;
            cfg.alpha = 0.0;
            cfg.iters = 2;
            adversarial_train(g, data, Stage::Coarse, recipe, cfg, 1.0, rngs);
        } else {
            train(g, data, Stage::Coarse, recipe, rngs);
        }
        return g;
    };

    auto nat = run(false);
    auto adv = run(true);
    auto nu = nat.all_units();
    auto au = adv.all_units();
    for (std::size_t i = 0; i < nu.size(); ++i) {
        REQUIRE(nu[i]->w.value.data == au[i]->w.value.data);
        REQUIRE(nu[i]->b.value.data == au[i]->b.value.data);
        if (nu[i]->has_bn_relu) {
            REQUIRE(nu[i]->gamma.value.data == au[i]->gamma.value.data);
            REQUIRE(nu[i]->beta.value.data == au[i]->beta.value.data);
            REQUIRE(nu[i]->bn.running_mean.data == au[i]->bn.running_mean.data);
            REQUIRE(nu[i]->bn.running_var.data == au[i]->bn.running_var.data);
        }
    }
}

TEST_CASE("robustness_report structure") {
    auto g = micro_graph(16, 29);
    std::mt19937_64 rng(31);
    std::vector<EvalCase> cases;
    for (int i = 0; i < 2; ++i) {
        EvalCase c;
        c.truncated = random_volume({16, 16, 16}, rng);
        c.mask = Mask(16, 16, 16);
        c.mask.at(8, 8, 8) = 1;
        c.mask.at(8, 9, 8) = 1;
        cases.push_back(std::move(c));
    }

    SECTION("zero-epsilon attacks leave all columns equal and drop at 0") {
        AttackConfig cfg;
        cfg.epsilon = 0.0;
        cfg.alpha = 0.0;
        cfg.iters = 1;
        auto table = robustness_report(g, g, cases, cfg, 1, Fusion::Average);
        REQUIRE(table.rows.size() == 2);
        for (const auto& row : table.rows) {
            CHECK(row.fgsm_mean == Catch::Approx(row.clean_mean));
            CHECK(row.ifgsm_mean == Catch::Approx(row.clean_mean));
            CHECK(row.max_drop == Catch::Approx(0.0).margin(1e-12));
        }
    }
    SECTION("drop column matches recomputation from the other columns") {
        AttackConfig cfg;
        cfg.iters = 2;
        auto table = robustness_report(g, g, cases, cfg, 1, Fusion::Average);
        for (const auto& row : table.rows) {
            const double drop =
                std::max(row.clean_mean - row.fgsm_mean, row.clean_mean - row.ifgsm_mean);
            CHECK(row.max_drop == Catch::Approx(drop).margin(1e-8));
        }
    }
}
