#include "orapo/orapo_scheduler.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace orapo;
using namespace orapo::testing;

namespace {

const PolicyDims kSmall{4, 3, 6};

PromptBatchItem random_item(Rng& rng, const PolicyParams& old, double weight, bool zero_rewards) {
    PromptBatchItem item;
    item.prompt_id = "p" + std::to_string(rng() % 1000);
    item.ctx = random_ctx(4, rng);
    SamplerConfig cfg;
    cfg.group_size = 4;
    cfg.max_len = 4;
    item.group = sample_group(old, item.ctx, cfg, rng);
    std::uniform_real_distribution<double> r(0.0, 1.0);
    for (auto& x : item.group.rewards) x = zero_rewards ? 0.0 : r(rng);
    item.gt_report = TokenSeq{{2, 4, 1}, true};
    item.weight = weight;
    return item;
}

}  // namespace

TEST_CASE("raw zero-reward rate") {
    CHECK(raw_zrr(std::vector<double>(8, 0.0)) == 1.0);
    CHECK(raw_zrr(std::vector<double>{0.2, 0, 0, 0}) == 0.75);
    CHECK(raw_zrr(std::vector<double>{0.2, 0.1, 0.9}) == 0.0);
    CHECK(raw_zrr(std::vector<double>{0.2, 0.1, 0.9}, 0.15) == doctest::Approx(1.0 / 3.0));
    CHECK_THROWS_AS(raw_zrr(std::vector<double>{}), ConfigError);
}

TEST_CASE("EMA update") {
    MixSchedule s;
    ZrrState st;
    CHECK(update_ema(st, "a", 0.0, s) == 0.0);  // unseen key starts at its first observation
    CHECK(update_ema(st, "a", 1.0, s) == 0.5);
    CHECK(update_ema(st, "a", 0.5, s) == 0.5);  // fixed point

    ZrrState g;
    update_ema(g, "x", 0.0, s);
    for (int t = 1; t <= 20; ++t) {
        const double z = update_ema(g, "x", 1.0, s);
        CHECK(z == doctest::Approx(1.0 - std::pow(0.5, t)).epsilon(1e-15));
    }
    CHECK_THROWS_AS(update_ema(st, "a", 1.5, s), InputError);
    CHECK_THROWS_AS(update_ema(st, "a", std::nan(""), s), InputError);
}

TEST_CASE("EMA contraction") {
    Rng rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double alpha : {0.0, 0.3, 0.5, 0.9}) {
        MixSchedule s;
        s.alpha = alpha;
        ZrrState a, b;
        update_ema(a, "k", u(rng), s);
        update_ema(b, "k", u(rng), s);
        for (int t = 0; t < 50; ++t) {
            const double gap = std::abs(a.ema["k"] - b.ema["k"]);
            const double z = u(rng);
            const double na = update_ema(a, "k", z, s), nb = update_ema(b, "k", z, s);
            CHECK(std::abs(na - nb) <= alpha * gap + 1e-15);
            CHECK(na >= 0.0);
            CHECK(na <= 1.0);
        }
    }
}

TEST_CASE("mixing weight endpoints and monotonicity") {
    MixSchedule s;
    CHECK(mixing_weight(1.0, s) == doctest::Approx(0.15).epsilon(1e-15));
    CHECK(mixing_weight(0.0, s) == 0.05);
    CHECK(mixing_weight(0.5, s) == doctest::Approx(0.075).epsilon(1e-15));
    double prev = -1.0;
    for (int i = 0; i <= 1000; ++i) {
        const double w = mixing_weight(i / 1000.0, s);
        CHECK(w >= prev);
        CHECK(w >= s.w_min);
        CHECK(w <= s.w_max);
        prev = w;
    }
    MixSchedule bad;
    bad.alpha = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = MixSchedule{};
    bad.w_min = 0.2;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = MixSchedule{};
    bad.gamma = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("batch loss degenerates to GRPO and DPO") {
    Rng rng(2);
    auto old = random_params(kSmall, rng, 0.6);
    auto params = old;
    params.axpy(0.1, random_params(kSmall, rng));
    auto ref = random_params(kSmall, rng, 0.6);
    GrpoConfig gc;
    DpoConfig dc;

    std::vector<PromptBatchItem> batch;
    for (int i = 0; i < 3; ++i) batch.push_back(random_item(rng, old, 0.0, false));
    auto zero = orapo_batch_loss(batch, params, ref, gc, dc);
    double grpo_mean = 0.0;
    PolicyParams grpo_grad(kSmall);
    for (const auto& it : batch) {
        auto lg = grpo_loss(it.group, params, ref, it.ctx, gc);
        grpo_mean += lg.loss / 3.0;
        grpo_grad.axpy(1.0 / 3.0, lg.grad);
    }
    CHECK(zero.loss == doctest::Approx(grpo_mean).epsilon(1e-14));
    CHECK(rel_error(zero.grad, grpo_grad) < 1e-14);
    REQUIRE(zero.parts.size() == 3);
    CHECK(zero.parts[0].pairs == 4);
    CHECK(zero.parts[0].dpo > 0.0);  // always computed for telemetry

    for (auto& it : batch) it.weight = 1.0;
    auto one = orapo_batch_loss(batch, params, ref, gc, dc);
    double dpo_mean = 0.0;
    for (const auto& it : batch) {
        auto pairs = build_pairs(it.group, it.gt_report, it.ctx, dc);
        dpo_mean += dpo_loss(pairs, params, ref, dc).loss / 3.0;
    }
    CHECK(one.loss == doctest::Approx(dpo_mean).epsilon(1e-14));
    CHECK_THROWS_AS(orapo_batch_loss(std::vector<PromptBatchItem>{}, params, ref, gc, dc), ConfigError);
}

TEST_CASE("batch loss is affine in each weight and its gradient is the mixture") {
    Rng rng(3);
    auto old = random_params(kSmall, rng, 0.6);
    auto params = old;
    params.axpy(0.1, random_params(kSmall, rng));
    auto ref = random_params(kSmall, rng, 0.6);
    GrpoConfig gc;
    DpoConfig dc;
    auto item = random_item(rng, old, 0.3, false);
    std::vector<PromptBatchItem> one{item};
    auto mixed = orapo_batch_loss(one, params, ref, gc, dc);
    auto g = grpo_loss(item.group, params, ref, item.ctx, gc);
    auto d = dpo_loss(build_pairs(item.group, item.gt_report, item.ctx, dc), params, ref, dc);
    PolicyParams want(kSmall);
    want.axpy(0.7, g.grad);
    want.axpy(0.3, d.grad);
    CHECK(rel_error(mixed.grad, want) < 1e-14);
    CHECK(mixed.loss == doctest::Approx(0.7 * g.loss + 0.3 * d.loss).epsilon(1e-14));

    // Affine in w: L(w) = L(0) + w (L(1) - L(0)).
    auto at = [&](double w) {
        auto b = one;
        b[0].weight = w;
        return orapo_batch_loss(b, params, ref, gc, dc).loss;
    };
    for (double w : {0.05, 0.1, 0.15, 0.6})
        CHECK(at(w) == doctest::Approx(at(0.0) + w * (at(1.0) - at(0.0))).epsilon(1e-12));
}

TEST_CASE("batch loss gradient matches finite differences") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        auto old = random_params(kSmall, rng, 0.6);
        auto params = old;
        params.axpy(0.05, random_params(kSmall, rng));
        auto ref = random_params(kSmall, rng, 0.6);
        GrpoConfig gc;
        gc.variant = trial % 2 ? GrpoVariant::vanilla : GrpoVariant::dr_grpo;
        DpoConfig dc;
        std::vector<PromptBatchItem> batch;
        std::uniform_real_distribution<double> w(0.05, 0.15);
        for (int i = 0; i < 2; ++i) batch.push_back(random_item(rng, old, w(rng), trial % 5 == 0));
        auto bl = orapo_batch_loss(batch, params, ref, gc, dc);
        auto f = [&](const PolicyParams& p) { return orapo_batch_loss(batch, p, ref, gc, dc).loss; };
        CHECK(rel_error(bl.grad, numeric_grad(params, f)) < 1e-4);
    }
}

TEST_CASE("prompts without pairs fall back to pure GRPO") {
    Rng rng(5);
    auto old = random_params(kSmall, rng, 0.6);
    auto item = random_item(rng, old, 0.15, false);
    for (auto& r : item.group.rollouts) {
        r.seq = item.gt_report;
        r.token_logp = token_log_probs(old, item.ctx, item.gt_report);
    }
    std::vector<PromptBatchItem> one{item};
    GrpoConfig gc;
    auto bl = orapo_batch_loss(one, old, old, gc, DpoConfig{});
    CHECK(bl.parts[0].pairs == 0);
    CHECK(bl.parts[0].weight == 0.0);
    CHECK(bl.parts[0].dpo == 0.0);
    CHECK(bl.loss == doctest::Approx(grpo_loss(item.group, old, old, item.ctx, gc).loss).epsilon(1e-15));
}

TEST_CASE("signal recovery on an all-zero batch") {
    Rng rng(6);
    auto old = random_params(kSmall, rng, 0.6);
    auto ref = random_params(kSmall, rng, 0.6);
    GrpoConfig gc;
    gc.lambda_kl = 0.0;
    DpoConfig dc;
    std::vector<PromptBatchItem> batch;
    for (int i = 0; i < 4; ++i) batch.push_back(random_item(rng, old, 0.15, true));
    auto grpo_only = batch;
    for (auto& it : grpo_only) it.weight = 0.0;
    CHECK(orapo_batch_loss(grpo_only, old, ref, gc, dc).grad.norm() == 0.0);

    auto mixed = orapo_batch_loss(batch, old, ref, gc, dc);
    CHECK(mixed.grad.norm() > 0.0);
    PolicyParams want(kSmall);
    for (const auto& it : batch)
        want.axpy(0.15 / 4.0, dpo_loss(build_pairs(it.group, it.gt_report, it.ctx, dc), old, ref, dc).grad);
    CHECK(rel_error(mixed.grad, want) < 1e-14);
}
