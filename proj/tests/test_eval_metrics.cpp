#include "orapo/eval_metrics.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

using namespace orapo;

namespace {

using Labels = std::vector<std::uint8_t>;

ConfusionTally tally_all(const std::vector<Labels>& hat, const std::vector<Labels>& star) {
    ConfusionTally t(hat.front().size());
    for (std::size_t i = 0; i < hat.size(); ++i) tally(t, hat[i], star[i]);
    return t;
}

std::size_t count_lines(const std::string& s) {
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_CASE("macro PRF hand example") {
    // Label 0: tp 3, fp 1, fn 2 -> P .75, R .6, F1 2/3. Label 1 mirrors it.
    std::vector<Labels> hat, star;
    auto add = [&](int n, Labels h, Labels s) {
        for (int i = 0; i < n; ++i) {
            hat.push_back(h);
            star.push_back(s);
        }
    };
    add(3, {1, 1}, {1, 1});
    add(1, {1, 1}, {0, 0});
    add(2, {0, 0}, {1, 1});
    add(4, {0, 0}, {0, 0});
    auto t = tally_all(hat, star);
    CHECK(t.tp[0] == 3);
    CHECK(t.fp[0] == 1);
    CHECK(t.fn[0] == 2);
    CHECK(t.tn[0] == 4);
    CHECK(t.n == 10);
    auto m = macro_prf(t);
    CHECK(m.precision == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(m.recall == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(m.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("per-label conventions") {
    ConfusionTally t(3);
    tally(t, Labels{0, 1, 0}, Labels{0, 0, 1});
    tally(t, Labels{0, 1, 0}, Labels{0, 0, 1});
    auto per = per_label_prf(t);
    // Label 0: never predicted, never present.
    CHECK(per[0].precision == 0.0);
    CHECK(per[0].recall == 1.0);
    CHECK(per[0].f1 == 0.0);
    // Label 1: only false positives.
    CHECK(per[1].precision == 0.0);
    CHECK(per[1].recall == 1.0);
    CHECK(per[1].f1 == 0.0);
    // Label 2: only misses.
    CHECK(per[2].precision == 0.0);
    CHECK(per[2].recall == 0.0);
    CHECK(per[2].f1 == 0.0);

    CHECK(macro_prf(ConfusionTally(0)).f1 == 0.0);
    CHECK_THROWS_AS(tally(t, Labels{0, 1}, Labels{0, 0, 1}), ConfigError);
    CHECK_THROWS_AS(t.merge(ConfusionTally(2)), ConfigError);
}

TEST_CASE("macro equals the unweighted mean of per-label values") {
    std::mt19937_64 rng(1);
    std::bernoulli_distribution b(0.3);
    std::vector<Labels> hat(200, Labels(7)), star(200, Labels(7));
    for (std::size_t i = 0; i < 200; ++i)
        for (std::size_t l = 0; l < 7; ++l) {
            hat[i][l] = b(rng);
            star[i][l] = b(rng);
        }
    auto t = tally_all(hat, star);
    auto per = per_label_prf(t);
    double f = 0.0;
    for (std::size_t l = 0; l < 7; ++l) {
        const double tp = t.tp[l], fp = t.fp[l], fn = t.fn[l];
        CHECK(per[l].f1 == doctest::Approx(2.0 * tp / (2.0 * tp + fp + fn)).epsilon(1e-14));
        f += per[l].f1 / 7.0;
    }
    CHECK(macro_prf(t).f1 == doctest::Approx(f).epsilon(1e-14));
}

TEST_CASE("streaming tally equals batch tally and merges associatively") {
    std::mt19937_64 rng(2);
    std::bernoulli_distribution b(0.4);
    std::vector<Labels> hat(300, Labels(5)), star(300, Labels(5));
    for (std::size_t i = 0; i < 300; ++i)
        for (std::size_t l = 0; l < 5; ++l) {
            hat[i][l] = b(rng);
            star[i][l] = b(rng);
        }
    const auto whole = tally_all(hat, star);

    ConfusionTally a(5), bb(5), c(5);
    for (std::size_t i = 0; i < 300; ++i) {
        auto& target = i < 70 ? a : (i < 190 ? bb : c);
        tally(target, hat[i], star[i]);
    }
    auto left = a;
    left.merge(bb);
    left.merge(c);
    auto right_inner = bb;
    right_inner.merge(c);
    auto right = a;
    right.merge(right_inner);
    CHECK(left == whole);
    CHECK(right == whole);
    auto swapped = c;
    swapped.merge(a);
    swapped.merge(bb);
    CHECK(swapped == whole);
}

TEST_CASE("zero-reward fraction") {
    RunTelemetry tel;
    for (std::size_t s = 1; s <= 10; ++s) tel.steps.push_back({s, s % 3 == 0 ? 0.0 : 0.4, 0.05, s % 3 == 0});
    CHECK(zero_reward_fraction(tel, 10) == doctest::Approx(0.3));
    CHECK(zero_reward_fraction(tel, 3) == doctest::Approx(1.0 / 3.0));
    CHECK(zero_reward_fraction(tel, 2) == 0.0);
    CHECK(zero_reward_fraction(tel, 100) == doctest::Approx(0.3));
    CHECK(zero_reward_fraction(tel, 10, 0.5) == 1.0);
    CHECK(zero_reward_fraction(RunTelemetry{}, 5) == 0.0);
    CHECK_THROWS_AS(zero_reward_fraction(tel, 0), ConfigError);
}

TEST_CASE("csv writers") {
    const auto labels = LabelSet({"no finding", "lung opacity"});
    RunTelemetry tel;
    tel.steps.push_back({1, 0.25, 0.05, false});
    tel.steps.push_back({2, 0.0, 0.15, true});
    tel.prompts.push_back({1, "p,1", 0.5, 0.5, 0.075, 0.25, 0.1, 0.7});
    tel.checkpoints.push_back({0, {0.1, 0.2, 0.3}, {0.5, 0.1}});

    std::ostringstream steps, prompts, metrics;
    write_steps_csv(steps, tel);
    write_prompts_csv(prompts, tel);
    write_metrics_csv(metrics, tel, labels);

    CHECK(steps.str() == "step,zero_reward_batch,mean_w,mean_reward\n1,0,0.050000000000000003,0.25\n2,1,0.14999999999999999,0\n");
    CHECK(count_lines(prompts.str()) == 2);
    CHECK(prompts.str().rfind("step,prompt_id,z,z_tilde,w,mean_reward,grpo_loss,dpo_loss\n", 0) == 0);
    CHECK(prompts.str().find("\"p,1\"") != std::string::npos);
    CHECK(metrics_csv_header(labels) == "step,macro_precision,macro_recall,macro_f1,f1_no_finding,f1_lung_opacity");
    CHECK(count_lines(metrics.str()) == 2);
    CHECK(metrics.str().find("\n0,0.10000000000000001,0.20000000000000001,0.29999999999999999,0.5,0.10000000000000001\n") !=
          std::string::npos);
}
