#include "orapo/synth_env.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

using namespace orapo;

namespace {

SynthEnv default_env(EnvConfig cfg = {}) {
    auto labels = LabelSet::chest_xray14();
    auto profile = PrevalenceProfile::chest_xray_default(labels);
    return SynthEnv(labels, profile, cfg);
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

std::uint64_t fnv1a(const std::vector<StudyRecord>& data) {
    std::uint64_t h = 1469598103934665603ULL;
    auto feed = [&](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ULL;
    };
    for (const auto& r : data) {
        feed(r.prompt_id.data(), r.prompt_id.size());
        feed(r.ctx.data(), r.ctx.size() * sizeof(double));
        feed(r.z_star.z_star.data(), r.z_star.z_star.size());
        feed(r.gt_text.data(), r.gt_text.size());
    }
    return h;
}

}  // namespace

TEST_CASE("default profile") {
    const auto labels = LabelSet::chest_xray14();
    const auto p = PrevalenceProfile::chest_xray_default(labels);
    CHECK(p.marginals[*labels.find("pneumonia")] == 0.027);
    CHECK(p.marginals[*labels.find("fracture")] == 0.0405);
    REQUIRE(p.fallback_label.has_value());
    CHECK(*p.fallback_label == *labels.find("no finding"));
    double none = 1.0;
    for (std::size_t l = 0; l < labels.size(); ++l)
        if (l != *p.fallback_label) none *= 1.0 - p.marginals[l];
    CHECK(p.marginals[*p.fallback_label] == doctest::Approx(none).epsilon(1e-15));
    CHECK_NOTHROW(p.validate(labels.size()));

    auto bad = p;
    bad.marginals[3] = 1.0;
    CHECK_THROWS_AS(bad.validate(labels.size()), ConfigError);
    bad = p;
    bad.correlation_pairs.push_back({5, 2, 2.0});
    CHECK_THROWS_AS(bad.validate(labels.size()), ConfigError);
    CHECK_THROWS_AS(p.validate(13), ConfigError);
}

TEST_CASE("zero signal and noise give a zero context") {
    EnvConfig cfg;
    cfg.signal_strength = 0.0;
    cfg.noise_std = 0.0;
    auto env = default_env(cfg);
    Rng rng(1);
    for (int i = 0; i < 20; ++i) CHECK(env.sample_study(rng, "x").ctx == ContextVec(32, 0.0));
    cfg.noise_std = -1.0;
    CHECK_THROWS_AS(default_env(cfg), ConfigError);
}

TEST_CASE("empirical marginals match the profile") {
    auto env = default_env();
    Rng rng(2);
    const std::size_t n = 100000;
    std::vector<double> freq(14, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        auto s = env.sample_study(rng, "x");
        for (std::size_t l = 0; l < 14; ++l) freq[l] += s.z_star.z_star[l];
    }
    for (std::size_t l = 0; l < 14; ++l)
        CHECK(std::abs(freq[l] / n - env.profile().marginals[l]) < 0.005);
}

TEST_CASE("ground-truth reports") {
    auto env = default_env();
    Rng rng(3);
    RewardConfig rc;
    const auto fallback = *env.profile().fallback_label;
    const auto vocab = env.vocabulary();
    for (int i = 0; i < 2000; ++i) {
        auto s = env.sample_study(rng, "x");
        const auto& z = s.z_star.z_star;
        std::size_t others = 0;
        for (std::size_t l = 0; l < 14; ++l)
            if (l != fallback) others += z[l];
        CHECK((z[fallback] == 1) == (others == 0));

        const auto scored = score_report(s.gt_text, s.z_star, env.labels(), rc);
        CHECK(scored.reward >= 0.999 * 5.0 / (5.0 + rc.xi));
        CHECK(tokens_from_facts(scored.extraction.facts, vocab) == s.gt_report);

        auto facts = facts_from_tokens(s.gt_report, vocab);
        std::size_t negs = 0;
        for (std::size_t k = 0; k < facts.size(); ++k) {
            if (k > 0) CHECK(facts[k - 1].label < facts[k].label);
            if (facts[k].polarity == Polarity::negative) {
                ++negs;
                CHECK(z[facts[k].label] == 0);
                CHECK(facts[k].label != fallback);
            } else {
                CHECK(z[facts[k].label] == 1);
            }
        }
        CHECK(negs == 2);
        CHECK(facts.size() == s.z_star.positives() + 2);
    }
}

TEST_CASE("ground truth is reward-optimal") {
    auto env = default_env();
    Rng rng(4);
    RewardConfig rc;
    std::uniform_int_distribution<std::size_t> len(0, 6), lab(0, 13);
    std::bernoulli_distribution neg(0.5);
    for (int i = 0; i < 300; ++i) {
        auto s = env.sample_study(rng, "x");
        const double best = score_report(s.gt_text, s.z_star, env.labels(), rc).reward;
        for (int k = 0; k < 20; ++k) {
            std::vector<Fact> facts;
            const auto n = len(rng);
            for (std::size_t j = 0; j < n; ++j)
                facts.push_back({lab(rng), neg(rng) ? Polarity::negative : Polarity::positive, j});
            const double r = facts_reward(entail(facts, env.labels()), s.z_star, rc);
            CHECK(r <= best + 1e-12);
        }
    }
}

TEST_CASE("correlation pairs raise co-occurrence") {
    const auto labels = LabelSet::chest_xray14();
    auto profile = PrevalenceProfile::chest_xray_default(labels);
    const auto a = *labels.find("cardiomegaly"), b = *labels.find("edema");
    profile.correlation_pairs.push_back({a, b, 6.0});
    SynthEnv env(labels, profile, EnvConfig{});
    Rng rng(5);
    double both = 0, a_count = 0;
    for (int i = 0; i < 20000; ++i) {
        auto s = env.sample_study(rng, "x");
        a_count += s.z_star.z_star[a];
        both += s.z_star.z_star[a] && s.z_star.z_star[b];
    }
    // P(b | a) = odds 6 * 0.2/0.8 = 1.5 -> 0.6
    CHECK(std::abs(both / a_count - 0.6) < 0.03);
}

TEST_CASE("make_dataset determinism and size") {
    auto env = default_env();
    auto d1 = make_dataset(1000, env, 7);
    auto d2 = make_dataset(1000, env, 7);
    CHECK(d1.size() == 1000);
    CHECK(d1 == d2);
    CHECK(fnv1a(d1) == fnv1a(d2));
    CHECK(d1[0].prompt_id == "s000000");
    CHECK(d1[999].prompt_id == "s000999");
    CHECK_FALSE(fnv1a(make_dataset(1000, env, 8)) == fnv1a(d1));
    // Study i depends only on (seed, i).
    auto prefix = make_dataset(10, env, 7);
    for (std::size_t i = 0; i < 10; ++i) CHECK(prefix[i] == d1[i]);
    CHECK(make_dataset(1, env, 7).size() == 1);
    CHECK_THROWS_AS(make_dataset(0, env, 7), ConfigError);
}

TEST_CASE("balancing mode") {
    auto env = default_env();
    const auto fracture = *env.labels().find("fracture");
    const auto pneumonia = *env.labels().find("pneumonia");
    auto plain = make_dataset(1000, env, 9);
    auto count = [&](const std::vector<StudyRecord>& d, std::size_t l) {
        return std::count_if(d.begin(), d.end(), [&](const StudyRecord& r) { return r.z_star.z_star[l] == 1; });
    };
    REQUIRE(count(plain, fracture) < 50);
    auto bal = make_dataset(1000, env, 9, {{fracture, 50}, {pneumonia, 50}});
    CHECK(bal.size() == 1000);
    CHECK(count(bal, fracture) >= 50);
    CHECK(count(bal, pneumonia) >= 50);
    CHECK(bal == make_dataset(1000, env, 9, {{fracture, 50}, {pneumonia, 50}}));
    CHECK_THROWS_AS(make_dataset(10, env, 9, {{fracture, 50}}), ConfigError);
    CHECK_THROWS_AS(make_dataset(10, env, 9, {{99, 1}}), ConfigError);
}

TEST_CASE("a logistic probe recovers labels from context") {
    auto env = default_env();
    auto train = make_dataset(3000, env, 10);
    auto test = make_dataset(1000, env, 11);
    const std::size_t D = 32, L = 14;
    double mean_acc = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
        std::vector<double> w(D + 1, 0.0);
        for (int epoch = 0; epoch < 200; ++epoch) {
            std::vector<double> g(D + 1, 0.0);
            for (const auto& r : train) {
                double z = w[D];
                for (std::size_t d = 0; d < D; ++d) z += w[d] * r.ctx[d];
                const double err = 1.0 / (1.0 + std::exp(-z)) - r.z_star.z_star[l];
                for (std::size_t d = 0; d < D; ++d) g[d] += err * r.ctx[d];
                g[D] += err;
            }
            for (std::size_t k = 0; k <= D; ++k) w[k] -= 0.5 * g[k] / static_cast<double>(train.size());
        }
        double correct = 0.0;
        for (const auto& r : test) {
            double z = w[D];
            for (std::size_t d = 0; d < D; ++d) z += w[d] * r.ctx[d];
            correct += (z > 0.0) == (r.z_star.z_star[l] == 1);
        }
        mean_acc += correct / static_cast<double>(test.size()) / static_cast<double>(L);
    }
    CHECK(mean_acc >= 0.9);
}

TEST_CASE("corpus round trip") {
    auto env = default_env();
    auto data = make_dataset(200, env, 12);
    const auto path = temp_file("orapo_corpus_test.jsonl");
    save_corpus(data, env.labels(), path);
    auto back = load_corpus(path, env.labels(), 32);
    REQUIRE(back.size() == data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        REQUIRE(back[i] == data[i]);
        CHECK(std::memcmp(back[i].ctx.data(), data[i].ctx.data(), 32 * sizeof(double)) == 0);
    }
    std::filesystem::remove(path);
}

TEST_CASE("corpus rejection cases") {
    const auto labels = LabelSet::chest_xray14();
    const auto path = temp_file("orapo_corpus_bad.jsonl");

    write_file(path, "");
    CHECK(load_corpus(path, labels, 32).empty());

    const std::string ok =
        R"({"prompt_id":"a","context":[1,2],"labels":[0,0,0,0,0,0,0,0,0,0,0,0,0,1],"report":"There is support devices."})";
    write_file(path, ok + "\n\n" + ok + "\n");
    auto two = load_corpus(path, labels, 2);
    REQUIRE(two.size() == 2);
    CHECK(two[0].gt_report.tokens == std::vector<TokenId>{2 + 13, 1});

    write_file(path, ok + "\n" + R"({"prompt_id":"b","context":[1,2],"labels":[0]})" + "\n");
    try {
        load_corpus(path, labels, 2);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
        CHECK(std::string(e.what()).find("report") != std::string::npos);
    }

    write_file(path, R"({"prompt_id":"b","context":[1,2],"labels":[0,1],"report":""})" "\n");
    try {
        load_corpus(path, labels, 2);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 1);
        CHECK(std::string(e.what()).find("expected 14") != std::string::npos);
    }

    write_file(path, "{not json\n");
    CHECK_THROWS_AS(load_corpus(path, labels, 2), ParseError);
    write_file(path, R"({"prompt_id":3,"context":[1,2],"labels":[0,0,0,0,0,0,0,0,0,0,0,0,0,1],"report":""})" "\n");
    CHECK_THROWS_AS(load_corpus(path, labels, 2), ParseError);

    write_file(path, ok + "\n");
    CHECK_THROWS_AS(load_corpus(path, labels, 32), ConfigError);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_corpus(path, labels, 32), ParseError);
}

TEST_CASE("prevalence profile file") {
    const auto labels = LabelSet({"no finding", "edema", "fracture"});
    const auto path = temp_file("orapo_profile.tsv");
    write_file(path, "no finding\tfallback\nedema\t0.2\nfracture\t0.05\n");
    auto p = load_profile(path, labels);
    CHECK(p.fallback_label == 0u);
    CHECK(p.marginals[1] == 0.2);
    CHECK(p.marginals[0] == doctest::Approx(0.8 * 0.95));

    write_file(path, "edema\t0.2\nfracture\t0.05\n");
    CHECK_THROWS_AS(load_profile(path, labels), ParseError);  // missing label
    write_file(path, "no finding\t0.1\nedema 0.2\n");
    CHECK_THROWS_AS(load_profile(path, labels), ParseError);
    write_file(path, "no finding\t0.1\nedema\tabc\nfracture\t0.1\n");
    CHECK_THROWS_AS(load_profile(path, labels), ParseError);
    write_file(path, "no finding\t0.1\nedema\t0.2\nfracture\t1.5\n");
    CHECK_THROWS_AS(load_profile(path, labels), ConfigError);
    write_file(path, "nodule\t0.1\n");
    CHECK_THROWS_AS(load_profile(path, labels), ParseError);
    std::filesystem::remove(path);
}
