// Command-line front end: gen-data, train, eval, compare, score.

#include "orapo/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace orapo;
using json = nlohmann::json;

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string labels_path;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("-c,--config", o.config_path, "key = value config file");
    cmd->add_option("-s,--set", o.overrides, "override, e.g. --set steps=300");
    cmd->add_option("--labels", o.labels_path, "label set file (one label per line)");
}

RunConfig build_config(const CommonOptions& o) {
    RunConfig cfg;
    if (!o.config_path.empty()) cfg = load_run_config(o.config_path);
    for (const auto& kv : o.overrides) apply_override(cfg, kv);
    cfg.validate();
    return cfg;
}

LabelSet build_labels(const CommonOptions& o) {
    return o.labels_path.empty() ? LabelSet::chest_xray14() : load_label_set(o.labels_path);
}

std::vector<std::uint64_t> parse_seeds(const std::string& list) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) seeds.push_back(std::stoull(item));
    if (seeds.empty()) throw ConfigError("--seeds: empty seed list");
    return seeds;
}

void print_eval(std::ostream& os, const EvalResult& ev, const LabelSet& labels) {
    os << "macro precision=" << ev.macro.precision << " recall=" << ev.macro.recall
       << " f1=" << ev.macro.f1 << "\n";
    for (std::size_t l = 0; l < labels.size(); ++l)
        os << "  " << labels.name(l) << ": p=" << ev.per_class[l].precision
           << " r=" << ev.per_class[l].recall << " f1=" << ev.per_class[l].f1 << "\n";
}

int run_score(std::istream& in, std::ostream& out, const LabelSet& labels, const RewardConfig& rc) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("malformed JSON: ") + e.what(), lineno);
        }
        if (!rec.contains("report_text") || !rec.contains("z_star"))
            throw ParseError("record needs report_text and z_star", lineno);
        GroundTruth gt;
        for (int b : rec.at("z_star").get<std::vector<int>>())
            gt.z_star.push_back(static_cast<std::uint8_t>(b != 0));
        if (gt.z_star.size() != labels.size())
            throw ParseError("z_star has " + std::to_string(gt.z_star.size()) +
                                 " entries, expected " + std::to_string(labels.size()),
                             lineno);
        const auto scored = score_report(rec.at("report_text").get<std::string>(), gt, labels, rc);
        json facts = json::array();
        for (const auto& f : scored.extraction.facts)
            facts.push_back({{"label", labels.name(f.label)},
                             {"polarity", f.polarity == Polarity::positive ? "positive" : "negative"},
                             {"sentence", f.source_sentence}});
        std::vector<int> z_hat(scored.outcome.z_hat.begin(), scored.outcome.z_hat.end());
        json o = {{"reward", scored.reward},
                  {"z_hat", z_hat},
                  {"facts", facts},
                  {"skipped_sentences", scored.extraction.skipped_sentences}};
        out << o.dump() << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"OraPO / FactS reinforcement-learning laboratory"};
    app.require_subcommand(1);

    // gen-data
    CommonOptions gen_opts;
    std::string gen_out, gen_split = "train", gen_profile;
    std::size_t gen_n = 0;
    auto* gen = app.add_subcommand("gen-data", "write a synthetic study corpus (JSON lines)");
    add_common(gen, gen_opts);
    gen->add_option("-o,--out", gen_out, "output corpus path")->required();
    gen->add_option("-n,--count", gen_n, "number of studies (default: train_size/eval_size)");
    gen->add_option("--split", gen_split, "train or eval")->check(CLI::IsMember({"train", "eval"}));
    gen->add_option("--profile", gen_profile, "prevalence table label<TAB>probability");

    // train
    CommonOptions train_opts;
    std::string train_out = "run", train_corpus, eval_corpus;
    auto* tr = app.add_subcommand("train", "train a policy and write telemetry/metrics/checkpoints");
    add_common(tr, train_opts);
    tr->add_option("-o,--out", train_out, "output directory");
    tr->add_option("--train-corpus", train_corpus, "training corpus instead of synthetic data");
    tr->add_option("--eval-corpus", eval_corpus, "evaluation corpus instead of synthetic data");

    // eval
    CommonOptions eval_opts;
    std::string eval_ckpt, eval_corpus_path, eval_metrics_out;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint with greedy decoding");
    add_common(ev, eval_opts);
    ev->add_option("--checkpoint", eval_ckpt, "policy .params file")->required();
    ev->add_option("--eval-corpus", eval_corpus_path, "evaluation corpus (default: synthetic)");
    ev->add_option("--metrics-out", eval_metrics_out, "write a one-row metrics CSV");

    // compare
    std::string cfg_a_path, cfg_b_path, cmp_out = "comparison.csv", seeds_arg = "1,2,3,4,5";
    std::vector<std::string> set_a, set_b, set_both;
    std::string name_a = "a", name_b = "b";
    auto* cmp = app.add_subcommand("compare", "paired runs of two configs over a seed list");
    cmp->add_option("--config-a", cfg_a_path, "config for run a");
    cmp->add_option("--config-b", cfg_b_path, "config for run b");
    cmp->add_option("--set-a", set_a, "override for run a");
    cmp->add_option("--set-b", set_b, "override for run b");
    cmp->add_option("-s,--set", set_both, "override for both runs");
    cmp->add_option("--name-a", name_a, "label for run a");
    cmp->add_option("--name-b", name_b, "label for run b");
    cmp->add_option("--seeds", seeds_arg, "comma-separated seeds");
    cmp->add_option("-o,--out", cmp_out, "comparison CSV");

    // score
    CommonOptions score_opts;
    std::string score_in, score_out;
    auto* sc = app.add_subcommand("score", "FactS-score JSON-lines records {report_text, z_star}");
    add_common(sc, score_opts);
    sc->add_option("-i,--in", score_in, "input records (default stdin)");
    sc->add_option("-o,--out", score_out, "output records (default stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            auto cfg = build_config(gen_opts);
            auto labels = build_labels(gen_opts);
            const bool is_train = gen_split == "train";
            if (gen_n) (is_train ? cfg.train_size : cfg.eval_size) = gen_n;
            std::vector<StudyRecord> data;
            if (gen_profile.empty()) {
                // Same studies `train` would generate for this config and seed.
                auto run = make_run_data(cfg, labels);
                data = is_train ? std::move(run.train) : std::move(run.eval);
            } else {
                EnvConfig env_cfg = cfg.env;
                env_cfg.seed = derive_seed(cfg.seed, 2);
                auto profile = load_profile(gen_profile, labels);
                SynthEnv env(labels, profile, env_cfg);
                std::vector<BalanceTarget> balance;
                if (is_train && cfg.balance_min_count)
                    for (std::size_t l = 0; l < labels.size(); ++l)
                        if (!(profile.fallback_label && *profile.fallback_label == l))
                            balance.push_back({l, cfg.balance_min_count});
                data = make_dataset(is_train ? cfg.train_size : cfg.eval_size, env,
                                    derive_seed(cfg.seed, is_train ? 3 : 4), balance);
                if (!is_train)
                    for (auto& r : data) r.prompt_id = "e" + r.prompt_id.substr(1);
            }
            save_corpus(data, labels, gen_out);
            std::cout << "wrote " << data.size() << " studies to " << gen_out << "\n";
            return 0;
        }

        if (*tr) {
            auto cfg = build_config(train_opts);
            auto labels = build_labels(train_opts);
            std::vector<StudyRecord> train_set, eval_set;
            if (train_corpus.empty() || eval_corpus.empty()) {
                auto data = make_run_data(cfg, labels);
                train_set = std::move(data.train);
                eval_set = std::move(data.eval);
            }
            if (!train_corpus.empty()) train_set = load_corpus(train_corpus, labels, cfg.env.context_dim);
            if (!eval_corpus.empty()) eval_set = load_corpus(eval_corpus, labels, cfg.env.context_dim);

            const std::filesystem::path dir(train_out);
            std::filesystem::create_directories(dir);
            {
                std::ofstream c(dir / "config.txt");
                write_run_config(c, cfg);
            }
            TrainOptions opts;
            opts.checkpoint_dir = dir / "checkpoints";
            opts.progress = &std::cerr;
            TrainResult result;
            try {
                result = train(cfg, train_set, eval_set, labels, opts);
            } catch (const TrainingAborted& e) {
                std::ofstream d(dir / "abort_dump.txt");
                d << e.dump();
                std::cerr << "training aborted: " << e.what() << " (see " << (dir / "abort_dump.txt")
                          << ")\n";
                return 3;
            }
            std::ofstream s(dir / "steps.csv"), p(dir / "telemetry.csv"), m(dir / "metrics.csv");
            write_steps_csv(s, result.telemetry);
            write_prompts_csv(p, result.telemetry);
            write_metrics_csv(m, result.telemetry, labels);
            const auto& last = result.telemetry.checkpoints.back();
            std::cout << "final step " << last.step << " macro_f1=" << last.macro.f1
                      << " zero_reward_fraction=" << zero_reward_fraction(result.telemetry, cfg.steps)
                      << "\n";
            return 0;
        }

        if (*ev) {
            auto cfg = build_config(eval_opts);
            auto labels = build_labels(eval_opts);
            auto params = load_params(eval_ckpt);
            std::vector<StudyRecord> eval_set = eval_corpus_path.empty()
                                                    ? make_run_data(cfg, labels).eval
                                                    : load_corpus(eval_corpus_path, labels, params.dims().context);
            auto result = evaluate(params, eval_set, labels, cfg.sampler.max_len);
            print_eval(std::cout, result, labels);
            if (!eval_metrics_out.empty()) {
                RunTelemetry t;
                CheckpointMetrics cm;
                cm.macro = result.macro;
                for (const auto& pc : result.per_class) cm.per_class_f1.push_back(pc.f1);
                t.checkpoints.push_back(cm);
                std::ofstream m(eval_metrics_out);
                write_metrics_csv(m, t, labels);
            }
            return 0;
        }

        if (*cmp) {
            RunConfig a, b;
            if (!cfg_a_path.empty()) a = load_run_config(cfg_a_path);
            if (!cfg_b_path.empty()) b = load_run_config(cfg_b_path);
            for (const auto& kv : set_both) {
                apply_override(a, kv);
                apply_override(b, kv);
            }
            for (const auto& kv : set_a) apply_override(a, kv);
            for (const auto& kv : set_b) apply_override(b, kv);
            a.validate();
            b.validate();
            auto report = compare(a, b, parse_seeds(seeds_arg), name_a, name_b, &std::cerr);
            std::ofstream out(cmp_out);
            write_comparison_csv(out, report);
            std::cout << "wrote " << cmp_out << "\n";
            return 0;
        }

        if (*sc) {
            auto cfg = build_config(score_opts);
            auto labels = build_labels(score_opts);
            std::ifstream fin;
            std::ofstream fout;
            if (!score_in.empty()) {
                fin.open(score_in);
                if (!fin) throw ParseError("cannot open " + score_in);
            }
            if (!score_out.empty()) fout.open(score_out);
            return run_score(score_in.empty() ? std::cin : fin, score_out.empty() ? std::cout : fout,
                             labels, cfg.reward);
        }
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
