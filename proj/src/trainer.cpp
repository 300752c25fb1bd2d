#include "orapo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace orapo {

namespace {

constexpr std::uint64_t kStreamInit = 1;
constexpr std::uint64_t kStreamEnv = 2;
constexpr std::uint64_t kStreamTrain = 3;
constexpr std::uint64_t kStreamEval = 4;
constexpr std::uint64_t kStreamEpoch = 5;
constexpr std::uint64_t kStreamRollout = 6;

// Round-robin over shuffled epochs of the training pool.
class PromptScheduler {
public:
    PromptScheduler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) { reshuffle(); }

    std::size_t next() {
        if (pos_ == order_.size()) {
            ++epoch_;
            reshuffle();
        }
        return order_[pos_++];
    }

private:
    void reshuffle() {
        order_.resize(n_);
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        Rng rng(derive_seed(seed_, kStreamEpoch, epoch_));
        std::shuffle(order_.begin(), order_.end(), rng);
        pos_ = 0;
    }

    std::size_t n_;
    std::uint64_t seed_;
    std::size_t epoch_ = 0;
    std::size_t pos_ = 0;
    std::vector<std::size_t> order_;
};

std::string describe_batch(std::size_t step, const std::vector<PromptBatchItem>& items,
                           const BatchLoss* loss) {
    std::ostringstream os;
    os << "non-finite loss at step " << step << "\n";
    for (std::size_t i = 0; i < items.size(); ++i) {
        os << "prompt " << items[i].prompt_id << " w=" << items[i].weight << " rewards=[";
        for (std::size_t j = 0; j < items[i].group.rewards.size(); ++j)
            os << (j ? "," : "") << items[i].group.rewards[j];
        os << "]";
        if (loss && i < loss->parts.size())
            os << " grpo=" << loss->parts[i].grpo << " dpo=" << loss->parts[i].dpo;
        os << "\n";
    }
    if (loss) os << "total=" << loss->loss << " grad_norm=" << loss->grad.norm() << "\n";
    return os.str();
}

}  // namespace

Optimizer::Optimizer(const RunConfig& cfg, const PolicyDims& dims)
    : kind_(cfg.optimizer), lr_(cfg.lr), beta1_(cfg.adam_beta1), beta2_(cfg.adam_beta2),
      eps_(cfg.adam_eps), m_(dims), v_(dims) {}

void Optimizer::step(PolicyParams& params, const PolicyParams& grad) {
    params.check_same_shape(grad, "optimizer");
    if (kind_ == OptimizerKind::sgd) {
        params.axpy(-lr_, grad);
        return;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto p = params.flat();
    auto g = grad.flat();
    auto m = m_.flat();
    auto v = v_.flat();
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
}

RunData make_run_data(const RunConfig& cfg, const LabelSet& labels) {
    EnvConfig env_cfg = cfg.env;
    env_cfg.seed = derive_seed(cfg.seed, kStreamEnv);
    SynthEnv env(labels, PrevalenceProfile::chest_xray_default(labels), env_cfg);
    std::vector<BalanceTarget> balance;
    if (cfg.balance_min_count > 0) {
        for (std::size_t l = 0; l < labels.size(); ++l)
            if (!(env.profile().fallback_label && *env.profile().fallback_label == l))
                balance.push_back({l, cfg.balance_min_count});
    }
    auto train = make_dataset(cfg.train_size, env, derive_seed(cfg.seed, kStreamTrain), balance);
    auto eval = make_dataset(cfg.eval_size, env, derive_seed(cfg.seed, kStreamEval));
    for (auto& r : eval) r.prompt_id = "e" + r.prompt_id.substr(1);
    return RunData{std::move(env), std::move(train), std::move(eval)};
}

EvalResult evaluate(const PolicyParams& params, const std::vector<StudyRecord>& eval_set,
                    const LabelSet& labels, std::size_t max_len) {
    const Vocabulary vocab(labels.size());
    if (params.dims().vocab != vocab.size())
        throw ConfigError("evaluate: policy vocabulary " + std::to_string(params.dims().vocab) +
                          " does not match label set (" + std::to_string(vocab.size()) + ")");
    EvalResult out;
    out.tally = ConfusionTally(labels.size());
    for (const auto& study : eval_set) {
        if (study.z_star.z_star.size() != labels.size())
            throw ConfigError("evaluate: study label count mismatch");
        const auto seq = greedy_decode(params, study.ctx, max_len);
        const auto text = render_report(facts_from_tokens(seq, vocab), labels, 0);
        const auto outcome = entail(extract_facts(text, labels).facts, labels);
        tally(out.tally, outcome.z_hat, study.z_star.z_star);
    }
    out.macro = macro_prf(out.tally);
    out.per_class = per_label_prf(out.tally);
    return out;
}

std::string checkpoint_stem(std::size_t step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "ckpt_%06zu", step);
    return buf;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto stem = checkpoint_stem(ckpt.step);
    save_params(ckpt.params, dir / (stem + ".params"));
    std::ofstream z(dir / (stem + ".zrr"));
    if (!z) throw ConfigError("cannot write ZRR snapshot in " + dir.string());
    z << "step\t" << ckpt.zrr.step << "\n";
    z << "granularity\t"
      << (ckpt.zrr.granularity == ZrrGranularity::per_batch ? "per_batch" : "per_prompt") << "\n";
    char buf[40];
    for (const auto& [key, value] : ckpt.zrr.ema) {
        std::snprintf(buf, sizeof buf, "%.17g", value);
        z << "ema\t" << key << "\t" << buf << "\n";
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& dir, std::size_t step) {
    Checkpoint ckpt;
    ckpt.step = step;
    const auto stem = checkpoint_stem(step);
    ckpt.params = load_params(dir / (stem + ".params"));
    std::ifstream z(dir / (stem + ".zrr"));
    if (!z) throw ParseError("cannot open ZRR snapshot for step " + std::to_string(step));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(z, line)) {
        ++lineno;
        std::istringstream is(line);
        std::string kind;
        std::getline(is, kind, '\t');
        if (kind == "step") {
            is >> ckpt.zrr.step;
        } else if (kind == "granularity") {
            std::string g;
            is >> g;
            ckpt.zrr.granularity =
                g == "per_batch" ? ZrrGranularity::per_batch : ZrrGranularity::per_prompt;
        } else if (kind == "ema") {
            std::string key, value;
            std::getline(is, key, '\t');
            std::getline(is, value);
            ckpt.zrr.ema[key] = std::stod(value);
        } else if (!kind.empty()) {
            throw ParseError("unknown ZRR snapshot entry '" + kind + "'", lineno);
        }
    }
    return ckpt;
}

double rollout_reward(const TokenSeq& seq, const StudyRecord& study, const LabelSet& labels,
                      const RunConfig& cfg, std::uint64_t style_seed) {
    const Vocabulary vocab(labels.size());
    const auto text = render_report(facts_from_tokens(seq, vocab), labels, style_seed);
    const auto scored = score_report(text, study.z_star, labels, cfg.reward);
    if (cfg.reward_kind == RewardKind::exact_match)
        return exact_match_reward(scored.outcome, study.z_star);
    return scored.reward;
}

TrainResult train(const RunConfig& cfg, const std::vector<StudyRecord>& train_set,
                  const std::vector<StudyRecord>& eval_set, const LabelSet& labels,
                  const TrainOptions& opts) {
    cfg.validate();
    if (train_set.empty()) throw ConfigError("train: training set is empty");
    const Vocabulary vocab(labels.size());
    const PolicyDims dims{cfg.env.context_dim, cfg.hidden, vocab.size()};
    for (const auto& s : train_set)
        if (s.ctx.size() != dims.context || s.z_star.z_star.size() != labels.size())
            throw ConfigError("train: study " + s.prompt_id + " does not match the configured shapes");

    TrainResult result;
    result.initial_params = init_params(dims, cfg.init, derive_seed(cfg.seed, kStreamInit));
    const PolicyParams ref = snapshot(result.initial_params);
    PolicyParams params = result.initial_params;
    Optimizer optimizer(cfg, dims);
    PromptScheduler scheduler(train_set.size(), cfg.seed);
    ZrrState& zrr = result.zrr;
    zrr.granularity = cfg.granularity;

    auto checkpoint = [&](std::size_t step) {
        Checkpoint ck;
        ck.step = step;
        ck.params = params;
        ck.zrr = zrr;
        ck.metrics.step = step;
        if (!eval_set.empty()) {
            const auto ev = evaluate(params, eval_set, labels, cfg.sampler.max_len);
            ck.metrics.macro = ev.macro;
            for (const auto& m : ev.per_class) ck.metrics.per_class_f1.push_back(m.f1);
        }
        result.telemetry.checkpoints.push_back(ck.metrics);
        if (opts.checkpoint_dir) save_checkpoint(ck, *opts.checkpoint_dir);
        if (opts.progress) {
            *opts.progress << "[" << to_string(cfg.algorithm) << " seed=" << cfg.seed << "] step "
                           << step << " macro_f1=" << ck.metrics.macro.f1
                           << " zero_frac=" << (step ? zero_reward_fraction(result.telemetry, step) : 0.0)
                           << "\n";
        }
        result.checkpoints.push_back(std::move(ck));
    };
    checkpoint(0);

    const double thr = cfg.reward.zero_threshold;
    std::vector<PromptBatchItem> items(cfg.batch_size);
    std::vector<double> z_raw(cfg.batch_size);
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        const PolicyParams old = snapshot(params);
        std::vector<double> all_rewards;
        for (std::size_t i = 0; i < cfg.batch_size; ++i) {
            const auto& study = train_set[scheduler.next()];
            auto& item = items[i];
            item.prompt_id = study.prompt_id;
            item.ctx = study.ctx;
            item.gt_report = study.gt_report;
            Rng rng(derive_seed(cfg.seed, kStreamRollout, step, i));
            item.group = sample_group(old, study.ctx, cfg.sampler, rng);
            for (std::size_t j = 0; j < item.group.size(); ++j)
                item.group.rewards[j] =
                    rollout_reward(item.group.rollouts[j].seq, study, labels, cfg, rng());
            z_raw[i] = raw_zrr(item.group.rewards, thr);
            all_rewards.insert(all_rewards.end(), item.group.rewards.begin(), item.group.rewards.end());
        }

        zrr.step = step;
        std::vector<double> z_tilde(cfg.batch_size);
        if (cfg.granularity == ZrrGranularity::per_batch) {
            const double zb = update_ema(zrr, ZrrState::kBatchKey, raw_zrr(all_rewards, thr), cfg.schedule);
            std::fill(z_tilde.begin(), z_tilde.end(), zb);
        } else {
            for (std::size_t i = 0; i < cfg.batch_size; ++i)
                z_tilde[i] = update_ema(zrr, items[i].prompt_id, z_raw[i], cfg.schedule);
        }
        for (std::size_t i = 0; i < cfg.batch_size; ++i)
            items[i].weight =
                cfg.algorithm == Algorithm::orapo ? mixing_weight(z_tilde[i], cfg.schedule) : 0.0;

        BatchLoss first;
        for (std::size_t epoch = 0; epoch < cfg.grpo.inner_epochs; ++epoch) {
            auto bl = orapo_batch_loss(items, params, ref, cfg.grpo, cfg.dpo, thr);
            if (!std::isfinite(bl.loss) || !bl.grad.all_finite())
                throw TrainingAborted("non-finite loss at step " + std::to_string(step),
                                      describe_batch(step, items, &bl));
            optimizer.step(params, bl.grad);
            if (epoch == 0) first = std::move(bl);
        }

        StepRecord rec;
        rec.step = step;
        rec.mean_reward = std::accumulate(all_rewards.begin(), all_rewards.end(), 0.0) /
                          static_cast<double>(all_rewards.size());
        rec.zero_reward_batch = rec.mean_reward <= thr;
        for (std::size_t i = 0; i < cfg.batch_size; ++i) {
            const auto& g = items[i].group.rewards;
            PromptTelemetry pt;
            pt.step = step;
            pt.prompt_id = items[i].prompt_id;
            pt.z = z_raw[i];
            pt.z_tilde = z_tilde[i];
            pt.w = items[i].weight;
            pt.mean_reward = std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size());
            pt.grpo_loss = first.parts[i].grpo;
            pt.dpo_loss = first.parts[i].dpo;
            rec.mean_w += pt.w / static_cast<double>(cfg.batch_size);
            result.telemetry.prompts.push_back(std::move(pt));
        }
        result.telemetry.steps.push_back(rec);

        if (step % cfg.eval_every == 0 || step == cfg.steps) checkpoint(step);
    }
    result.final_params = std::move(params);
    return result;
}

std::size_t rarest_label(const PrevalenceProfile& profile) {
    std::size_t best = 0;
    double best_p = 2.0;
    for (std::size_t l = 0; l < profile.marginals.size(); ++l) {
        if (profile.fallback_label && *profile.fallback_label == l) continue;
        if (profile.marginals[l] < best_p) {
            best_p = profile.marginals[l];
            best = l;
        }
    }
    return best;
}

ComparisonReport compare(const RunConfig& cfg_a, const RunConfig& cfg_b,
                         const std::vector<std::uint64_t>& seeds, const std::string& name_a,
                         const std::string& name_b, std::ostream* progress) {
    const auto data_shape = [](const RunConfig& c) {
        return std::make_tuple(c.train_size, c.eval_size, c.balance_min_count, c.env.signal_strength,
                               c.env.noise_std, c.env.negatives_mentioned, c.env.context_dim);
    };
    if (data_shape(cfg_a) != data_shape(cfg_b))
        throw ConfigError("compare: configs must share the dataset definition");

    const auto labels = LabelSet::chest_xray14();
    ComparisonReport report;
    report.rare_label = rarest_label(PrevalenceProfile::chest_xray_default(labels));
    TrainOptions opts;
    opts.progress = progress;
    for (auto seed : seeds) {
        RunConfig a = cfg_a, b = cfg_b;
        a.seed = b.seed = seed;
        const auto data = make_run_data(a, labels);
        report.runs.push_back({name_a, seed, train(a, data.train, data.eval, labels, opts).telemetry});
        report.runs.push_back({name_b, seed, train(b, data.train, data.eval, labels, opts).telemetry});
    }
    return report;
}

const char* const kComparisonCsvHeader = "run,seed,step,zero_reward_fraction,macro_f1,rare_f1";

void write_comparison_csv(std::ostream& out, const ComparisonReport& report) {
    out << kComparisonCsvHeader << '\n';
    char buf[64];
    auto row = [&](const std::string& run, const std::string& seed, std::size_t step, double zf,
                   double f1, double rare) {
        out << run << ',' << seed << ',' << step;
        for (double x : {zf, f1, rare}) {
            std::snprintf(buf, sizeof buf, "%.17g", x);
            out << ',' << buf;
        }
        out << '\n';
    };
    std::vector<std::string> names;
    for (const auto& r : report.runs)
        if (std::find(names.begin(), names.end(), r.name) == names.end()) names.push_back(r.name);

    for (const auto& r : report.runs)
        for (const auto& c : r.telemetry.checkpoints)
            row(r.name, std::to_string(r.seed), c.step,
                c.step ? zero_reward_fraction(r.telemetry, c.step) : 0.0, c.macro.f1,
                c.per_class_f1.empty() ? 0.0 : c.per_class_f1[report.rare_label]);

    for (const auto& name : names) {
        std::vector<const ComparisonRun*> runs;
        for (const auto& r : report.runs)
            if (r.name == name) runs.push_back(&r);
        const auto& first = runs.front()->telemetry.checkpoints;
        for (std::size_t k = 0; k < first.size(); ++k) {
            double zf = 0, f1 = 0, rare = 0;
            std::size_t count = 0;
            for (const auto* r : runs) {
                if (k >= r->telemetry.checkpoints.size()) continue;
                const auto& c = r->telemetry.checkpoints[k];
                zf += c.step ? zero_reward_fraction(r->telemetry, c.step) : 0.0;
                f1 += c.macro.f1;
                rare += c.per_class_f1.empty() ? 0.0 : c.per_class_f1[report.rare_label];
                ++count;
            }
            row(name, "mean", first[k].step, zf / count, f1 / count, rare / count);
        }
    }
}

}  // namespace orapo
