#pragma once

#include "orapo/dpo_objective.hpp"
#include "orapo/eval_metrics.hpp"
#include "orapo/facts_reward.hpp"
#include "orapo/grpo_objective.hpp"
#include "orapo/orapo_scheduler.hpp"
#include "orapo/policy_model.hpp"
#include "orapo/synth_env.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace orapo {

enum class Algorithm { grpo, orapo };
enum class OptimizerKind { sgd, adam };
enum class RewardKind { facts, exact_match };

struct RunConfig {
    Algorithm algorithm = Algorithm::orapo;
    RewardKind reward_kind = RewardKind::facts;

    SamplerConfig sampler;
    GrpoConfig grpo;
    DpoConfig dpo;
    MixSchedule schedule;
    ZrrGranularity granularity = ZrrGranularity::per_prompt;
    RewardConfig reward;
    EnvConfig env;
    PolicyInit init;
    std::size_t hidden = 24;

    OptimizerKind optimizer = OptimizerKind::adam;
    double lr = 1e-2;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    std::size_t steps = 600;
    std::size_t batch_size = 16;
    std::size_t eval_every = 25;
    std::uint64_t seed = 0;

    std::size_t train_size = 1000;
    std::size_t eval_size = 2000;
    /// Minimum positives per label in the training pool (0 disables balancing).
    std::size_t balance_min_count = 50;

    /// Set one `key = value` entry; throws ConfigError on unknown keys or bad values.
    void set(const std::string& key, const std::string& value);
    /// All keys in a stable order, formatted so `set` reproduces this config exactly.
    std::vector<std::pair<std::string, std::string>> entries() const;
    void validate() const;
};

/// Plain-text `key = value` file; '#' starts a comment.
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});
void apply_override(RunConfig& cfg, const std::string& assignment);
void write_run_config(std::ostream& out, const RunConfig& cfg);

class Optimizer {
public:
    Optimizer(const RunConfig& cfg, const PolicyDims& dims);
    void step(PolicyParams& params, const PolicyParams& grad);

private:
    OptimizerKind kind_;
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    PolicyParams m_, v_;
};

struct RunData {
    SynthEnv env;
    std::vector<StudyRecord> train;
    std::vector<StudyRecord> eval;
};

/// Synthetic environment, training pool and held-out evaluation set for `cfg.seed`.
RunData make_run_data(const RunConfig& cfg, const LabelSet& labels = LabelSet::chest_xray14());

struct EvalResult {
    ConfusionTally tally;
    Prf macro;
    std::vector<Prf> per_class;
};

/// Greedy decoding per study, scored through the same fact pipeline as training rewards.
EvalResult evaluate(const PolicyParams& params, const std::vector<StudyRecord>& eval_set,
                    const LabelSet& labels, std::size_t max_len);

struct Checkpoint {
    std::size_t step = 0;
    PolicyParams params;
    ZrrState zrr;
    CheckpointMetrics metrics;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
/// Reads the params and ZRR state written by save_checkpoint for `step`.
Checkpoint load_checkpoint(const std::filesystem::path& dir, std::size_t step);
std::string checkpoint_stem(std::size_t step);

class TrainingAborted : public std::runtime_error {
public:
    TrainingAborted(const std::string& what, std::string dump)
        : std::runtime_error(what), dump_(std::move(dump)) {}
    const std::string& dump() const noexcept { return dump_; }

private:
    std::string dump_;
};

struct TrainResult {
    RunTelemetry telemetry;
    PolicyParams initial_params;
    PolicyParams final_params;
    ZrrState zrr;
    std::vector<Checkpoint> checkpoints;
};

struct TrainOptions {
    std::optional<std::filesystem::path> checkpoint_dir;
    std::ostream* progress = nullptr;
};

TrainResult train(const RunConfig& cfg, const std::vector<StudyRecord>& train_set,
                  const std::vector<StudyRecord>& eval_set, const LabelSet& labels,
                  const TrainOptions& opts = {});

/// Rollout reward under the configured reward kind.
double rollout_reward(const TokenSeq& seq, const StudyRecord& study, const LabelSet& labels,
                      const RunConfig& cfg, std::uint64_t style_seed);

struct ComparisonRun {
    std::string name;
    std::uint64_t seed = 0;
    RunTelemetry telemetry;
};

struct ComparisonReport {
    std::size_t rare_label = 0;
    std::vector<ComparisonRun> runs;
};

/// Runs both configs for every seed on identical datasets.
ComparisonReport compare(const RunConfig& cfg_a, const RunConfig& cfg_b,
                         const std::vector<std::uint64_t>& seeds, const std::string& name_a,
                         const std::string& name_b, std::ostream* progress = nullptr);

/// Header: run,seed,step,zero_reward_fraction,macro_f1,rare_f1 ; aggregate rows use seed "mean".
extern const char* const kComparisonCsvHeader;
void write_comparison_csv(std::ostream& out, const ComparisonReport& report);

/// Lowest-prevalence label of the default profile, ignoring the fallback label.
std::size_t rarest_label(const PrevalenceProfile& profile);

std::string to_string(Algorithm a);

}  // namespace orapo
