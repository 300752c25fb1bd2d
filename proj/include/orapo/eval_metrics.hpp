#pragma once

#include "orapo/facts_reward.hpp"
#include "orapo/orapo_scheduler.hpp"

#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

namespace orapo {

/// Per-label confusion counts. Tallies merge associatively, so evaluation shards can be
/// combined in any grouping.
struct ConfusionTally {
    std::vector<std::size_t> tp, fp, fn, tn;
    std::size_t n = 0;

    ConfusionTally() = default;
    explicit ConfusionTally(std::size_t num_labels)
        : tp(num_labels), fp(num_labels), fn(num_labels), tn(num_labels) {}

    std::size_t num_labels() const noexcept { return tp.size(); }
    void merge(const ConfusionTally& other);
    bool operator==(const ConfusionTally&) const = default;
};

void tally(ConfusionTally& t, std::span<const std::uint8_t> z_hat,
           std::span<const std::uint8_t> z_star);

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// P = 0 when nothing was predicted, R = 1 when the label never occurs, F1 = 0 when P+R = 0.
std::vector<Prf> per_label_prf(const ConfusionTally& t);
/// Unweighted mean of the per-label values.
Prf macro_prf(const ConfusionTally& t);

struct StepRecord {
    std::size_t step = 0;
    double mean_reward = 0.0;
    double mean_w = 0.0;
    bool zero_reward_batch = false;
};

struct CheckpointMetrics {
    std::size_t step = 0;
    Prf macro;
    std::vector<double> per_class_f1;
};

struct RunTelemetry {
    std::vector<StepRecord> steps;
    std::vector<PromptTelemetry> prompts;
    std::vector<CheckpointMetrics> checkpoints;
};

/// Fraction of steps 1..upto_step whose batch-mean reward is <= zero_threshold.
double zero_reward_fraction(const RunTelemetry& telemetry, std::size_t upto_step,
                            double zero_threshold = 0.0);

void write_steps_csv(std::ostream& out, const RunTelemetry& telemetry);
void write_prompts_csv(std::ostream& out, const RunTelemetry& telemetry);
void write_metrics_csv(std::ostream& out, const RunTelemetry& telemetry, const LabelSet& labels);
std::string metrics_csv_header(const LabelSet& labels);

}  // namespace orapo
