#pragma once

#include "orapo/dpo_objective.hpp"
#include "orapo/grpo_objective.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace orapo {

enum class ZrrGranularity { per_prompt, per_batch };

/// EMA-smoothed zero-reward rate per prompt (or a single entry for the whole batch).
struct ZrrState {
    std::map<std::string, double> ema;
    std::size_t step = 0;
    ZrrGranularity granularity = ZrrGranularity::per_prompt;

    static constexpr const char* kBatchKey = "<batch>";
    bool operator==(const ZrrState&) const = default;
};

struct MixSchedule {
    double alpha = 0.5;
    double w_min = 0.05;
    double w_max = 0.15;
    double gamma = 2.0;

    void validate() const;
};

/// Fraction of rewards at or below `zero_threshold`.
double raw_zrr(std::span<const double> rewards, double zero_threshold = 0.0);

/// z_tilde <- alpha * z_tilde_prev + (1 - alpha) * z. An unseen key starts at z_tilde_prev = z.
double update_ema(ZrrState& state, const std::string& key, double z, const MixSchedule& sched);

double mixing_weight(double z_tilde, const MixSchedule& sched);

struct PromptBatchItem {
    std::string prompt_id;
    ContextVec ctx;
    RolloutGroup group;
    TokenSeq gt_report;
    double weight = 0.0;
};

struct PromptLossParts {
    double grpo = 0.0;
    double dpo = 0.0;      // 0 when the prompt produced no preference pairs
    double weight = 0.0;   // effective DPO weight (forced to 0 without pairs)
    std::size_t pairs = 0;
};

struct BatchLoss {
    double loss = 0.0;
    PolicyParams grad;
    std::vector<PromptLossParts> parts;
};

/// (1/B) sum_i [(1 - w_i) L_GRPO(i) + w_i L_DPO(i)].
BatchLoss orapo_batch_loss(std::span<const PromptBatchItem> batch, const PolicyParams& params,
                           const PolicyParams& ref, const GrpoConfig& grpo_cfg,
                           const DpoConfig& dpo_cfg, double zero_threshold = 0.0);

struct PromptTelemetry {
    std::size_t step = 0;
    std::string prompt_id;
    double z = 0.0;
    double z_tilde = 0.0;
    double w = 0.0;
    double mean_reward = 0.0;
    double grpo_loss = 0.0;
    double dpo_loss = 0.0;
};

}  // namespace orapo
