#pragma once

#include "orapo/grpo_objective.hpp"
#include "orapo/policy_model.hpp"

#include <span>
#include <vector>

namespace orapo {

enum class DpoVariant { vanilla, ln_dpo };
enum class NegativesPolicy { all_rollouts, zero_reward_only };

struct DpoConfig {
    double tau = 0.1;
    DpoVariant variant = DpoVariant::ln_dpo;
    NegativesPolicy negatives = NegativesPolicy::all_rollouts;

    void validate() const;
};

struct PreferencePair {
    ContextVec ctx;
    TokenSeq y_plus;   // ground-truth report
    TokenSeq y_minus;  // sampled rollout
    double minus_reward = 0.0;
};

/// Ground truth as the preferred side, rollouts as rejected. Rollouts identical to the
/// ground truth never become negatives.
std::vector<PreferencePair> build_pairs(const RolloutGroup& group, const TokenSeq& gt,
                                        std::span<const double> ctx, const DpoConfig& cfg,
                                        double zero_threshold = 0.0);

struct Margins {
    double plus = 0.0;
    double minus = 0.0;
};

/// Policy-minus-reference log-probabilities; ln_dpo uses per-token averages.
Margins dpo_margins(const PolicyParams& params, const PolicyParams& ref,
                    const PreferencePair& pair, DpoVariant variant);

/// mean over pairs of -log sigmoid(tau * (plus - minus)). `pairs` must be nonempty.
LossAndGrad dpo_loss(std::span<const PreferencePair> pairs, const PolicyParams& params,
                     const PolicyParams& ref, const DpoConfig& cfg);

/// log(sigmoid(x)) without overflow.
double log_sigmoid(double x);

}  // namespace orapo
