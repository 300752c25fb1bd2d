#pragma once

#include "orapo/policy_model.hpp"

#include <span>
#include <vector>

namespace orapo {

enum class GrpoVariant { vanilla, dr_grpo };

struct GrpoConfig {
    double eps_var = 1e-8;
    double eps_clip = 0.2;
    double lambda_kl = 0.02;
    GrpoVariant variant = GrpoVariant::dr_grpo;
    std::size_t inner_epochs = 1;

    void validate() const;
};

/// vanilla: (r - mean) / sqrt(population variance + eps_var); dr_grpo: r - mean.
std::vector<double> group_advantages(std::span<const double> rewards, const GrpoConfig& cfg);

/// exp(logp_new - logp_old) with the exponent clamped to [-30, 30].
double ppo_ratio(double logp_new, double logp_old);

struct LossAndGrad {
    double loss = 0.0;
    PolicyParams grad;
};

/// Clipped-ratio surrogate with token-level ratios against the behaviour snapshot's stored
/// log-probs, plus lambda_kl times the mean per-sequence step KL to `ref`. The vanilla
/// variant divides each sequence's token sum by its length; dr_grpo does not.
LossAndGrad grpo_loss(const RolloutGroup& group, const PolicyParams& params,
                      const PolicyParams& ref, std::span<const double> ctx,
                      const GrpoConfig& cfg);

}  // namespace orapo
