#include "orapo/orapo_scheduler.hpp"

#include <algorithm>
#include <cmath>

namespace orapo {

void MixSchedule::validate() const {
    if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("schedule: alpha must be in [0,1)");
    if (!(w_min >= 0.0 && w_min <= w_max && w_max <= 1.0))
        throw ConfigError("schedule: need 0 <= w_min <= w_max <= 1");
    if (!(gamma > 0.0)) throw ConfigError("schedule: gamma must be > 0");
}

double raw_zrr(std::span<const double> rewards, double zero_threshold) {
    if (rewards.empty()) throw ConfigError("raw_zrr: empty reward group");
    const auto zeros = std::count_if(rewards.begin(), rewards.end(),
                                     [&](double r) { return r <= zero_threshold; });
    return static_cast<double>(zeros) / static_cast<double>(rewards.size());
}

double update_ema(ZrrState& state, const std::string& key, double z, const MixSchedule& sched) {
    if (!(z >= 0.0 && z <= 1.0)) throw InputError("update_ema: z must lie in [0,1]");
    auto [it, fresh] = state.ema.try_emplace(key, z);
    if (!fresh) it->second = sched.alpha * it->second + (1.0 - sched.alpha) * z;
    it->second = std::clamp(it->second, 0.0, 1.0);
    return it->second;
}

double mixing_weight(double z_tilde, const MixSchedule& sched) {
    const double raw = sched.w_min + (sched.w_max - sched.w_min) * std::pow(z_tilde, sched.gamma);
    return std::clamp(raw, sched.w_min, sched.w_max);
}

BatchLoss orapo_batch_loss(std::span<const PromptBatchItem> batch, const PolicyParams& params,
                           const PolicyParams& ref, const GrpoConfig& grpo_cfg,
                           const DpoConfig& dpo_cfg, double zero_threshold) {
    if (batch.empty()) throw ConfigError("orapo_batch_loss: empty batch");
    BatchLoss out{0.0, PolicyParams(params.dims()), {}};
    out.parts.reserve(batch.size());
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    for (const auto& item : batch) {
        PromptLossParts part;
        auto grpo = grpo_loss(item.group, params, ref, item.ctx, grpo_cfg);
        part.grpo = grpo.loss;

        const auto pairs = build_pairs(item.group, item.gt_report, item.ctx, dpo_cfg, zero_threshold);
        part.pairs = pairs.size();
        part.weight = pairs.empty() ? 0.0 : item.weight;

        out.loss += inv_b * (1.0 - part.weight) * grpo.loss;
        out.grad.axpy(inv_b * (1.0 - part.weight), grpo.grad);
        if (!pairs.empty()) {
            auto dpo = dpo_loss(pairs, params, ref, dpo_cfg);
            part.dpo = dpo.loss;
            out.loss += inv_b * part.weight * dpo.loss;
            out.grad.axpy(inv_b * part.weight, dpo.grad);
        }
        out.parts.push_back(part);
    }
    return out;
}

}  // namespace orapo
