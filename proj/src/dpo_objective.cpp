#include "orapo/dpo_objective.hpp"

#include <cmath>

namespace orapo {

void DpoConfig::validate() const {
    if (!(tau > 0.0)) throw ConfigError("dpo: tau must be > 0");
}

double log_sigmoid(double x) {
    return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

std::vector<PreferencePair> build_pairs(const RolloutGroup& group, const TokenSeq& gt,
                                        std::span<const double> ctx, const DpoConfig& cfg,
                                        double zero_threshold) {
    if (gt.tokens.empty()) throw InputError("build_pairs: ground-truth report is empty");
    std::vector<PreferencePair> pairs;
    for (std::size_t j = 0; j < group.size(); ++j) {
        const double r = j < group.rewards.size() ? group.rewards[j] : 0.0;
        if (cfg.negatives == NegativesPolicy::zero_reward_only && r > zero_threshold) continue;
        const auto& seq = group.rollouts[j].seq;
        if (seq.tokens == gt.tokens) continue;
        pairs.push_back({ContextVec(ctx.begin(), ctx.end()), gt, seq, r});
    }
    return pairs;
}

namespace {

double length_scale(const TokenSeq& seq, DpoVariant variant) {
    if (variant == DpoVariant::vanilla || seq.tokens.empty()) return 1.0;
    return 1.0 / static_cast<double>(seq.tokens.size());
}

}  // namespace

Margins dpo_margins(const PolicyParams& params, const PolicyParams& ref,
                    const PreferencePair& pair, DpoVariant variant) {
    params.check_same_shape(ref, "dpo_margins");
    Margins m;
    m.plus = length_scale(pair.y_plus, variant) *
             (sequence_log_prob(params, pair.ctx, pair.y_plus) -
              sequence_log_prob(ref, pair.ctx, pair.y_plus));
    m.minus = length_scale(pair.y_minus, variant) *
              (sequence_log_prob(params, pair.ctx, pair.y_minus) -
               sequence_log_prob(ref, pair.ctx, pair.y_minus));
    return m;
}

LossAndGrad dpo_loss(std::span<const PreferencePair> pairs, const PolicyParams& params,
                     const PolicyParams& ref, const DpoConfig& cfg) {
    if (pairs.empty()) throw ConfigError("dpo_loss: no preference pairs (caller must skip)");
    LossAndGrad out{0.0, PolicyParams(params.dims())};
    const double inv_n = 1.0 / static_cast<double>(pairs.size());
    for (const auto& pair : pairs) {
        const auto m = dpo_margins(params, ref, pair, cfg.variant);
        const double x = cfg.tau * (m.plus - m.minus);
        out.loss -= inv_n * log_sigmoid(x);
        // d/dx [-log sigmoid(x)] = -sigmoid(-x)
        const double dx = -inv_n * cfg.tau * std::exp(log_sigmoid(-x));
        accumulate_log_prob_grad(params, pair.ctx, pair.y_plus,
                                 dx * length_scale(pair.y_plus, cfg.variant), out.grad);
        accumulate_log_prob_grad(params, pair.ctx, pair.y_minus,
                                 -dx * length_scale(pair.y_minus, cfg.variant), out.grad);
    }
    return out;
}

}  // namespace orapo
