#include "orapo/grpo_objective.hpp"

#include <algorithm>
#include <cmath>

namespace orapo {

void GrpoConfig::validate() const {
    if (!(eps_var > 0.0)) throw ConfigError("grpo: eps_var must be > 0");
    if (!(eps_clip > 0.0 && eps_clip < 1.0)) throw ConfigError("grpo: eps_clip must be in (0,1)");
    if (!(lambda_kl >= 0.0)) throw ConfigError("grpo: lambda_kl must be >= 0");
    if (inner_epochs < 1) throw ConfigError("grpo: inner_epochs must be >= 1");
}

std::vector<double> group_advantages(std::span<const double> rewards, const GrpoConfig& cfg) {
    const auto k = rewards.size();
    if (k < 2) throw ConfigError("group_advantages: group size must be >= 2");
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(k);

    std::vector<double> adv(k);
    for (std::size_t j = 0; j < k; ++j) adv[j] = rewards[j] - mean;
    if (cfg.variant == GrpoVariant::dr_grpo) return adv;

    double var = 0.0;
    for (double a : adv) var += a * a;
    var /= static_cast<double>(k);
    const double sigma = std::sqrt(var + cfg.eps_var);
    for (auto& a : adv) a /= sigma;
    return adv;
}

double ppo_ratio(double logp_new, double logp_old) {
    return std::exp(std::clamp(logp_new - logp_old, -30.0, 30.0));
}

LossAndGrad grpo_loss(const RolloutGroup& group, const PolicyParams& params,
                      const PolicyParams& ref, std::span<const double> ctx,
                      const GrpoConfig& cfg) {
    params.check_same_shape(ref, "grpo_loss");
    const auto k = group.size();
    if (group.rewards.size() != k) throw ConfigError("grpo_loss: rewards/rollouts size mismatch");
    for (double r : group.rewards)
        if (!std::isfinite(r)) throw InputError("grpo_loss: non-finite reward");

    const auto adv = group_advantages(group.rewards, cfg);
    const auto V = params.dims().vocab;
    const double inv_k = 1.0 / static_cast<double>(k);

    LossAndGrad out{0.0, PolicyParams(params.dims())};
    double surrogate = 0.0;
    double kl_sum = 0.0;
    std::vector<double> g;
    for (std::size_t j = 0; j < k; ++j) {
        const auto& ro = group.rollouts[j];
        const auto n = ro.seq.length();
        if (ro.token_logp.size() != n) throw ConfigError("grpo_loss: stored log-prob length");
        if (n == 0) continue;
        const double len_scale =
            cfg.variant == GrpoVariant::vanilla ? 1.0 / static_cast<double>(n) : 1.0;

        const auto tr = trace_sequence(params, ctx, ro.seq);
        const bool need_kl = cfg.lambda_kl > 0.0;
        SequenceTrace tr_ref;
        if (need_kl) tr_ref = trace_sequence(ref, ctx, ro.seq);

        g.assign(n * V, 0.0);
        double seq_surrogate = 0.0;
        double seq_kl = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            const auto tok = ro.seq.tokens[t];
            const double* lp = tr.log_probs.data() + t * V;
            double* gt = g.data() + t * V;

            const double rho = ppo_ratio(lp[tok], ro.token_logp[t]);
            const double unclipped = rho * adv[j];
            const double clipped = std::clamp(rho, 1.0 - cfg.eps_clip, 1.0 + cfg.eps_clip) * adv[j];
            seq_surrogate += std::min(unclipped, clipped);
            // d/dlogits of the surrogate is zero on the clipped branch.
            if (unclipped <= clipped && adv[j] != 0.0) {
                const double c = -inv_k * len_scale * adv[j] * rho;
                for (std::size_t v = 0; v < V; ++v) gt[v] -= c * std::exp(lp[v]);
                gt[tok] += c;
            }

            if (need_kl) {
                const double* lq = tr_ref.log_probs.data() + t * V;
                double kl = 0.0;
                for (std::size_t v = 0; v < V; ++v) kl += std::exp(lp[v]) * (lp[v] - lq[v]);
                const double c = cfg.lambda_kl * inv_k / static_cast<double>(n);
                for (std::size_t v = 0; v < V; ++v)
                    gt[v] += c * std::exp(lp[v]) * (lp[v] - lq[v] - kl);
                seq_kl += kl;
            }
        }
        surrogate += len_scale * seq_surrogate;
        kl_sum += seq_kl / static_cast<double>(n);
        backprop_sequence(params, ctx, ro.seq, tr, g, out.grad);
    }
    out.loss = -inv_k * surrogate + cfg.lambda_kl * inv_k * kl_sum;
    return out;
}

}  // namespace orapo
