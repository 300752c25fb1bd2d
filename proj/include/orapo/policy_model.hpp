#pragma once

#include "orapo/common.hpp"
#include "orapo/facts_reward.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace orapo {

using TokenId = std::uint32_t;
using ContextVec = std::vector<double>;

/// Token space {BOS, EOS} followed by one assert and one negate token per label.
class Vocabulary {
public:
    explicit Vocabulary(std::size_t num_labels) : labels_(num_labels) {}

    std::size_t size() const noexcept { return 2 + 2 * labels_; }
    std::size_t num_labels() const noexcept { return labels_; }

    static constexpr TokenId bos() noexcept { return 0; }
    static constexpr TokenId eos() noexcept { return 1; }
    TokenId assert_token(std::size_t label) const { return static_cast<TokenId>(2 + label); }
    TokenId negate_token(std::size_t label) const {
        return static_cast<TokenId>(2 + labels_ + label);
    }
    bool is_label_token(TokenId t) const noexcept { return t >= 2 && t < size(); }
    std::size_t label_of(TokenId t) const { return (t - 2) % labels_; }
    Polarity polarity_of(TokenId t) const {
        return t < 2 + labels_ ? Polarity::positive : Polarity::negative;
    }

    TokenId token_for(const Fact& f) const {
        return f.polarity == Polarity::positive ? assert_token(f.label) : negate_token(f.label);
    }

private:
    std::size_t labels_;
};

/// A generated (or reference) report. EOS, when present, is the final element.
struct TokenSeq {
    std::vector<TokenId> tokens;
    bool terminated = false;

    std::size_t length() const noexcept { return tokens.size(); }
    bool ends_with_eos() const noexcept {
        return !tokens.empty() && tokens.back() == Vocabulary::eos();
    }
    bool operator==(const TokenSeq&) const = default;
};

/// Facts in token order; BOS/EOS carry no fact.
std::vector<Fact> facts_from_tokens(const TokenSeq& seq, const Vocabulary& vocab);
/// One token per fact followed by EOS.
TokenSeq tokens_from_facts(const std::vector<Fact>& facts, const Vocabulary& vocab);

struct PolicyDims {
    std::size_t context = 32;
    std::size_t hidden = 24;
    std::size_t vocab = 30;

    std::size_t parameter_count() const noexcept {
        return context * hidden + vocab * hidden + hidden + hidden * vocab;
    }
    bool operator==(const PolicyDims&) const = default;
};

/// Dense parameters of the one-hidden-layer policy
///   logits = U^T tanh(Wc^T ctx + Wp^T bag(prefix) + b)
/// stored contiguously as [Wc (D x H) | Wp (V x H) | b (H) | U (H x V)], row-major.
/// Gradients use the same type.
class PolicyParams {
public:
    PolicyParams() = default;
    explicit PolicyParams(PolicyDims dims)
        : dims_(dims), data_(dims.parameter_count(), 0.0) {}

    const PolicyDims& dims() const noexcept { return dims_; }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<double> flat() noexcept { return data_; }
    std::span<const double> flat() const noexcept { return data_; }

    double& wc(std::size_t d, std::size_t h) { return data_[d * dims_.hidden + h]; }
    double wc(std::size_t d, std::size_t h) const { return data_[d * dims_.hidden + h]; }
    double& wp(std::size_t v, std::size_t h) { return data_[wp_offset() + v * dims_.hidden + h]; }
    double wp(std::size_t v, std::size_t h) const {
        return data_[wp_offset() + v * dims_.hidden + h];
    }
    double& b(std::size_t h) { return data_[b_offset() + h]; }
    double b(std::size_t h) const { return data_[b_offset() + h]; }
    double& u(std::size_t h, std::size_t v) { return data_[u_offset() + h * dims_.vocab + v]; }
    double u(std::size_t h, std::size_t v) const {
        return data_[u_offset() + h * dims_.vocab + v];
    }

    std::size_t wp_offset() const noexcept { return dims_.context * dims_.hidden; }
    std::size_t b_offset() const noexcept { return wp_offset() + dims_.vocab * dims_.hidden; }
    std::size_t u_offset() const noexcept { return b_offset() + dims_.hidden; }

    void set_zero();
    /// this += alpha * other
    void axpy(double alpha, const PolicyParams& other);
    void scale(double alpha);
    double dot(const PolicyParams& other) const;
    double norm() const;
    bool all_finite() const;
    void check_same_shape(const PolicyParams& other, const char* where) const;

    bool operator==(const PolicyParams&) const = default;

private:
    PolicyDims dims_{};
    std::vector<double> data_;
};

/// Initial "base model". Hidden unit 0 is saturated by a large bias and its output row
/// carries a per-token-class logit prior; all other weights are i.i.d. N(0, weight_scale^2).
struct PolicyInit {
    double weight_scale = 0.1;
    bool use_prior = true;
    double bias_unit_preactivation = 3.0;
    double bos_logit = -4.0;
    double eos_logit = 6.5;
    double assert_logit = 0.0;
    double negate_logit = 2.65;
};

PolicyParams init_params(const PolicyDims& dims, const PolicyInit& init, std::uint64_t seed);

struct SamplerConfig {
    std::size_t group_size = 8;
    std::size_t max_len = 12;
    double temperature = 1.0;
    std::uint64_t seed = 0;
    /// Optional token mask (empty = every token allowed).
    std::vector<bool> allowed;

    void validate(std::size_t vocab) const;
};

struct Rollout {
    TokenSeq seq;
    std::vector<double> token_logp;  // temperature-1 log-probs under the sampling policy

    double log_prob() const noexcept;
};

struct RolloutGroup {
    std::vector<Rollout> rollouts;
    std::vector<double> rewards;

    std::size_t size() const noexcept { return rollouts.size(); }
};

/// Logits after reading `prefix`.
std::vector<double> forward_logits(const PolicyParams& params, std::span<const double> ctx,
                                   const TokenSeq& prefix);

RolloutGroup sample_group(const PolicyParams& params, std::span<const double> ctx,
                          const SamplerConfig& cfg, Rng& rng);

/// Greedy (argmax) decoding; ties resolve to the lowest token id.
TokenSeq greedy_decode(const PolicyParams& params, std::span<const double> ctx,
                       std::size_t max_len);

/// Forward activations at each position of a sequence, kept for reverse accumulation.
struct SequenceTrace {
    std::size_t steps = 0;
    std::vector<double> hidden;     // steps x H, tanh outputs
    std::vector<double> log_probs;  // steps x V, log-softmax of logits

    std::span<const double> log_probs_at(std::size_t t, std::size_t vocab) const {
        return std::span<const double>(log_probs).subspan(t * vocab, vocab);
    }
};

SequenceTrace trace_sequence(const PolicyParams& params, std::span<const double> ctx,
                             const TokenSeq& seq);

/// grad += d/dparams sum_t <logit_grads[t], logits_t>, i.e. backpropagates caller-supplied
/// gradients wrt every step's logits through the network.
void backprop_sequence(const PolicyParams& params, std::span<const double> ctx,
                       const TokenSeq& seq, const SequenceTrace& trace,
                       std::span<const double> logit_grads, PolicyParams& grad);

std::vector<double> token_log_probs(const PolicyParams& params, std::span<const double> ctx,
                                    const TokenSeq& seq);
double sequence_log_prob(const PolicyParams& params, std::span<const double> ctx,
                         const TokenSeq& seq);
PolicyParams log_prob_grad(const PolicyParams& params, std::span<const double> ctx,
                           const TokenSeq& seq);
/// grad += weight * d log pi(seq) / d params
void accumulate_log_prob_grad(const PolicyParams& params, std::span<const double> ctx,
                              const TokenSeq& seq, double weight, PolicyParams& grad);

struct KlResult {
    double value = 0.0;
    PolicyParams grad;
};

/// Exact categorical KL(pi_params || pi_ref) at every position of `seq`, averaged over
/// positions, with its gradient wrt `params`.
KlResult step_kl(const PolicyParams& params, const PolicyParams& ref,
                 std::span<const double> ctx, const TokenSeq& seq);

inline PolicyParams snapshot(const PolicyParams& params) { return params; }

/// 16-byte header (magic "ORPP", u16 version, u16 D, u16 H, u16 V, u32 reserved) followed by
/// the flat parameter vector as little-endian IEEE-754 doubles.
std::vector<std::uint8_t> encode_params(const PolicyParams& params);
PolicyParams decode_params(std::span<const std::uint8_t> bytes);
void save_params(const PolicyParams& params, const std::filesystem::path& path);
PolicyParams load_params(const std::filesystem::path& path);

}  // namespace orapo
