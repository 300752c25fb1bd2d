#include "orapo/policy_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>

namespace orapo {

namespace {

constexpr std::uint32_t kParamsMagic = 0x5050524fu;  // "ORPP" little-endian
constexpr std::uint16_t kParamsVersion = 1;
constexpr std::size_t kHeaderBytes = 16;

void check_ctx(const PolicyParams& params, std::span<const double> ctx) {
    if (ctx.size() != params.dims().context)
        throw ConfigError("context dimension " + std::to_string(ctx.size()) +
                          " does not match policy dimension " +
                          std::to_string(params.dims().context));
}

void check_token(const PolicyParams& params, TokenId t) {
    if (t >= params.dims().vocab)
        throw InputError("token id " + std::to_string(t) + " out of range for vocabulary of " +
                         std::to_string(params.dims().vocab));
}

// Pre-activation for an empty prefix: Wc^T ctx + b.
std::vector<double> base_preactivation(const PolicyParams& params, std::span<const double> ctx) {
    const auto H = params.dims().hidden;
    std::vector<double> pre(H);
    for (std::size_t h = 0; h < H; ++h) pre[h] = params.b(h);
    for (std::size_t d = 0; d < ctx.size(); ++d) {
        const double c = ctx[d];
        if (c == 0.0) continue;
        for (std::size_t h = 0; h < H; ++h) pre[h] += c * params.wc(d, h);
    }
    return pre;
}

void add_token_embedding(const PolicyParams& params, TokenId t, std::vector<double>& pre) {
    for (std::size_t h = 0; h < pre.size(); ++h) pre[h] += params.wp(t, h);
}

// hidden = tanh(pre); logits = U^T hidden
void hidden_and_logits(const PolicyParams& params, const std::vector<double>& pre,
                       double* hidden, double* logits) {
    const auto H = params.dims().hidden;
    const auto V = params.dims().vocab;
    std::fill(logits, logits + V, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
        const double a = std::tanh(pre[h]);
        hidden[h] = a;
        if (a == 0.0) continue;
        for (std::size_t v = 0; v < V; ++v) logits[v] += a * params.u(h, v);
    }
}

// In-place log-softmax; masked-out entries become -inf.
void log_softmax_inplace(double* x, std::size_t n, const std::vector<bool>& allowed) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i)
        if (allowed.empty() || allowed[i]) mx = std::max(mx, x[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (allowed.empty() || allowed[i]) sum += std::exp(x[i] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t i = 0; i < n; ++i)
        x[i] = (allowed.empty() || allowed[i]) ? x[i] - lse
                                               : -std::numeric_limits<double>::infinity();
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t offset, int width) {
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
        v |= static_cast<std::uint64_t>(bytes[offset + static_cast<std::size_t>(i)]) << (8 * i);
    return v;
}

}  // namespace

std::vector<Fact> facts_from_tokens(const TokenSeq& seq, const Vocabulary& vocab) {
    std::vector<Fact> facts;
    for (auto t : seq.tokens) {
        if (!vocab.is_label_token(t)) continue;
        facts.push_back({vocab.label_of(t), vocab.polarity_of(t), facts.size()});
    }
    return facts;
}

TokenSeq tokens_from_facts(const std::vector<Fact>& facts, const Vocabulary& vocab) {
    TokenSeq seq;
    seq.tokens.reserve(facts.size() + 1);
    for (const auto& f : facts) seq.tokens.push_back(vocab.token_for(f));
    seq.tokens.push_back(Vocabulary::eos());
    seq.terminated = true;
    return seq;
}

void PolicyParams::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

void PolicyParams::axpy(double alpha, const PolicyParams& other) {
    check_same_shape(other, "axpy");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += alpha * other.data_[i];
}

void PolicyParams::scale(double alpha) {
    for (auto& x : data_) x *= alpha;
}

double PolicyParams::dot(const PolicyParams& other) const {
    check_same_shape(other, "dot");
    return std::inner_product(data_.begin(), data_.end(), other.data_.begin(), 0.0);
}

double PolicyParams::norm() const { return std::sqrt(dot(*this)); }

bool PolicyParams::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

void PolicyParams::check_same_shape(const PolicyParams& other, const char* where) const {
    if (!(dims_ == other.dims_))
        throw ConfigError(std::string(where) + ": policy shape mismatch");
}

PolicyParams init_params(const PolicyDims& dims, const PolicyInit& init, std::uint64_t seed) {
    PolicyParams p(dims);
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, init.weight_scale);
    for (auto& x : p.flat()) x = normal(rng);
    if (!init.use_prior || dims.hidden == 0 || dims.vocab < 2) return p;

    for (std::size_t d = 0; d < dims.context; ++d) p.wc(d, 0) = 0.0;
    for (std::size_t v = 0; v < dims.vocab; ++v) p.wp(v, 0) = 0.0;
    p.b(0) = init.bias_unit_preactivation;
    const double a = std::tanh(init.bias_unit_preactivation);
    const std::size_t labels = (dims.vocab - 2) / 2;
    for (std::size_t v = 0; v < dims.vocab; ++v) {
        double logit = init.assert_logit;
        if (v == Vocabulary::bos()) logit = init.bos_logit;
        else if (v == Vocabulary::eos()) logit = init.eos_logit;
        else if (v >= 2 + labels) logit = init.negate_logit;
        p.u(0, v) = logit / a;
    }
    return p;
}

void SamplerConfig::validate(std::size_t vocab) const {
    if (group_size < 2) throw ConfigError("sampler: group size K must be >= 2");
    if (max_len < 1) throw ConfigError("sampler: max_len must be >= 1");
    if (!(temperature > 0.0)) throw ConfigError("sampler: temperature must be > 0");
    if (!allowed.empty()) {
        if (allowed.size() != vocab) throw ConfigError("sampler: mask size != vocabulary size");
        if (!allowed[Vocabulary::eos()]) throw ConfigError("sampler: EOS must stay reachable");
    }
}

double Rollout::log_prob() const noexcept {
    return std::accumulate(token_logp.begin(), token_logp.end(), 0.0);
}

std::vector<double> forward_logits(const PolicyParams& params, std::span<const double> ctx,
                                   const TokenSeq& prefix) {
    check_ctx(params, ctx);
    if (prefix.terminated) throw InputError("forward_logits: prefix is already terminated");
    auto pre = base_preactivation(params, ctx);
    for (auto t : prefix.tokens) {
        check_token(params, t);
        add_token_embedding(params, t, pre);
    }
    std::vector<double> hidden(params.dims().hidden), logits(params.dims().vocab);
    hidden_and_logits(params, pre, hidden.data(), logits.data());
    return logits;
}

RolloutGroup sample_group(const PolicyParams& params, std::span<const double> ctx,
                          const SamplerConfig& cfg, Rng& rng) {
    check_ctx(params, ctx);
    const auto V = params.dims().vocab;
    cfg.validate(V);

    const auto base = base_preactivation(params, ctx);
    std::vector<double> hidden(params.dims().hidden), logits(V), logp(V), scaled(V);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    RolloutGroup group;
    group.rollouts.resize(cfg.group_size);
    for (auto& r : group.rollouts) {
        auto pre = base;
        while (true) {
            hidden_and_logits(params, pre, hidden.data(), logits.data());
            std::copy(logits.begin(), logits.end(), logp.begin());
            log_softmax_inplace(logp.data(), V, cfg.allowed);
            if (cfg.temperature == 1.0) {
                std::copy(logp.begin(), logp.end(), scaled.begin());
            } else {
                for (std::size_t v = 0; v < V; ++v) scaled[v] = logits[v] / cfg.temperature;
                log_softmax_inplace(scaled.data(), V, cfg.allowed);
            }
            const double u = unif(rng);
            double cum = 0.0;
            TokenId tok = Vocabulary::eos();
            TokenId last_allowed = Vocabulary::eos();
            bool picked = false;
            for (std::size_t v = 0; v < V; ++v) {
                if (!cfg.allowed.empty() && !cfg.allowed[v]) continue;
                last_allowed = static_cast<TokenId>(v);
                cum += std::exp(scaled[v]);
                if (u < cum) {
                    tok = static_cast<TokenId>(v);
                    picked = true;
                    break;
                }
            }
            if (!picked) tok = last_allowed;  // rounding slack at the top of the CDF
            r.seq.tokens.push_back(tok);
            r.token_logp.push_back(logp[tok]);
            if (tok == Vocabulary::eos() || r.seq.tokens.size() >= cfg.max_len) break;
            add_token_embedding(params, tok, pre);
        }
        r.seq.terminated = true;
    }
    group.rewards.assign(cfg.group_size, 0.0);
    return group;
}

TokenSeq greedy_decode(const PolicyParams& params, std::span<const double> ctx,
                       std::size_t max_len) {
    check_ctx(params, ctx);
    auto pre = base_preactivation(params, ctx);
    std::vector<double> hidden(params.dims().hidden), logits(params.dims().vocab);
    TokenSeq seq;
    while (seq.tokens.size() < max_len) {
        hidden_and_logits(params, pre, hidden.data(), logits.data());
        auto tok = static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) -
                                        logits.begin());
        seq.tokens.push_back(tok);
        if (tok == Vocabulary::eos()) break;
        add_token_embedding(params, tok, pre);
    }
    seq.terminated = true;
    return seq;
}

SequenceTrace trace_sequence(const PolicyParams& params, std::span<const double> ctx,
                             const TokenSeq& seq) {
    check_ctx(params, ctx);
    const auto H = params.dims().hidden;
    const auto V = params.dims().vocab;
    SequenceTrace tr;
    tr.steps = seq.tokens.size();
    tr.hidden.resize(tr.steps * H);
    tr.log_probs.resize(tr.steps * V);
    auto pre = base_preactivation(params, ctx);
    static const std::vector<bool> kAll;
    for (std::size_t t = 0; t < tr.steps; ++t) {
        const auto tok = seq.tokens[t];
        check_token(params, tok);
        double* lp = tr.log_probs.data() + t * V;
        hidden_and_logits(params, pre, tr.hidden.data() + t * H, lp);
        log_softmax_inplace(lp, V, kAll);
        if (t + 1 < tr.steps) add_token_embedding(params, tok, pre);
    }
    return tr;
}

void backprop_sequence(const PolicyParams& params, std::span<const double> ctx,
                       const TokenSeq& seq, const SequenceTrace& trace,
                       std::span<const double> logit_grads, PolicyParams& grad) {
    params.check_same_shape(grad, "backprop_sequence");
    const auto H = params.dims().hidden;
    const auto V = params.dims().vocab;
    const auto n = trace.steps;
    if (logit_grads.size() != n * V) throw ConfigError("backprop_sequence: gradient size");

    std::vector<double> dpre_total(H, 0.0);
    std::vector<double> suffix(H, 0.0);  // sum of dpre over steps after the current token
    std::vector<double> dpre(H);
    for (std::size_t t = n; t-- > 0;) {
        const double* a = trace.hidden.data() + t * H;
        const double* g = logit_grads.data() + t * V;
        for (std::size_t h = 0; h < H; ++h) {
            double da = 0.0;
            for (std::size_t v = 0; v < V; ++v) {
                grad.u(h, v) += a[h] * g[v];
                da += params.u(h, v) * g[v];
            }
            dpre[h] = (1.0 - a[h] * a[h]) * da;
        }
        // Token t only influences the positions after it.
        const auto tok = seq.tokens[t];
        for (std::size_t h = 0; h < H; ++h) grad.wp(tok, h) += suffix[h];
        for (std::size_t h = 0; h < H; ++h) {
            suffix[h] += dpre[h];
            dpre_total[h] += dpre[h];
        }
    }
    for (std::size_t h = 0; h < H; ++h) grad.b(h) += dpre_total[h];
    for (std::size_t d = 0; d < ctx.size(); ++d) {
        const double c = ctx[d];
        if (c == 0.0) continue;
        for (std::size_t h = 0; h < H; ++h) grad.wc(d, h) += c * dpre_total[h];
    }
}

std::vector<double> token_log_probs(const PolicyParams& params, std::span<const double> ctx,
                                    const TokenSeq& seq) {
    const auto tr = trace_sequence(params, ctx, seq);
    const auto V = params.dims().vocab;
    std::vector<double> out(tr.steps);
    for (std::size_t t = 0; t < tr.steps; ++t) out[t] = tr.log_probs[t * V + seq.tokens[t]];
    return out;
}

double sequence_log_prob(const PolicyParams& params, std::span<const double> ctx,
                         const TokenSeq& seq) {
    const auto lp = token_log_probs(params, ctx, seq);
    return std::accumulate(lp.begin(), lp.end(), 0.0);
}

void accumulate_log_prob_grad(const PolicyParams& params, std::span<const double> ctx,
                              const TokenSeq& seq, double weight, PolicyParams& grad) {
    const auto tr = trace_sequence(params, ctx, seq);
    const auto V = params.dims().vocab;
    std::vector<double> g(tr.steps * V);
    for (std::size_t t = 0; t < tr.steps; ++t) {
        for (std::size_t v = 0; v < V; ++v) g[t * V + v] = -weight * std::exp(tr.log_probs[t * V + v]);
        g[t * V + seq.tokens[t]] += weight;
    }
    backprop_sequence(params, ctx, seq, tr, g, grad);
}

PolicyParams log_prob_grad(const PolicyParams& params, std::span<const double> ctx,
                           const TokenSeq& seq) {
    PolicyParams grad(params.dims());
    accumulate_log_prob_grad(params, ctx, seq, 1.0, grad);
    return grad;
}

KlResult step_kl(const PolicyParams& params, const PolicyParams& ref,
                 std::span<const double> ctx, const TokenSeq& seq) {
    params.check_same_shape(ref, "step_kl");
    KlResult out{0.0, PolicyParams(params.dims())};
    const auto n = seq.tokens.size();
    if (n == 0) return out;
    const auto V = params.dims().vocab;
    const auto tp = trace_sequence(params, ctx, seq);
    const auto tq = trace_sequence(ref, ctx, seq);
    std::vector<double> g(n * V);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t t = 0; t < n; ++t) {
        const double* lp = tp.log_probs.data() + t * V;
        const double* lq = tq.log_probs.data() + t * V;
        double kl = 0.0;
        for (std::size_t v = 0; v < V; ++v) kl += std::exp(lp[v]) * (lp[v] - lq[v]);
        for (std::size_t v = 0; v < V; ++v)
            g[t * V + v] = inv_n * std::exp(lp[v]) * (lp[v] - lq[v] - kl);
        out.value += kl;
    }
    out.value *= inv_n;
    backprop_sequence(params, ctx, seq, tp, g, out.grad);
    return out;
}

std::vector<std::uint8_t> encode_params(const PolicyParams& params) {
    const auto& d = params.dims();
    if (d.context > 0xffff || d.hidden > 0xffff || d.vocab > 0xffff)
        throw ConfigError("encode_params: dimension exceeds 16-bit header field");
    std::vector<std::uint8_t> out;
    out.reserve(kHeaderBytes + 8 * params.size());
    put_u32(out, kParamsMagic);
    put_u16(out, kParamsVersion);
    put_u16(out, static_cast<std::uint16_t>(d.context));
    put_u16(out, static_cast<std::uint16_t>(d.hidden));
    put_u16(out, static_cast<std::uint16_t>(d.vocab));
    put_u32(out, 0);
    for (double x : params.flat()) {
        const auto bits = std::bit_cast<std::uint64_t>(x);
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
    return out;
}

PolicyParams decode_params(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kHeaderBytes) throw ParseError("policy checkpoint: truncated header");
    if (get_le(bytes, 0, 4) != kParamsMagic) throw ParseError("policy checkpoint: bad magic");
    if (get_le(bytes, 4, 2) != kParamsVersion)
        throw ParseError("policy checkpoint: unsupported version");
    PolicyDims dims{get_le(bytes, 6, 2), get_le(bytes, 8, 2), get_le(bytes, 10, 2)};
    PolicyParams p(dims);
    if (bytes.size() != kHeaderBytes + 8 * p.size())
        throw ParseError("policy checkpoint: payload size does not match header dimensions");
    auto flat = p.flat();
    for (std::size_t i = 0; i < flat.size(); ++i)
        flat[i] = std::bit_cast<double>(get_le(bytes, kHeaderBytes + 8 * i, 8));
    return p;
}

void save_params(const PolicyParams& params, const std::filesystem::path& path) {
    const auto bytes = encode_params(params);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

PolicyParams load_params(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return decode_params(bytes);
}

}  // namespace orapo
