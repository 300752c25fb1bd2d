#include "orapo/trainer.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>

namespace orapo {

namespace {

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double x = std::stod(v, &used);
        if (used == v.size()) return x;
    } catch (const std::exception&) {
    }
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t x = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
    return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

template <typename E>
E parse_enum(const std::string& key, const std::string& v,
             std::initializer_list<std::pair<const char*, E>> options) {
    for (const auto& [name, value] : options)
        if (v == name) return value;
    std::string allowed;
    for (const auto& o : options) allowed += std::string(allowed.empty() ? "" : "|") + o.first;
    throw ConfigError("config: '" + key + "' expects one of " + allowed + ", got '" + v + "'");
}

template <typename E>
std::string enum_name(E value, std::initializer_list<std::pair<const char*, E>> options) {
    for (const auto& [name, v] : options)
        if (v == value) return name;
    return "?";
}

struct Field {
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

#define ORAPO_DOUBLE(name, member)                                                         \
    Field {                                                                                \
        name, [](const RunConfig& c) { return fmt_double(c.member); },                     \
            [](RunConfig& c, const std::string& v) { c.member = parse_double(name, v); } \
    }
#define ORAPO_SIZE(name, member)                                                           \
    Field {                                                                                \
        name, [](const RunConfig& c) { return std::to_string(c.member); },                 \
            [](RunConfig& c, const std::string& v) {                                       \
                c.member = static_cast<decltype(c.member)>(parse_u64(name, v));            \
            }                                                                              \
    }

const std::initializer_list<std::pair<const char*, Algorithm>> kAlgorithms = {
    {"grpo", Algorithm::grpo}, {"orapo", Algorithm::orapo}};
const std::initializer_list<std::pair<const char*, RewardKind>> kRewards = {
    {"facts", RewardKind::facts}, {"exact_match", RewardKind::exact_match}};
const std::initializer_list<std::pair<const char*, GrpoVariant>> kGrpoVariants = {
    {"vanilla", GrpoVariant::vanilla}, {"dr_grpo", GrpoVariant::dr_grpo}};
const std::initializer_list<std::pair<const char*, DpoVariant>> kDpoVariants = {
    {"vanilla", DpoVariant::vanilla}, {"ln_dpo", DpoVariant::ln_dpo}};
const std::initializer_list<std::pair<const char*, NegativesPolicy>> kNegatives = {
    {"all_rollouts", NegativesPolicy::all_rollouts},
    {"zero_reward_only", NegativesPolicy::zero_reward_only}};
const std::initializer_list<std::pair<const char*, ZrrGranularity>> kGranularity = {
    {"per_prompt", ZrrGranularity::per_prompt}, {"per_batch", ZrrGranularity::per_batch}};
const std::initializer_list<std::pair<const char*, OptimizerKind>> kOptimizers = {
    {"sgd", OptimizerKind::sgd}, {"adam", OptimizerKind::adam}};

#define ORAPO_ENUM(name, member, table)                                                  \
    Field {                                                                              \
        name, [](const RunConfig& c) { return enum_name(c.member, table); },             \
            [](RunConfig& c, const std::string& v) { c.member = parse_enum(name, v, table); } \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> kFields = {
        ORAPO_ENUM("algorithm", algorithm, kAlgorithms),
        ORAPO_ENUM("reward", reward_kind, kRewards),
        ORAPO_SIZE("steps", steps),
        ORAPO_SIZE("batch_size", batch_size),
        ORAPO_SIZE("eval_every", eval_every),
        ORAPO_SIZE("seed", seed),
        ORAPO_SIZE("train_size", train_size),
        ORAPO_SIZE("eval_size", eval_size),
        ORAPO_SIZE("balance_min_count", balance_min_count),
        ORAPO_SIZE("group_size", sampler.group_size),
        ORAPO_SIZE("max_len", sampler.max_len),
        ORAPO_DOUBLE("temperature", sampler.temperature),
        ORAPO_DOUBLE("eps_var", grpo.eps_var),
        ORAPO_DOUBLE("eps_clip", grpo.eps_clip),
        ORAPO_DOUBLE("lambda_kl", grpo.lambda_kl),
        ORAPO_ENUM("grpo_variant", grpo.variant, kGrpoVariants),
        ORAPO_SIZE("inner_epochs", grpo.inner_epochs),
        ORAPO_DOUBLE("tau", dpo.tau),
        ORAPO_ENUM("dpo_variant", dpo.variant, kDpoVariants),
        ORAPO_ENUM("negatives", dpo.negatives, kNegatives),
        ORAPO_DOUBLE("alpha", schedule.alpha),
        ORAPO_DOUBLE("w_min", schedule.w_min),
        ORAPO_DOUBLE("w_max", schedule.w_max),
        ORAPO_DOUBLE("gamma", schedule.gamma),
        ORAPO_ENUM("granularity", granularity, kGranularity),
        ORAPO_DOUBLE("beta", reward.beta),
        ORAPO_DOUBLE("xi", reward.xi),
        ORAPO_DOUBLE("zero_threshold", reward.zero_threshold),
        ORAPO_DOUBLE("signal_strength", env.signal_strength),
        ORAPO_DOUBLE("noise_std", env.noise_std),
        ORAPO_SIZE("negatives_mentioned", env.negatives_mentioned),
        ORAPO_SIZE("context_dim", env.context_dim),
        ORAPO_SIZE("hidden", hidden),
        ORAPO_ENUM("optimizer", optimizer, kOptimizers),
        ORAPO_DOUBLE("lr", lr),
        ORAPO_DOUBLE("adam_beta1", adam_beta1),
        ORAPO_DOUBLE("adam_beta2", adam_beta2),
        ORAPO_DOUBLE("adam_eps", adam_eps),
        ORAPO_DOUBLE("init_scale", init.weight_scale),
        Field{"init_prior", [](const RunConfig& c) { return std::string(c.init.use_prior ? "true" : "false"); },
              [](RunConfig& c, const std::string& v) { c.init.use_prior = parse_bool("init_prior", v); }},
        ORAPO_DOUBLE("init_bos_logit", init.bos_logit),
        ORAPO_DOUBLE("init_eos_logit", init.eos_logit),
        ORAPO_DOUBLE("init_assert_logit", init.assert_logit),
        ORAPO_DOUBLE("init_negate_logit", init.negate_logit),
    };
    return kFields;
}

#undef ORAPO_DOUBLE
#undef ORAPO_SIZE
#undef ORAPO_ENUM

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    for (const auto& f : fields()) {
        if (key == f.key) {
            f.set(*this, value);
            return;
        }
    }
    throw ConfigError("config: unknown key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& f : fields()) out.emplace_back(f.key, f.get(*this));
    return out;
}

void RunConfig::validate() const {
    if (steps < 1) throw ConfigError("config: steps must be >= 1");
    if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (eval_every < 1) throw ConfigError("config: eval_every must be >= 1");
    if (train_size < 1 || eval_size < 1) throw ConfigError("config: dataset sizes must be >= 1");
    if (hidden < 1) throw ConfigError("config: hidden must be >= 1");
    if (!(lr >= 0.0)) throw ConfigError("config: lr must be >= 0");
    sampler.validate(sampler.allowed.size());
    grpo.validate();
    dpo.validate();
    schedule.validate();
    reward.validate();
    env.validate();
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        try {
            base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return base;
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
    cfg.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void write_run_config(std::ostream& out, const RunConfig& cfg) {
    for (const auto& [k, v] : cfg.entries()) out << k << " = " << v << '\n';
}

std::string to_string(Algorithm a) { return enum_name(a, kAlgorithms); }

}  // namespace orapo
