#include "orapo/synth_env.hpp"

#include "orapo/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace orapo {

namespace {

using json = nlohmann::json;

std::string prompt_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%06zu", index);
    return buf;
}

}  // namespace

PrevalenceProfile PrevalenceProfile::chest_xray_default(const LabelSet& labels) {
    const std::vector<std::pair<const char*, double>> table = {
        {"enlarged cardiomediastinum", 0.06}, {"cardiomegaly", 0.15},
        {"lung opacity", 0.30},               {"lung lesion", 0.05},
        {"edema", 0.20},                      {"consolidation", 0.08},
        {"pneumonia", 0.027},                 {"atelectasis", 0.20},
        {"pneumothorax", 0.09},               {"pleural effusion", 0.30},
        {"pleural other", 0.03},              {"fracture", 0.0405},
        {"support devices", 0.35},
    };
    PrevalenceProfile p;
    p.marginals.assign(labels.size(), 0.05);
    for (const auto& [name, prob] : table)
        if (auto idx = labels.find(name)) p.marginals[*idx] = prob;
    if (auto nf = labels.find("no finding")) {
        p.fallback_label = *nf;
        double none = 1.0;
        for (std::size_t l = 0; l < labels.size(); ++l)
            if (l != *nf) none *= 1.0 - p.marginals[l];
        p.marginals[*nf] = none;
    }
    return p;
}

void PrevalenceProfile::validate(std::size_t num_labels) const {
    if (marginals.size() != num_labels)
        throw ConfigError("prevalence profile: expected " + std::to_string(num_labels) +
                          " marginals, got " + std::to_string(marginals.size()));
    for (std::size_t l = 0; l < marginals.size(); ++l) {
        if (fallback_label && *fallback_label == l) continue;
        if (!(marginals[l] > 0.0 && marginals[l] < 1.0))
            throw ConfigError("prevalence profile: marginal out of (0,1) for label " +
                              std::to_string(l));
    }
    if (fallback_label && *fallback_label >= num_labels)
        throw ConfigError("prevalence profile: fallback label out of range");
    for (const auto& c : correlation_pairs) {
        if (c.first >= num_labels || c.second >= num_labels || c.first >= c.second)
            throw ConfigError("prevalence profile: correlation pair must satisfy first < second < L");
        if (!(c.odds_multiplier > 0.0))
            throw ConfigError("prevalence profile: odds multiplier must be > 0");
    }
}

PrevalenceProfile load_profile(const std::filesystem::path& path, const LabelSet& labels) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open prevalence profile " + path.string());
    PrevalenceProfile p;
    p.marginals.assign(labels.size(), -1.0);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) throw ParseError("expected label<TAB>probability", lineno);
        auto idx = labels.find(line.substr(0, tab));
        if (!idx) throw ParseError("unknown label '" + line.substr(0, tab) + "'", lineno);
        std::string value = line.substr(tab + 1);
        while (!value.empty() && (value.back() == '\r' || value.back() == ' ')) value.pop_back();
        if (value == "fallback") {
            p.fallback_label = *idx;
            p.marginals[*idx] = 0.0;
            continue;
        }
        try {
            std::size_t used = 0;
            p.marginals[*idx] = std::stod(value, &used);
            if (used != value.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw ParseError("bad probability '" + value + "'", lineno);
        }
    }
    for (std::size_t l = 0; l < labels.size(); ++l)
        if (p.marginals[l] < 0.0) throw ParseError("profile is missing label '" + labels.name(l) + "'");
    if (p.fallback_label) {
        double none = 1.0;
        for (std::size_t l = 0; l < labels.size(); ++l)
            if (l != *p.fallback_label) none *= 1.0 - p.marginals[l];
        p.marginals[*p.fallback_label] = none;
    }
    p.validate(labels.size());
    return p;
}

void EnvConfig::validate() const {
    if (!(noise_std >= 0.0)) throw ConfigError("env: noise_std must be >= 0");
    if (context_dim < 1) throw ConfigError("env: context_dim must be >= 1");
}

SynthEnv::SynthEnv(LabelSet labels, PrevalenceProfile profile, EnvConfig cfg)
    : labels_(std::move(labels)), profile_(std::move(profile)), cfg_(cfg) {
    profile_.validate(labels_.size());
    cfg_.validate();
    const auto D = cfg_.context_dim;
    const auto L = labels_.size();
    embedding_.resize(D * L);
    Rng rng(derive_seed(cfg_.seed, 0xE1BEDull));
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(D)));
    for (auto& e : embedding_) e = normal(rng);
}

std::vector<Fact> SynthEnv::reference_facts(const GroundTruth& gt, Rng& rng) const {
    const auto L = labels_.size();
    std::vector<std::size_t> negatives;
    for (std::size_t l = 0; l < L; ++l)
        if (gt.z_star[l] == 0 && !(profile_.fallback_label && *profile_.fallback_label == l))
            negatives.push_back(l);
    std::shuffle(negatives.begin(), negatives.end(), rng);
    negatives.resize(std::min(negatives.size(), cfg_.negatives_mentioned));
    std::sort(negatives.begin(), negatives.end());

    std::vector<Fact> facts;
    for (std::size_t l = 0; l < L; ++l) {
        if (gt.z_star[l]) {
            facts.push_back({l, Polarity::positive, facts.size()});
        } else if (std::binary_search(negatives.begin(), negatives.end(), l)) {
            facts.push_back({l, Polarity::negative, facts.size()});
        }
    }
    return facts;
}

StudyRecord SynthEnv::sample_study(Rng& rng, std::string prompt_id) const {
    const auto L = labels_.size();
    const auto D = cfg_.context_dim;
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    GroundTruth gt;
    gt.z_star.assign(L, 0);
    bool any = false;
    for (std::size_t l = 0; l < L; ++l) {
        if (profile_.fallback_label && *profile_.fallback_label == l) continue;
        double p = profile_.marginals[l];
        for (const auto& c : profile_.correlation_pairs) {
            if (c.second == l && gt.z_star[c.first]) {
                const double odds = c.odds_multiplier * p / (1.0 - p);
                p = odds / (1.0 + odds);
            }
        }
        if (unif(rng) < p) {
            gt.z_star[l] = 1;
            any = true;
        }
    }
    if (profile_.fallback_label && !any) gt.z_star[*profile_.fallback_label] = 1;

    StudyRecord rec;
    rec.prompt_id = std::move(prompt_id);
    rec.ctx.assign(D, 0.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t d = 0; d < D; ++d) {
        double s = 0.0;
        for (std::size_t l = 0; l < L; ++l)
            if (gt.z_star[l]) s += embedding(d, l);
        rec.ctx[d] = cfg_.signal_strength * s + cfg_.noise_std * noise(rng);
    }
    const auto facts = reference_facts(gt, rng);
    rec.gt_report = tokens_from_facts(facts, vocabulary());
    rec.gt_text = render_report(facts, labels_, rng());
    rec.z_star = std::move(gt);
    return rec;
}

std::vector<StudyRecord> make_dataset(std::size_t n, const SynthEnv& env, std::uint64_t seed,
                                      const std::vector<BalanceTarget>& balance) {
    if (n < 1) throw ConfigError("make_dataset: n must be >= 1");
    const auto L = env.labels().size();
    auto draw = [&](std::size_t index) {
        Rng rng(derive_seed(seed, index));
        return env.sample_study(rng, prompt_name(index));
    };
    std::vector<StudyRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(draw(i));
    if (balance.empty()) return out;

    for (const auto& t : balance)
        if (t.label >= L) throw ConfigError("make_dataset: balance label out of range");
    auto count = [&](std::size_t label) {
        return static_cast<std::size_t>(std::count_if(
            out.begin(), out.end(), [&](const StudyRecord& r) { return r.z_star.z_star[label]; }));
    };
    auto protected_record = [&](const StudyRecord& r) {
        return std::any_of(balance.begin(), balance.end(),
                           [&](const BalanceTarget& t) { return r.z_star.z_star[t.label] != 0; });
    };

    std::size_t next_index = n;
    const std::size_t max_index = n + 1000 * n + 100000;
    std::size_t victim = n;  // scan position, moving toward the front
    for (const auto& t : balance) {
        while (count(t.label) < t.min_count) {
            if (next_index >= max_index)
                throw ConfigError("make_dataset: balance target unreachable for label " +
                                  env.labels().name(t.label));
            auto cand = draw(next_index++);
            if (!cand.z_star.z_star[t.label]) continue;
            while (victim > 0 && protected_record(out[victim - 1])) --victim;
            if (victim == 0)
                throw ConfigError("make_dataset: no replaceable record left for balancing");
            out[--victim] = std::move(cand);
        }
    }
    return out;
}

void save_corpus(const std::vector<StudyRecord>& records, const LabelSet& labels,
                 const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write corpus " + path.string());
    for (const auto& r : records) {
        if (r.z_star.z_star.size() != labels.size())
            throw ConfigError("save_corpus: record label count mismatch");
        json j;
        j["prompt_id"] = r.prompt_id;
        j["context"] = r.ctx;
        std::vector<int> bits(r.z_star.z_star.begin(), r.z_star.z_star.end());
        j["labels"] = bits;
        j["report"] = r.gt_text;
        out << j.dump() << '\n';
    }
}

std::vector<StudyRecord> load_corpus(const std::filesystem::path& path, const LabelSet& labels,
                                     std::size_t context_dim) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open corpus " + path.string());
    const Vocabulary vocab(labels.size());
    std::vector<StudyRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("malformed JSON: ") + e.what(), lineno);
        }
        for (const char* field : {"prompt_id", "context", "labels", "report"})
            if (!j.contains(field)) throw ParseError(std::string("missing field '") + field + "'", lineno);

        StudyRecord rec;
        try {
            rec.prompt_id = j.at("prompt_id").get<std::string>();
            rec.ctx = j.at("context").get<std::vector<double>>();
            auto bits = j.at("labels").get<std::vector<int>>();
            if (bits.size() != labels.size())
                throw ParseError("labels has " + std::to_string(bits.size()) + " entries, expected " +
                                     std::to_string(labels.size()),
                                 lineno);
            for (int b : bits) {
                if (b != 0 && b != 1) throw ParseError("labels entries must be 0 or 1", lineno);
                rec.z_star.z_star.push_back(static_cast<std::uint8_t>(b));
            }
            rec.gt_text = j.at("report").get<std::string>();
        } catch (const json::exception& e) {
            throw ParseError(std::string("bad field type: ") + e.what(), lineno);
        }
        if (rec.ctx.size() != context_dim)
            throw ConfigError("line " + std::to_string(lineno) + ": context has dimension " +
                              std::to_string(rec.ctx.size()) + ", expected " +
                              std::to_string(context_dim));
        rec.gt_report = tokens_from_facts(extract_facts(rec.gt_text, labels).facts, vocab);
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace orapo
