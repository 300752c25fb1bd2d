#include "orapo/facts_reward.hpp"

#include "orapo/common.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>

namespace orapo {

namespace {

std::string lowercase(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::vector<std::string> split_words(std::string_view s) {
    std::vector<std::string> words;
    std::string cur;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c == '-' || c == '\'') {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

constexpr std::array<std::string_view, 3> kPositiveTemplates = {
    "There is {}.", "{} is present.", "Findings consistent with {}."};
constexpr std::array<std::string_view, 3> kNegativeTemplates = {
    "No {}.", "No evidence of {}.", "{} is absent."};

std::string fill(std::string_view tmpl, const std::string& name) {
    std::string out;
    auto pos = tmpl.find("{}");
    out.append(tmpl.substr(0, pos));
    out.append(name);
    out.append(tmpl.substr(pos + 2));
    if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
    return out;
}

}  // namespace

LabelSet::LabelSet(std::vector<std::string> names) : names_(std::move(names)) {
    std::set<std::string> seen;
    for (auto& n : names_) {
        n = lowercase(trim(n));
        if (n.empty()) throw ConfigError("label set: empty label name");
        if (!seen.insert(n).second) throw ConfigError("label set: duplicate label '" + n + "'");
    }
}

LabelSet LabelSet::chest_xray14() {
    return LabelSet({"no finding", "enlarged cardiomediastinum", "cardiomegaly", "lung opacity",
                     "lung lesion", "edema", "consolidation", "pneumonia", "atelectasis",
                     "pneumothorax", "pleural effusion", "pleural other", "fracture",
                     "support devices"});
}

std::optional<std::size_t> LabelSet::find(std::string_view name) const {
    auto key = lowercase(trim(name));
    auto it = std::find(names_.begin(), names_.end(), key);
    if (it == names_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names_.begin());
}

LabelSet load_label_set(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open label file " + path.string());
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        auto t = trim(line);
        if (!t.empty()) names.push_back(t);
    }
    return LabelSet(std::move(names));
}

std::size_t GroundTruth::positives() const noexcept {
    return static_cast<std::size_t>(std::count(z_star.begin(), z_star.end(), 1));
}

EntailmentOutcome EntailmentOutcome::from_status(std::vector<LabelStatus> status) {
    EntailmentOutcome out;
    out.z_hat.resize(status.size());
    for (std::size_t l = 0; l < status.size(); ++l)
        out.z_hat[l] = status[l] == LabelStatus::asserted ? 1 : 0;
    out.status = std::move(status);
    return out;
}

void RewardConfig::validate() const {
    if (!(beta > 0.0)) throw ConfigError("reward: beta must be > 0");
    if (!(xi > 0.0)) throw ConfigError("reward: xi must be > 0");
}

std::string render_report(const std::vector<Fact>& facts, const LabelSet& labels,
                          std::uint64_t style_seed) {
    Rng rng(style_seed);
    std::uniform_int_distribution<int> pick(0, 2);
    std::string out;
    for (const auto& f : facts) {
        const auto& tmpl = f.polarity == Polarity::positive ? kPositiveTemplates[pick(rng)]
                                                            : kNegativeTemplates[pick(rng)];
        if (!out.empty()) out.push_back(' ');
        out += fill(tmpl, labels.name(f.label));
    }
    return out;
}

Extraction extract_facts(std::string_view text, const LabelSet& labels) {
    std::vector<std::vector<std::string>> label_words;
    label_words.reserve(labels.size());
    for (const auto& n : labels.names()) label_words.push_back(split_words(n));

    Extraction out;
    std::size_t sentence_index = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto stop = text.find('.', start);
        if (stop == std::string_view::npos) stop = text.size();
        auto words = split_words(text.substr(start, stop - start));
        start = stop + 1;
        if (words.empty()) continue;

        std::size_t best_label = 0, best_pos = 0, best_len = 0, best_chars = 0;
        for (std::size_t l = 0; l < label_words.size(); ++l) {
            const auto& lw = label_words[l];
            if (lw.empty() || lw.size() > words.size()) continue;
            std::size_t chars = 0;
            for (const auto& w : lw) chars += w.size();
            for (std::size_t p = 0; p + lw.size() <= words.size(); ++p) {
                if (!std::equal(lw.begin(), lw.end(), words.begin() + static_cast<long>(p)))
                    continue;
                if (chars > best_chars || (chars == best_chars && p < best_pos)) {
                    best_label = l;
                    best_pos = p;
                    best_len = lw.size();
                    best_chars = chars;
                }
                break;
            }
        }
        const std::size_t idx = sentence_index++;
        if (best_chars == 0) {
            ++out.skipped_sentences;
            continue;
        }
        // Cues are looked for outside the matched label span, so "no finding" is not
        // mistaken for a negation of itself.
        bool negated = false;
        for (std::size_t p = 0; p < words.size(); ++p) {
            if (p >= best_pos && p < best_pos + best_len) continue;
            const auto& w = words[p];
            if (w == "no" || w == "without" || w == "absent") {
                negated = true;
                break;
            }
        }
        out.facts.push_back({best_label, negated ? Polarity::negative : Polarity::positive, idx});
    }
    return out;
}

EntailmentOutcome entail(const std::vector<Fact>& facts, const LabelSet& labels) {
    std::vector<LabelStatus> status(labels.size(), LabelStatus::unmentioned);
    for (const auto& f : facts) {
        if (f.label >= labels.size()) throw InputError("entail: fact label out of range");
        status[f.label] =
            f.polarity == Polarity::positive ? LabelStatus::asserted : LabelStatus::negated;
    }
    return EntailmentOutcome::from_status(std::move(status));
}

double facts_reward(const EntailmentOutcome& outcome, const GroundTruth& gt,
                    const RewardConfig& cfg) {
    if (outcome.status.size() != gt.z_star.size())
        throw ConfigError("facts_reward: label count mismatch");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t l = 0; l < gt.z_star.size(); ++l) {
        const bool pos = gt.z_star[l] != 0;
        const auto s = outcome.status[l];
        if (s == LabelStatus::asserted) {
            if (pos) ++tp;
            else ++fp;
        } else if (pos) {
            ++fn;
            if (s == LabelStatus::negated) ++fp;
        }
    }
    const double precision = tp + fp == 0 ? 0.0 : double(tp) / double(tp + fp);
    const double recall = tp + fn == 0 ? 1.0 : double(tp) / double(tp + fn);
    const double b2 = cfg.beta * cfg.beta;
    return (1.0 + b2) * precision * recall / (b2 * precision + recall + cfg.xi);
}

double exact_match_reward(const EntailmentOutcome& outcome, const GroundTruth& gt) {
    if (outcome.z_hat.size() != gt.z_star.size())
        throw ConfigError("exact_match_reward: label count mismatch");
    return outcome.z_hat == gt.z_star ? 1.0 : 0.0;
}

ScoredReport score_report(std::string_view text, const GroundTruth& gt, const LabelSet& labels,
                          const RewardConfig& cfg, const FactExtractor& extractor) {
    ScoredReport out;
    out.extraction = extractor(text, labels);
    out.outcome = entail(out.extraction.facts, labels);
    out.reward = facts_reward(out.outcome, gt, cfg);
    return out;
}

std::string_view to_string(LabelStatus status) {
    switch (status) {
    case LabelStatus::asserted: return "asserted";
    case LabelStatus::negated: return "negated";
    case LabelStatus::unmentioned: break;
    }
    return "unmentioned";
}

}  // namespace orapo
