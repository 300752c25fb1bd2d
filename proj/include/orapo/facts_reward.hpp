#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace orapo {

/// Ordered set of finding names. Index order defines the label index used everywhere else.
/// Names are matched case-insensitively on whole words.
class LabelSet {
public:
    LabelSet() = default;
    explicit LabelSet(std::vector<std::string> names);

    /// The 14 chest radiograph findings used by the default environment.
    static LabelSet chest_xray14();

    std::size_t size() const noexcept { return names_.size(); }
    const std::string& name(std::size_t label) const { return names_.at(label); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    std::optional<std::size_t> find(std::string_view name) const;

    bool operator==(const LabelSet&) const = default;

private:
    std::vector<std::string> names_;
};

/// One label per line; blank lines ignored.
LabelSet load_label_set(const std::filesystem::path& path);

enum class Polarity : std::uint8_t { positive, negative };

struct Fact {
    std::size_t label = 0;
    Polarity polarity = Polarity::positive;
    std::size_t source_sentence = 0;

    bool same_claim(const Fact& other) const noexcept {
        return label == other.label && polarity == other.polarity;
    }
    bool operator==(const Fact&) const = default;
};

struct Extraction {
    std::vector<Fact> facts;
    std::size_t skipped_sentences = 0;
};

/// Pluggable fact extractor. The rule-based one below is the default; a model-backed
/// extractor only has to honour this signature.
using FactExtractor = std::function<Extraction(std::string_view text, const LabelSet& labels)>;

struct GroundTruth {
    std::vector<std::uint8_t> z_star;
    std::size_t positives() const noexcept;
};

enum class LabelStatus : std::uint8_t { unmentioned, asserted, negated };

struct EntailmentOutcome {
    std::vector<LabelStatus> status;
    std::vector<std::uint8_t> z_hat;  // z_hat[l] == 1 iff status[l] == asserted

    static EntailmentOutcome from_status(std::vector<LabelStatus> status);
};

struct RewardConfig {
    double beta = 2.0;
    double xi = 1e-6;
    double zero_threshold = 0.0;

    void validate() const;
};

/// One sentence per fact from a fixed template bank; template choice is driven by
/// `style_seed`, sentence order follows fact order.
std::string render_report(const std::vector<Fact>& facts, const LabelSet& labels,
                          std::uint64_t style_seed);

/// Rule-based extractor: period-delimited sentences, longest whole-word label match,
/// negation cues "no", "no evidence of", "without", "absent". Never throws on content.
Extraction extract_facts(std::string_view text, const LabelSet& labels);

/// Last mention of a label decides its status.
EntailmentOutcome entail(const std::vector<Fact>& facts, const LabelSet& labels);

/// Per-instance F-beta over label-level predictions. Negated positives count as false
/// positives. Result lies in [0, 1).
double facts_reward(const EntailmentOutcome& outcome, const GroundTruth& gt,
                    const RewardConfig& cfg);

/// All-or-nothing label agreement: 1 when z_hat == z_star, else 0.
double exact_match_reward(const EntailmentOutcome& outcome, const GroundTruth& gt);

struct ScoredReport {
    double reward = 0.0;
    EntailmentOutcome outcome;
    Extraction extraction;
};

ScoredReport score_report(std::string_view text, const GroundTruth& gt, const LabelSet& labels,
                          const RewardConfig& cfg, const FactExtractor& extractor = extract_facts);

std::string_view to_string(LabelStatus status);

}  // namespace orapo
