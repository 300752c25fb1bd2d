#pragma once

#include "orapo/facts_reward.hpp"
#include "orapo/policy_model.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace orapo {

struct CorrelationPair {
    std::size_t first = 0;   // conditioning label (sampled earlier, lower index)
    std::size_t second = 0;  // label whose odds are multiplied when `first` is positive
    double odds_multiplier = 1.0;
};

struct PrevalenceProfile {
    std::vector<double> marginals;
    std::vector<CorrelationPair> correlation_pairs;
    /// Label that is positive exactly when every other label is negative ("no finding").
    /// Its marginal is not sampled independently.
    std::optional<std::size_t> fallback_label;

    /// Chest radiograph prevalences with pneumonia at 2.70% and fracture at 4.05%; the
    /// fallback label's marginal is the implied all-negative probability.
    static PrevalenceProfile chest_xray_default(const LabelSet& labels);

    void validate(std::size_t num_labels) const;
};

/// `label<TAB>probability` per line; a probability of `fallback` marks the fallback label.
PrevalenceProfile load_profile(const std::filesystem::path& path, const LabelSet& labels);

struct EnvConfig {
    double signal_strength = 3.0;
    double noise_std = 1.0;
    std::size_t negatives_mentioned = 2;
    std::size_t context_dim = 32;
    std::uint64_t seed = 0;

    void validate() const;
};

struct StudyRecord {
    std::string prompt_id;
    ContextVec ctx;
    GroundTruth z_star;
    TokenSeq gt_report;
    std::string gt_text;

    bool operator==(const StudyRecord& o) const {
        return prompt_id == o.prompt_id && ctx == o.ctx && z_star.z_star == o.z_star.z_star &&
               gt_report == o.gt_report && gt_text == o.gt_text;
    }
};

/// Synthetic study generator. Context is a noisy linear embedding of the label vector:
///   ctx = signal_strength * E z + N(0, noise_std^2 I),
/// with E (D x L, entries N(0, 1/D)) drawn once from the config seed.
class SynthEnv {
public:
    SynthEnv(LabelSet labels, PrevalenceProfile profile, EnvConfig cfg);

    const LabelSet& labels() const noexcept { return labels_; }
    const PrevalenceProfile& profile() const noexcept { return profile_; }
    const EnvConfig& config() const noexcept { return cfg_; }
    Vocabulary vocabulary() const { return Vocabulary(labels_.size()); }
    double embedding(std::size_t d, std::size_t label) const {
        return embedding_[d * labels_.size() + label];
    }

    StudyRecord sample_study(Rng& rng, std::string prompt_id) const;

    /// Ground-truth report for a label vector; pertinent negatives drawn from `rng`.
    std::vector<Fact> reference_facts(const GroundTruth& gt, Rng& rng) const;

private:
    LabelSet labels_;
    PrevalenceProfile profile_;
    EnvConfig cfg_;
    std::vector<double> embedding_;
};

struct BalanceTarget {
    std::size_t label = 0;
    std::size_t min_count = 0;
};

/// `n` studies; study i draws from an rng seeded by (seed, i). Balance targets replace
/// records (from the end, never ones carrying a balanced label) with extra draws that
/// are positive for under-represented labels.
std::vector<StudyRecord> make_dataset(std::size_t n, const SynthEnv& env, std::uint64_t seed,
                                      const std::vector<BalanceTarget>& balance = {});

/// Line-delimited JSON: {"prompt_id", "context", "labels", "report"}.
void save_corpus(const std::vector<StudyRecord>& records, const LabelSet& labels,
                 const std::filesystem::path& path);
std::vector<StudyRecord> load_corpus(const std::filesystem::path& path, const LabelSet& labels,
                                     std::size_t context_dim);

}  // namespace orapo
