#include "orapo/eval_metrics.hpp"

#include "orapo/common.hpp"

#include <algorithm>
#include <cstdio>

namespace orapo {

namespace {

// Shortest round-trippable representation keeps the CSVs byte-stable across runs.
std::string num(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    return out + "\"";
}

}  // namespace

void ConfusionTally::merge(const ConfusionTally& other) {
    if (other.num_labels() != num_labels()) throw ConfigError("tally merge: label count mismatch");
    for (std::size_t l = 0; l < num_labels(); ++l) {
        tp[l] += other.tp[l];
        fp[l] += other.fp[l];
        fn[l] += other.fn[l];
        tn[l] += other.tn[l];
    }
    n += other.n;
}

void tally(ConfusionTally& t, std::span<const std::uint8_t> z_hat,
           std::span<const std::uint8_t> z_star) {
    if (z_hat.size() != z_star.size() || z_hat.size() != t.num_labels())
        throw ConfigError("tally: label count mismatch");
    for (std::size_t l = 0; l < z_hat.size(); ++l) {
        const bool p = z_hat[l] != 0, g = z_star[l] != 0;
        if (p && g) ++t.tp[l];
        else if (p) ++t.fp[l];
        else if (g) ++t.fn[l];
        else ++t.tn[l];
    }
    ++t.n;
}

std::vector<Prf> per_label_prf(const ConfusionTally& t) {
    std::vector<Prf> out(t.num_labels());
    for (std::size_t l = 0; l < t.num_labels(); ++l) {
        auto& m = out[l];
        const double tp = static_cast<double>(t.tp[l]);
        m.precision = t.tp[l] + t.fp[l] == 0 ? 0.0 : tp / static_cast<double>(t.tp[l] + t.fp[l]);
        m.recall = t.tp[l] + t.fn[l] == 0 ? 1.0 : tp / static_cast<double>(t.tp[l] + t.fn[l]);
        m.f1 = m.precision + m.recall == 0.0
                   ? 0.0
                   : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    }
    return out;
}

Prf macro_prf(const ConfusionTally& t) {
    Prf macro;
    const auto per = per_label_prf(t);
    if (per.empty()) return macro;
    for (const auto& m : per) {
        macro.precision += m.precision;
        macro.recall += m.recall;
        macro.f1 += m.f1;
    }
    const double inv = 1.0 / static_cast<double>(per.size());
    macro.precision *= inv;
    macro.recall *= inv;
    macro.f1 *= inv;
    return macro;
}

double zero_reward_fraction(const RunTelemetry& telemetry, std::size_t upto_step,
                            double zero_threshold) {
    if (upto_step < 1) throw ConfigError("zero_reward_fraction: upto_step must be >= 1");
    std::size_t seen = 0, zero = 0;
    for (const auto& s : telemetry.steps) {
        if (s.step > upto_step) continue;
        ++seen;
        if (s.mean_reward <= zero_threshold) ++zero;
    }
    return seen == 0 ? 0.0 : static_cast<double>(zero) / static_cast<double>(seen);
}

void write_steps_csv(std::ostream& out, const RunTelemetry& telemetry) {
    out << "step,zero_reward_batch,mean_w,mean_reward\n";
    for (const auto& s : telemetry.steps)
        out << s.step << ',' << (s.zero_reward_batch ? 1 : 0) << ',' << num(s.mean_w) << ','
            << num(s.mean_reward) << '\n';
}

void write_prompts_csv(std::ostream& out, const RunTelemetry& telemetry) {
    out << "step,prompt_id,z,z_tilde,w,mean_reward,grpo_loss,dpo_loss\n";
    for (const auto& p : telemetry.prompts)
        out << p.step << ',' << csv_field(p.prompt_id) << ',' << num(p.z) << ',' << num(p.z_tilde)
            << ',' << num(p.w) << ',' << num(p.mean_reward) << ',' << num(p.grpo_loss) << ','
            << num(p.dpo_loss) << '\n';
}

std::string metrics_csv_header(const LabelSet& labels) {
    std::string h = "step,macro_precision,macro_recall,macro_f1";
    for (const auto& name : labels.names()) {
        std::string col = "f1_" + name;
        std::replace(col.begin(), col.end(), ' ', '_');
        h += "," + col;
    }
    return h;
}

void write_metrics_csv(std::ostream& out, const RunTelemetry& telemetry, const LabelSet& labels) {
    out << metrics_csv_header(labels) << '\n';
    for (const auto& c : telemetry.checkpoints) {
        out << c.step << ',' << num(c.macro.precision) << ',' << num(c.macro.recall) << ','
            << num(c.macro.f1);
        for (double f : c.per_class_f1) out << ',' << num(f);
        out << '\n';
    }
}

}  // namespace orapo
