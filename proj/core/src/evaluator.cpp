#include "treematch/evaluator.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <sstream>

#include "json.hpp"

namespace treematch {

using nlohmann::json;

CriteriaMetrics criteria_metrics(const std::vector<MatchClass>& predicted,
                                 const std::vector<MatchClass>& labels) {
    if (predicted.empty() || predicted.size() != labels.size()) {
        throw std::invalid_argument("criteria_metrics: need equal non-empty prediction/label lists");
    }
    std::size_t correct = 0;
    std::array<std::size_t, 3> tp{}, fp{}, fn{};
    std::array<bool, 3> present{};
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const auto p = static_cast<std::size_t>(predicted[i]);
        const auto y = static_cast<std::size_t>(labels[i]);
        present[p] = present[y] = true;
        if (p == y) {
            ++correct;
            ++tp[y];
        } else {
            ++fp[p];
            ++fn[y];
        }
    }
    CriteriaMetrics m;
    m.accuracy = static_cast<double>(correct) / static_cast<double>(predicted.size());
    double f1_sum = 0.0;
    std::size_t class_count = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        if (!present[c]) continue;
        ++class_count;
        const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
        f1_sum += denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
    }
    m.macro_f1 = class_count ? f1_sum / static_cast<double>(class_count) : 0.0;
    return m;
}

TrialGrouping group_trials(const std::vector<ScoredPair>& scored) {
    struct GroupState {
        bool has_criteria = false;
        bool all_ok = true;
    };
    std::map<std::pair<std::size_t, std::string>, GroupState> states;
    for (const auto& sp : scored) {
        auto& st = states[{sp.pair.patient_index, sp.pair.enrolled_trial_id}];
        if (sp.pair.pair_kind == CriterionKind::foreign) continue;
        st.has_criteria = true;
        const MatchClass expected = sp.pair.pair_kind == CriterionKind::inclusion
                                        ? MatchClass::match
                                        : MatchClass::mismatch;
        if (sp.predicted != expected) st.all_ok = false;
    }
    TrialGrouping grouping;
    for (const auto& [key, st] : states) {
        if (!st.has_criteria) {
            ++grouping.excluded;
            continue;
        }
        grouping.groups.push_back({key.first, key.second, st.all_ok});
    }
    return grouping;
}

double trial_accuracy(const std::vector<TrialGroup>& groups) {
    if (groups.empty()) throw std::invalid_argument("trial_accuracy: no groups");
    std::size_t correct = 0;
    for (const auto& g : groups) correct += g.correct ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(groups.size());
}

namespace {

MetricTriple bootstrap_groups(const std::vector<TrialGroup>& groups, std::size_t n_resamples,
                              double level, std::uint64_t seed) {
    return bootstrap_ci<TrialGroup>(
        groups, [](const std::vector<TrialGroup>& items) { return trial_accuracy(items); },
        n_resamples, level, seed);
}

}  // namespace

EvalReport evaluate_predictions(const Corpus& corpus, const std::vector<ScoredPair>& scored,
                                std::size_t n_resamples, double level, std::uint64_t seed) {
    if (scored.empty()) throw std::invalid_argument("evaluate_predictions: no predictions");

    EvalReport report;
    report.pair_count = scored.size();

    report.criteria_accuracy = bootstrap_ci<ScoredPair>(
        scored,
        [](const std::vector<ScoredPair>& items) {
            std::vector<MatchClass> pred, truth;
            pred.reserve(items.size());
            truth.reserve(items.size());
            for (const auto& sp : items) {
                pred.push_back(sp.predicted);
                truth.push_back(sp.pair.label);
            }
            return criteria_metrics(pred, truth).accuracy;
        },
        n_resamples, level, derive_seed(seed, "criteria.accuracy"));
    report.criteria_f1 = bootstrap_ci<ScoredPair>(
        scored,
        [](const std::vector<ScoredPair>& items) {
            std::vector<MatchClass> pred, truth;
            pred.reserve(items.size());
            truth.reserve(items.size());
            for (const auto& sp : items) {
                pred.push_back(sp.predicted);
                truth.push_back(sp.pair.label);
            }
            return criteria_metrics(pred, truth).macro_f1;
        },
        n_resamples, level, derive_seed(seed, "criteria.f1"));

    auto grouping = group_trials(scored);
    report.excluded_groups = grouping.excluded;
    report.group_count = grouping.groups.size();
    if (!grouping.groups.empty()) {
        report.trial_level_accuracy =
            bootstrap_groups(grouping.groups, n_resamples, level, derive_seed(seed, "trial"));

        auto stratify = [&](auto key_of) {
            std::map<std::string, std::vector<TrialGroup>> strata;
            for (const auto& g : grouping.groups) {
                strata[key_of(corpus.trials[corpus.trial_index(g.trial_id)])].push_back(g);
            }
            std::vector<StratumReport> out;
            for (const auto& [name, groups] : strata) {
                StratumReport sr;
                sr.name = name;
                sr.group_count = groups.size();
                sr.accuracy = bootstrap_groups(groups, n_resamples, level,
                                               derive_seed(seed, "stratum." + name));
                out.push_back(std::move(sr));
            }
            return out;
        };
        report.by_category = stratify([](const TrialInfo& t) {
            return t.category.empty() ? std::string("(none)") : t.category;
        });
        report.by_phase =
            stratify([](const TrialInfo& t) { return "phase " + std::to_string(t.phase); });
    }
    return report;
}

namespace {

json triple_json(const MetricTriple& t) {
    return {{"mean", t.mean}, {"ci_low", t.lo}, {"ci_high", t.hi}};
}

}  // namespace

std::string report_json(const EvalReport& report) {
    json j{{"pair_count", report.pair_count},
           {"group_count", report.group_count},
           {"excluded_groups", report.excluded_groups},
           {"criteria", {{"accuracy", triple_json(report.criteria_accuracy)},
                         {"macro_f1", triple_json(report.criteria_f1)}}},
           {"trial", {{"accuracy", triple_json(report.trial_level_accuracy)}}}};
    auto strata_json = [](const std::vector<StratumReport>& strata) {
        json arr = json::array();
        for (const auto& s : strata) {
            arr.push_back({{"name", s.name},
                           {"group_count", s.group_count},
                           {"accuracy", triple_json(s.accuracy)}});
        }
        return arr;
    };
    j["by_category"] = strata_json(report.by_category);
    j["by_phase"] = strata_json(report.by_phase);
    return j.dump(2);
}

namespace {

std::string fmt_triple(const MetricTriple& t) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f (%.4f-%.4f)", t.mean, t.lo, t.hi);
    return buf;
}

}  // namespace

std::string report_text(const EvalReport& report) {
    std::ostringstream out;
    char line[160];

    std::snprintf(line, sizeof(line), "%-28s %-24s %-24s\n", "", "Accuracy", "F1 Score");
    out << line;
    std::snprintf(line, sizeof(line), "%-28s %-24s %-24s\n", "Criteria Level",
                  fmt_triple(report.criteria_accuracy).c_str(),
                  fmt_triple(report.criteria_f1).c_str());
    out << line;
    std::snprintf(line, sizeof(line), "%-28s %-24s\n", "Trial Level",
                  fmt_triple(report.trial_level_accuracy).c_str());
    out << line;
    out << "\npairs: " << report.pair_count << "   groups: " << report.group_count
        << "   excluded groups: " << report.excluded_groups << "\n";

    auto strata_block = [&](const char* title, const std::vector<StratumReport>& strata) {
        if (strata.empty()) return;
        out << "\n" << title << "\n";
        for (const auto& s : strata) {
            std::snprintf(line, sizeof(line), "  %-26s %-24s n=%zu\n", s.name.c_str(),
                          fmt_triple(s.accuracy).c_str(), s.group_count);
            out << line;
        }
    };
    strata_block("Trial accuracy by category", report.by_category);
    strata_block("Trial accuracy by phase", report.by_phase);
    return out.str();
}

}  // namespace treematch
