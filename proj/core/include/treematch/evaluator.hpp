#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "treematch/data_model.hpp"
#include "treematch/rng.hpp"

namespace treematch {

// A model prediction attached to its labeled pair.
struct ScoredPair {
    LabeledPair pair;
    MatchClass predicted = MatchClass::unknown;
};

// accuracy = fraction argmax-correct; macro F1 averages per-class F1 over the
// classes present in labels or predictions (absent classes do not dilute).
struct CriteriaMetrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
};

CriteriaMetrics criteria_metrics(const std::vector<MatchClass>& predicted,
                                 const std::vector<MatchClass>& labels);

// Trial-level unit of analysis: one (patient, enrolled trial) group, correct
// iff every inclusion criterion predicted `match` and every exclusion
// criterion predicted `mismatch`. Foreign pairs never join a group; a group
// left with no inclusion/exclusion pairs is excluded and counted.
struct TrialGroup {
    std::size_t patient_index = 0;
    std::string trial_id;
    bool correct = false;
};

struct TrialGrouping {
    std::vector<TrialGroup> groups;
    std::size_t excluded = 0;
};

TrialGrouping group_trials(const std::vector<ScoredPair>& scored);

double trial_accuracy(const std::vector<TrialGroup>& groups);

struct MetricTriple {
    double mean = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

// Percentile bootstrap: the point estimate is the metric on the full item
// set; the interval is the (2.5%, 97.5%) band (for level 0.95) over metrics
// of `n_resamples` seeded with-replacement resamples. Resample seeds derive
// from (seed, resample index), so results do not depend on evaluation order.
template <typename Item>
MetricTriple bootstrap_ci(const std::vector<Item>& items,
                          const std::function<double(const std::vector<Item>&)>& metric,
                          std::size_t n_resamples = 1000, double level = 0.95,
                          std::uint64_t seed = 0) {
    if (items.empty()) throw std::invalid_argument("bootstrap_ci: no items");
    MetricTriple result;
    result.mean = metric(items);

    std::vector<double> samples(n_resamples);
    for (std::size_t s = 0; s < n_resamples; ++s) {
        Rng rng(derive_seed(seed, s));
        std::vector<Item> resample;
        resample.reserve(items.size());
        for (std::size_t i = 0; i < items.size(); ++i) {
            resample.push_back(items[rng.index(items.size())]);
        }
        samples[s] = metric(resample);
    }
    std::sort(samples.begin(), samples.end());
    auto percentile = [&](double q) {
        const double pos = q * static_cast<double>(samples.size() - 1);
        const std::size_t lo_idx = static_cast<std::size_t>(pos);
        const std::size_t hi_idx = std::min(lo_idx + 1, samples.size() - 1);
        const double frac = pos - static_cast<double>(lo_idx);
        return samples[lo_idx] * (1.0 - frac) + samples[hi_idx] * frac;
    };
    const double tail = (1.0 - level) / 2.0;
    result.lo = percentile(tail);
    result.hi = percentile(1.0 - tail);
    return result;
}

struct StratumReport {
    std::string name;
    std::size_t group_count = 0;
    MetricTriple accuracy;
};

struct EvalReport {
    std::size_t pair_count = 0;
    std::size_t group_count = 0;
    std::size_t excluded_groups = 0;
    MetricTriple criteria_accuracy;
    MetricTriple criteria_f1;
    MetricTriple trial_level_accuracy;
    std::vector<StratumReport> by_category;  // trial category strata
    std::vector<StratumReport> by_phase;     // trial phase strata
};

// Full report: criteria-level metrics bootstrap over pairs, trial-level over
// groups, plus per-category and per-phase strata of the trial-level metric.
EvalReport evaluate_predictions(const Corpus& corpus, const std::vector<ScoredPair>& scored,
                                std::size_t n_resamples = 1000, double level = 0.95,
                                std::uint64_t seed = 0);

std::string report_json(const EvalReport& report);
std::string report_text(const EvalReport& report);

}  // namespace treematch
