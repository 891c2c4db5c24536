#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "treematch/data_model.hpp"
#include "treematch/ontology.hpp"

namespace treematch {

// Synthetic corpus generation with known ground truth.
//
// Construction (all seeded, fully deterministic):
//   - A balanced 4-level ontology whose descriptions are compositional: each
//     child description extends its parent's text by one word, so token
//     overlap tracks ontological proximity. Each level-1 branch carries one
//     modality.
//   - Each trial owns a private level-2 subtree. Every criterion gets its own
//     level-3 child of that subtree and plants one target leaf under it; the
//     criterion text embeds the level-3 description verbatim.
//   - A patient enrolled in trial T carries all of T's inclusion target
//     leaves, none of T's exclusion targets, the exclusion targets of every
//     OTHER trial, and noise codes from reserved subtrees no trial uses.
//
// That makes every labeled pair decidable from the inputs alone:
//   inclusion + target present  -> match        (enrolled pairs)
//   exclusion + target absent   -> mismatch     (enrolled pairs)
//   inclusion + target absent   -> unknown      (foreign pairs)
//   exclusion + target present  -> unknown      (foreign pairs)
// so a membership oracle over the sidecar scores 100% and the learning task
// is solvable by construction.
struct GenConfig {
    std::array<std::size_t, 4> branching{6, 6, 4, 3};
    std::size_t n_patients = 300;
    std::size_t n_trials = 30;
    std::size_t visits_min = 10;
    std::size_t visits_max = 16;
    double noise_code_prob = 0.06;  // fill probability for each open visit slot
    std::size_t ic_min = 1, ic_max = 3;
    std::size_t ec_min = 1, ec_max = 1;
    std::size_t max_sentence_tokens = 16;  // n_s
    std::size_t max_visits = 48;           // n_v cap
    std::uint64_t seed = 1;
    std::vector<std::string> ic_templates;  // "{}" is replaced by the description
    std::vector<std::string> ec_templates;

    void validate() const;
    static std::vector<std::string> default_ic_templates();
    static std::vector<std::string> default_ec_templates();
};

// Sidecar row: which code a criterion is really about. Used by tests and the
// interpretability check, never by the model.
struct GroundTruth {
    std::string criterion_id;
    std::string trial_id;
    CriterionKind kind = CriterionKind::inclusion;
    std::string target_code;
    std::string target_desc;  // the level-3 description planted in the text
};

struct SynthDataset {
    Ontology ontology;
    Corpus corpus;
    std::vector<GroundTruth> truth;
};

// Balanced 4-level ontology per the branching config.
Ontology gen_ontology(const GenConfig& config);

// Trials, criteria, patients and enrollments over an existing ontology. The
// ontology must be 4-level balanced-ish with enough level-2 subtrees:
// n_trials of them become trial foci and at least one is reserved for noise.
SynthDataset gen_cohort(Ontology ontology, const GenConfig& config);

inline SynthDataset generate(const GenConfig& config) {
    return gen_cohort(gen_ontology(config), config);
}

// Writes corpus files plus ontology.txt, truth.jsonl and texts.txt (every
// description and vocabulary token, one per line, for the `embed` command).
void save_dataset(const std::string& dir, const SynthDataset& dataset);

std::vector<GroundTruth> load_truth(const std::string& path);

}  // namespace treematch
