#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "treematch/ontology.hpp"

namespace treematch {

enum class CriterionKind { inclusion, exclusion, foreign };
enum class MatchClass { match = 0, mismatch = 1, unknown = 2 };

const char* criterion_kind_name(CriterionKind k);
CriterionKind criterion_kind_from_name(const std::string& name);
const char* match_class_name(MatchClass c);
std::array<double, 3> one_hot(MatchClass c);

// A visit sequence with up to one code per modality per visit, the presence
// mask, and three demographic numbers (gender code, age in years, a free
// auxiliary field).
struct PatientRecord {
    std::string id;
    std::vector<std::array<std::string, 3>> visit_codes;  // "" where absent
    std::vector<std::array<bool, 3>> modality_mask;
    std::array<double, 3> demographics{0.0, 0.0, 0.0};

    std::size_t visit_count() const { return visit_codes.size(); }
    void validate(std::size_t max_visits) const;
};

// One criteria sentence: token ids padded to the corpus sentence length,
// the token mask, and the authored kind. `foreign` appears only on sampled
// cross-trial pairs, never on authored sentences.
struct CriteriaSentence {
    std::string id;
    std::string trial_id;
    CriterionKind kind = CriterionKind::inclusion;
    std::string text;
    std::vector<int> tokens;
    std::vector<std::uint8_t> mask;

    void validate() const;
};

struct TrialInfo {
    std::string id;
    std::string category;
    int phase = 0;
    std::vector<std::size_t> criterion_indices;  // into Corpus::criteria
};

struct Enrollment {
    std::string patient_id;
    std::string trial_id;
};

// Token id 0 is reserved for out-of-vocabulary tokens.
struct Vocabulary {
    std::vector<std::string> tokens{"<unk>"};
    std::unordered_map<std::string, int> index{{"<unk>", 0}};

    int id_of(const std::string& token) const {
        auto it = index.find(token);
        return it == index.end() ? 0 : it->second;
    }
    int add(const std::string& token);
    std::size_t size() const { return tokens.size(); }
};

struct Corpus {
    Vocabulary vocab;
    std::vector<PatientRecord> patients;
    std::vector<TrialInfo> trials;
    std::vector<CriteriaSentence> criteria;
    std::vector<Enrollment> enrollments;
    std::size_t max_sentence_tokens = 16;  // n_s
    std::size_t max_visits = 24;           // n_v

    std::size_t patient_index(const std::string& id) const;
    std::size_t trial_index(const std::string& id) const;
    std::size_t criterion_index(const std::string& id) const;
    void validate() const;
};

// Corpus directory layout (one JSON object per line in each .jsonl file):
//   patients.jsonl     {"patient_id", "E", "M_P", "d"}
//   trials.jsonl       {"trial_id", "category", "phase"}
//   criteria.jsonl     {"criterion_id", "trial_id", "kind", "text", "S", "m_C"}
//   enrollments.jsonl  {"patient_id", "trial_id"}
//   vocab.txt          one token per line, line number = token id
//   meta.json          {"n_s", "n_v"}
// Field names E / M_P / d / S / m_C are documented in docs/formats.md.
Corpus load_corpus(const std::string& dir);
void save_corpus(const std::string& dir, const Corpus& corpus);

// Tokenizes, maps through the vocabulary and pads/truncates to n_s.
CriteriaSentence make_sentence(std::string criterion_id, std::string trial_id, CriterionKind kind,
                               const std::string& text, const Vocabulary& vocab,
                               std::size_t max_tokens);

struct LabeledPair {
    std::size_t patient_index;
    std::size_t criterion_index;
    CriterionKind pair_kind;  // authored kind, or `foreign` for cross-trial samples
    MatchClass label;
    std::string enrolled_trial_id;
};

struct PairSet {
    std::vector<LabeledPair> pairs;
    std::size_t warnings = 0;
};

// For every enrollment: each inclusion criterion labels `match`, each
// exclusion labels `mismatch`, plus exactly one inclusion and one exclusion
// criterion drawn uniformly from a different trial labeled `unknown`.
// Enrolled trials without criteria are skipped and counted in `warnings`,
// as are enrollments where no other trial can supply a foreign criterion.
PairSet make_label_pairs(const Corpus& corpus, std::uint64_t seed);

// Global dimension and hyperparameter configuration.
struct ModelConfig {
    std::size_t n_v = 24;   // max visits per patient
    std::size_t n_c = 0;    // code vocabulary size (informational)
    std::size_t n_s = 16;   // max tokens per criteria sentence
    std::size_t n_w = 0;    // word vocabulary size (informational)
    std::size_t n_m = 128;  // memory dimension
    std::size_t n_e = 768;  // text embedding dimension (48 with the hash embedder)
    std::size_t attention_heads = 4;
    std::size_t encoder_layers = 2;
    std::size_t head_hidden = 32;
    std::size_t beam_infer = 4;
    double learning_rate = 1e-4;
    double alpha = 0.5;   // exclusion margin
    double lambda = 1.0;  // distance-loss weight

    void validate() const;
};

}  // namespace treematch
