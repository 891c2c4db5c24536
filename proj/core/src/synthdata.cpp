#include "treematch/synthdata.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "treematch/errors.hpp"
#include "treematch/rng.hpp"
#include "treematch/text.hpp"

namespace treematch {

namespace fs = std::filesystem;
using nlohmann::json;

void GenConfig::validate() const {
    for (auto b : branching) {
        if (b < 2) throw std::invalid_argument("GenConfig: branching must be >= 2 per level");
    }
    if (ic_min < 1 || ec_min < 1 || ic_max < ic_min || ec_max < ec_min) {
        throw std::invalid_argument("GenConfig: need ic/ec ranges with min >= 1");
    }
    if (visits_min < 1 || visits_max < visits_min || visits_max > max_visits) {
        throw std::invalid_argument("GenConfig: bad visit range");
    }
    if (n_patients < 1 || n_trials < 1) {
        throw std::invalid_argument("GenConfig: need patients and trials");
    }
    if (!(noise_code_prob >= 0.0 && noise_code_prob <= 1.0)) {
        throw std::invalid_argument("GenConfig: noise_code_prob outside [0, 1]");
    }
}

std::vector<std::string> GenConfig::default_ic_templates() {
    return {"requires documented history of {}",
            "must have prior diagnosis of {}",
            "eligible only with established {} on record",
            "inclusion demands recorded {}"};
}

std::vector<std::string> GenConfig::default_ec_templates() {
    return {"no prior history of {} permitted",
            "excluded if record shows {}",
            "must not have {}",
            "ineligible with existing {}"};
}

namespace {

// Pronounceable pseudo-words, sibling-unique via the used set.
std::string make_word(Rng& rng, std::set<std::string>& used) {
    static const char* starts[] = {"ba", "ce", "di", "fo", "ga", "he", "ji", "ka", "lu", "me",
                                   "no", "pi", "qua", "re", "so", "tu", "ve", "wi", "xa", "zo"};
    static const char* mids[] = {"lan", "mer", "nex", "por", "rin", "sal", "ter", "vul",
                                 "dor", "fen", "gos", "hep", "jal", "kem", "lor", "mun"};
    static const char* ends[] = {"a", "ex", "ia", "on", "um", "is", "or", "ax"};
    for (int attempt = 0; attempt < 1000; ++attempt) {
        std::string w = starts[rng.index(std::size(starts))];
        w += mids[rng.index(std::size(mids))];
        if (rng.below(2)) w += mids[rng.index(std::size(mids))];
        w += ends[rng.index(std::size(ends))];
        if (used.insert(w).second) return w;
    }
    throw GenerationError("could not generate a fresh word");
}

const char* modality_noun(Modality m) {
    switch (m) {
        case Modality::diagnosis: return "disorders";
        case Modality::procedure: return "procedures";
        case Modality::medication: return "therapies";
    }
    return "entries";
}

std::string format_template(const std::string& tmpl, const std::string& value) {
    const auto pos = tmpl.find("{}");
    if (pos == std::string::npos) {
        throw GenerationError("criterion template lacks a {} placeholder: " + tmpl);
    }
    return tmpl.substr(0, pos) + value + tmpl.substr(pos + 2);
}

// Level-2 subtree layout recovered from an ontology: the unit trials claim.
struct Level3Group {
    std::string d3;
    std::vector<std::string> leaf_codes;
};

struct Level2Group {
    std::string d1, d2;
    Modality modality;
    std::vector<Level3Group> level3;
    std::vector<std::string> all_leaves;
};

std::vector<Level2Group> group_by_level2(const Ontology& ontology) {
    std::map<std::string, Level2Group> groups;
    for (const auto& [code, entry] : ontology.codes()) {
        auto& g = groups[entry.descriptions[1]];
        g.d1 = entry.descriptions[0];
        g.d2 = entry.descriptions[1];
        g.modality = entry.modality;
        g.all_leaves.push_back(code);
        auto it = std::find_if(g.level3.begin(), g.level3.end(),
                               [&](const Level3Group& l) { return l.d3 == entry.descriptions[2]; });
        if (it == g.level3.end()) {
            g.level3.push_back({entry.descriptions[2], {code}});
        } else {
            it->leaf_codes.push_back(code);
        }
    }
    std::vector<Level2Group> out;
    out.reserve(groups.size());
    for (auto& [d2, g] : groups) out.push_back(std::move(g));
    return out;
}

}  // namespace

Ontology gen_ontology(const GenConfig& config) {
    config.validate();
    Rng rng(derive_seed(config.seed, "ontology"));
    Ontology ontology;

    std::set<std::string> level1_words;
    std::size_t code_index = 0;
    for (std::size_t b1 = 0; b1 < config.branching[0]; ++b1) {
        const Modality modality = static_cast<Modality>(b1 % 3);
        const std::string d1 =
            make_word(rng, level1_words) + " " + modality_noun(modality);
        std::set<std::string> level2_words;
        for (std::size_t b2 = 0; b2 < config.branching[1]; ++b2) {
            const std::string d2 = d1 + " " + make_word(rng, level2_words);
            std::set<std::string> level3_words;
            for (std::size_t b3 = 0; b3 < config.branching[2]; ++b3) {
                const std::string d3 = d2 + " " + make_word(rng, level3_words);
                std::set<std::string> level4_words;
                for (std::size_t b4 = 0; b4 < config.branching[3]; ++b4) {
                    const std::string d4 = d3 + " " + make_word(rng, level4_words);
                    char id[16];
                    std::snprintf(id, sizeof(id), "c%06zu", code_index++);
                    ontology.add_code(id, CodeEntry{modality, {d1, d2, d3, d4}});
                }
            }
        }
    }
    ontology.validate();
    return ontology;
}

SynthDataset gen_cohort(Ontology ontology, const GenConfig& config) {
    config.validate();
    const auto ic_templates =
        config.ic_templates.empty() ? GenConfig::default_ic_templates() : config.ic_templates;
    const auto ec_templates =
        config.ec_templates.empty() ? GenConfig::default_ec_templates() : config.ec_templates;

    Rng rng(derive_seed(config.seed, "cohort"));
    auto groups = group_by_level2(ontology);
    if (groups.size() < config.n_trials + 1) {
        throw GenerationError("not enough level-2 subtrees: " + std::to_string(groups.size()) +
                              " for " + std::to_string(config.n_trials) +
                              " trials plus a noise reserve");
    }
    for (const auto& g : groups) {
        if (g.level3.size() < config.ic_max + config.ec_max) {
            throw GenerationError("level-2 subtree '" + g.d2 + "' has " +
                                  std::to_string(g.level3.size()) +
                                  " level-3 children; need ic_max + ec_max = " +
                                  std::to_string(config.ic_max + config.ec_max));
        }
    }

    std::vector<std::size_t> group_order(groups.size());
    for (std::size_t i = 0; i < groups.size(); ++i) group_order[i] = i;
    rng.shuffle(group_order);

    SynthDataset data;
    data.ontology = std::move(ontology);
    Corpus& corpus = data.corpus;
    corpus.max_sentence_tokens = config.max_sentence_tokens;
    corpus.max_visits = config.max_visits;

    // Noise pool: leaves of the level-2 subtrees no trial claims.
    std::vector<std::string> noise_codes;
    for (std::size_t gi = config.n_trials; gi < group_order.size(); ++gi) {
        const auto& g = groups[group_order[gi]];
        noise_codes.insert(noise_codes.end(), g.all_leaves.begin(), g.all_leaves.end());
    }
    if (noise_codes.empty()) throw GenerationError("noise code pool is empty");

    // Trials and criteria. Criterion texts are collected first so the token
    // vocabulary can be built before sentences are encoded.
    struct PendingCriterion {
        std::string id, trial_id, text;
        CriterionKind kind;
    };
    std::vector<PendingCriterion> pending;
    std::vector<std::vector<std::string>> trial_ic_codes(config.n_trials);
    std::vector<std::vector<std::string>> trial_ec_codes(config.n_trials);

    for (std::size_t ti = 0; ti < config.n_trials; ++ti) {
        const auto& focus = groups[group_order[ti]];
        TrialInfo trial;
        char tid[16];
        std::snprintf(tid, sizeof(tid), "t%04zu", ti);
        trial.id = tid;
        trial.category = focus.d1;
        trial.phase = static_cast<int>(1 + rng.below(3));
        corpus.trials.push_back(trial);

        const std::size_t ic_count =
            config.ic_min + rng.index(config.ic_max - config.ic_min + 1);
        const std::size_t ec_count =
            config.ec_min + rng.index(config.ec_max - config.ec_min + 1);

        std::vector<std::size_t> l3_order(focus.level3.size());
        for (std::size_t i = 0; i < l3_order.size(); ++i) l3_order[i] = i;
        rng.shuffle(l3_order);

        std::size_t next_l3 = 0;
        std::size_t criterion_no = 0;
        auto emit = [&](CriterionKind kind, const std::string& tmpl) {
            const auto& l3 = focus.level3[l3_order[next_l3++]];
            const std::string& target = l3.leaf_codes[rng.index(l3.leaf_codes.size())];
            char cid[24];
            std::snprintf(cid, sizeof(cid), "%s-%c%02zu", trial.id.c_str(),
                          kind == CriterionKind::inclusion ? 'i' : 'e', criterion_no++);
            pending.push_back({cid, trial.id, format_template(tmpl, l3.d3), kind});
            data.truth.push_back({cid, trial.id, kind, target, l3.d3});
            (kind == CriterionKind::inclusion ? trial_ic_codes : trial_ec_codes)[ti].push_back(
                target);
        };
        for (std::size_t i = 0; i < ic_count; ++i) {
            emit(CriterionKind::inclusion, ic_templates[rng.index(ic_templates.size())]);
        }
        for (std::size_t e = 0; e < ec_count; ++e) {
            emit(CriterionKind::exclusion, ec_templates[rng.index(ec_templates.size())]);
        }
    }

    for (const auto& p : pending) {
        for (const auto& tok : tokenize(p.text)) corpus.vocab.add(tok);
    }
    for (const auto& p : pending) {
        const std::size_t idx = corpus.criteria.size();
        corpus.criteria.push_back(make_sentence(p.id, p.trial_id, p.kind, p.text, corpus.vocab,
                                                corpus.max_sentence_tokens));
        corpus.trials[corpus.trial_index(p.trial_id)].criterion_indices.push_back(idx);
    }

    // Patients: enrollment round-robin over trials.
    for (std::size_t pi = 0; pi < config.n_patients; ++pi) {
        const std::size_t ti = pi % config.n_trials;
        PatientRecord patient;
        char pid[16];
        std::snprintf(pid, sizeof(pid), "p%05zu", pi);
        patient.id = pid;

        // Required codes: own trial's inclusion targets plus every other
        // trial's exclusion targets; never this trial's exclusion targets.
        std::vector<std::string> required = trial_ic_codes[ti];
        for (std::size_t other = 0; other < config.n_trials; ++other) {
            if (other == ti) continue;
            required.insert(required.end(), trial_ec_codes[other].begin(),
                            trial_ec_codes[other].end());
        }
        rng.shuffle(required);

        // Visit packing: one slot per modality per visit.
        std::array<std::vector<std::string>, 3> by_modality;
        for (const auto& code : required) {
            by_modality[static_cast<std::size_t>(data.ontology.entry(code).modality)].push_back(
                code);
        }
        std::size_t visits = config.visits_min + rng.index(config.visits_max - config.visits_min + 1);
        for (const auto& lane : by_modality) visits = std::max(visits, lane.size());
        if (visits > config.max_visits) {
            throw GenerationError("patient '" + patient.id + "' needs " + std::to_string(visits) +
                                  " visits; raise max_visits or lower trial counts");
        }

        patient.visit_codes.assign(visits, {std::string(), std::string(), std::string()});
        patient.modality_mask.assign(visits, {false, false, false});
        for (std::size_t m = 0; m < 3; ++m) {
            // Spread lane codes over distinct visits.
            std::vector<std::size_t> slots(visits);
            for (std::size_t v = 0; v < visits; ++v) slots[v] = v;
            rng.shuffle(slots);
            for (std::size_t k = 0; k < by_modality[m].size(); ++k) {
                patient.visit_codes[slots[k]][m] = by_modality[m][k];
                patient.modality_mask[slots[k]][m] = true;
            }
        }
        // Noise in the remaining open slots.
        for (std::size_t v = 0; v < visits; ++v) {
            for (std::size_t m = 0; m < 3; ++m) {
                if (patient.modality_mask[v][m]) continue;
                if (rng.next_double() >= config.noise_code_prob) continue;
                // Find a noise code of this modality; pools are per level-1
                // branch so a few draws suffice.
                for (int attempt = 0; attempt < 16; ++attempt) {
                    const auto& code = noise_codes[rng.index(noise_codes.size())];
                    if (data.ontology.entry(code).modality == static_cast<Modality>(m)) {
                        patient.visit_codes[v][m] = code;
                        patient.modality_mask[v][m] = true;
                        break;
                    }
                }
            }
        }

        patient.demographics = {static_cast<double>(rng.below(2)),
                                static_cast<double>(18 + rng.below(70)),
                                static_cast<double>(rng.below(10))};
        corpus.patients.push_back(std::move(patient));
        corpus.enrollments.push_back({corpus.patients.back().id, corpus.trials[ti].id});
    }

    corpus.validate();
    return data;
}

void save_dataset(const std::string& dir, const SynthDataset& dataset) {
    const fs::path base(dir);
    fs::create_directories(base);
    save_corpus(dir, dataset.corpus);
    save_ontology((base / "ontology.txt").string(), dataset.ontology);

    {
        std::ofstream out(base / "truth.jsonl", std::ios::trunc);
        if (!out) throw FormatError("cannot open truth.jsonl for writing");
        for (const auto& t : dataset.truth) {
            json j{{"criterion_id", t.criterion_id},
                   {"trial_id", t.trial_id},
                   {"kind", criterion_kind_name(t.kind)},
                   {"target_code", t.target_code},
                   {"target_desc", t.target_desc}};
            out << j.dump() << '\n';
        }
    }
    {
        std::set<std::string> texts;
        for (const auto& [code, entry] : dataset.ontology.codes()) {
            for (const auto& d : entry.descriptions) texts.insert(d);
        }
        for (const auto& tok : dataset.corpus.vocab.tokens) texts.insert(tok);
        std::ofstream out(base / "texts.txt", std::ios::trunc);
        if (!out) throw FormatError("cannot open texts.txt for writing");
        for (const auto& t : texts) out << t << '\n';
    }
}

std::vector<GroundTruth> load_truth(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open '" + path + "'");
    std::vector<GroundTruth> truth;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        truth.push_back({j.at("criterion_id").get<std::string>(),
                         j.at("trial_id").get<std::string>(),
                         criterion_kind_from_name(j.at("kind").get<std::string>()),
                         j.at("target_code").get<std::string>(),
                         j.at("target_desc").get<std::string>()});
    }
    return truth;
}

}  // namespace treematch
