#include "treematch/data_model.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "treematch/errors.hpp"
#include "treematch/rng.hpp"
#include "treematch/text.hpp"

namespace treematch {

namespace fs = std::filesystem;
using nlohmann::json;

const char* criterion_kind_name(CriterionKind k) {
    switch (k) {
        case CriterionKind::inclusion: return "inclusion";
        case CriterionKind::exclusion: return "exclusion";
        case CriterionKind::foreign: return "foreign";
    }
    return "?";
}

CriterionKind criterion_kind_from_name(const std::string& name) {
    if (name == "inclusion") return CriterionKind::inclusion;
    if (name == "exclusion") return CriterionKind::exclusion;
    if (name == "foreign") return CriterionKind::foreign;
    throw FormatError("unknown criterion kind: '" + name + "'");
}

const char* match_class_name(MatchClass c) {
    switch (c) {
        case MatchClass::match: return "match";
        case MatchClass::mismatch: return "mismatch";
        case MatchClass::unknown: return "unknown";
    }
    return "?";
}

std::array<double, 3> one_hot(MatchClass c) {
    std::array<double, 3> y{0.0, 0.0, 0.0};
    y[static_cast<std::size_t>(c)] = 1.0;
    return y;
}

void PatientRecord::validate(std::size_t max_visits) const {
    if (visit_codes.empty() || visit_codes.size() > max_visits) {
        throw FormatError("patient '" + id + "': visit count " +
                          std::to_string(visit_codes.size()) + " outside [1, " +
                          std::to_string(max_visits) + "]");
    }
    if (modality_mask.size() != visit_codes.size()) {
        throw FormatError("patient '" + id + "': mask rows != visit rows");
    }
    for (std::size_t v = 0; v < visit_codes.size(); ++v) {
        for (std::size_t m = 0; m < 3; ++m) {
            if (modality_mask[v][m] && visit_codes[v][m].empty()) {
                throw FormatError("patient '" + id + "': mask set but no code at visit " +
                                  std::to_string(v) + " modality " + std::to_string(m));
            }
        }
    }
}

void CriteriaSentence::validate() const {
    if (tokens.size() != mask.size()) {
        throw FormatError("criterion '" + id + "': token/mask length mismatch");
    }
    bool any = false;
    for (auto b : mask) any = any || (b != 0);
    if (!any) throw FormatError("criterion '" + id + "': all tokens masked");
    if (kind == CriterionKind::foreign) {
        throw FormatError("criterion '" + id + "': authored sentences cannot be 'foreign'");
    }
}

int Vocabulary::add(const std::string& token) {
    auto it = index.find(token);
    if (it != index.end()) return it->second;
    const int id = static_cast<int>(tokens.size());
    tokens.push_back(token);
    index.emplace(token, id);
    return id;
}

std::size_t Corpus::patient_index(const std::string& id) const {
    for (std::size_t i = 0; i < patients.size(); ++i)
        if (patients[i].id == id) return i;
    throw LookupError("unknown patient: '" + id + "'");
}

std::size_t Corpus::trial_index(const std::string& id) const {
    for (std::size_t i = 0; i < trials.size(); ++i)
        if (trials[i].id == id) return i;
    throw LookupError("unknown trial: '" + id + "'");
}

std::size_t Corpus::criterion_index(const std::string& id) const {
    for (std::size_t i = 0; i < criteria.size(); ++i)
        if (criteria[i].id == id) return i;
    throw LookupError("unknown criterion: '" + id + "'");
}

void Corpus::validate() const {
    for (const auto& p : patients) p.validate(max_visits);
    for (const auto& c : criteria) c.validate();
    for (const auto& e : enrollments) {
        patient_index(e.patient_id);
        trial_index(e.trial_id);
    }
}

CriteriaSentence make_sentence(std::string criterion_id, std::string trial_id, CriterionKind kind,
                               const std::string& text, const Vocabulary& vocab,
                               std::size_t max_tokens) {
    CriteriaSentence s;
    s.id = std::move(criterion_id);
    s.trial_id = std::move(trial_id);
    s.kind = kind;
    s.text = text;
    auto words = tokenize(text);
    if (words.size() > max_tokens) words.resize(max_tokens);
    s.tokens.assign(max_tokens, 0);
    s.mask.assign(max_tokens, 0);
    for (std::size_t i = 0; i < words.size(); ++i) {
        s.tokens[i] = vocab.id_of(words[i]);
        s.mask[i] = 1;
    }
    if (words.empty()) throw FormatError("criterion '" + s.id + "': text has no tokens");
    return s;
}

namespace {

json read_json_line(const std::string& line, const std::string& file, std::size_t lineno) {
    try {
        return json::parse(line);
    } catch (const json::exception& e) {
        throw FormatError(file + ":" + std::to_string(lineno) + ": " + e.what());
    }
}

template <typename Fn>
void for_each_jsonl(const fs::path& path, Fn fn) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        fn(read_json_line(line, path.filename().string(), lineno));
    }
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
    return out;
}

}  // namespace

Corpus load_corpus(const std::string& dir) {
    const fs::path base(dir);
    Corpus corpus;

    {
        std::ifstream meta_in(base / "meta.json");
        if (!meta_in) throw FormatError("corpus: missing meta.json in '" + dir + "'");
        json meta = json::parse(meta_in, nullptr, true, true);
        corpus.max_sentence_tokens = meta.at("n_s").get<std::size_t>();
        corpus.max_visits = meta.at("n_v").get<std::size_t>();
    }

    {
        std::ifstream in(base / "vocab.txt");
        if (!in) throw FormatError("corpus: missing vocab.txt in '" + dir + "'");
        corpus.vocab.tokens.clear();
        corpus.vocab.index.clear();
        std::string token;
        while (std::getline(in, token)) {
            const int id = static_cast<int>(corpus.vocab.tokens.size());
            corpus.vocab.tokens.push_back(token);
            corpus.vocab.index.emplace(token, id);
        }
        if (corpus.vocab.tokens.empty() || corpus.vocab.tokens[0] != "<unk>") {
            throw FormatError("corpus: vocab.txt must start with the reserved <unk> token");
        }
    }

    for_each_jsonl(base / "patients.jsonl", [&](const json& j) {
        PatientRecord p;
        p.id = j.at("patient_id").get<std::string>();
        for (const auto& row : j.at("E")) {
            std::array<std::string, 3> codes;
            for (std::size_t m = 0; m < 3; ++m) {
                codes[m] = row[m].is_null() ? std::string() : row[m].get<std::string>();
            }
            p.visit_codes.push_back(std::move(codes));
        }
        for (const auto& row : j.at("M_P")) {
            p.modality_mask.push_back({row[0].get<int>() != 0, row[1].get<int>() != 0,
                                       row[2].get<int>() != 0});
        }
        const auto& d = j.at("d");
        p.demographics = {d[0].get<double>(), d[1].get<double>(), d[2].get<double>()};
        corpus.patients.push_back(std::move(p));
    });

    for_each_jsonl(base / "trials.jsonl", [&](const json& j) {
        TrialInfo t;
        t.id = j.at("trial_id").get<std::string>();
        t.category = j.value("category", std::string());
        t.phase = j.value("phase", 0);
        corpus.trials.push_back(std::move(t));
    });

    for_each_jsonl(base / "criteria.jsonl", [&](const json& j) {
        CriteriaSentence c;
        c.id = j.at("criterion_id").get<std::string>();
        c.trial_id = j.at("trial_id").get<std::string>();
        c.kind = criterion_kind_from_name(j.at("kind").get<std::string>());
        c.text = j.at("text").get<std::string>();
        c.tokens = j.at("S").get<std::vector<int>>();
        for (const auto& b : j.at("m_C")) c.mask.push_back(b.get<int>() != 0 ? 1 : 0);
        const std::size_t idx = corpus.criteria.size();
        corpus.criteria.push_back(std::move(c));
        corpus.trials[corpus.trial_index(corpus.criteria.back().trial_id)]
            .criterion_indices.push_back(idx);
    });

    for_each_jsonl(base / "enrollments.jsonl", [&](const json& j) {
        corpus.enrollments.push_back(
            {j.at("patient_id").get<std::string>(), j.at("trial_id").get<std::string>()});
    });

    corpus.validate();
    return corpus;
}

void save_corpus(const std::string& dir, const Corpus& corpus) {
    const fs::path base(dir);
    fs::create_directories(base);

    {
        auto out = open_out(base / "meta.json");
        json meta{{"n_s", corpus.max_sentence_tokens}, {"n_v", corpus.max_visits}};
        out << meta.dump(2) << '\n';
    }
    {
        auto out = open_out(base / "vocab.txt");
        for (const auto& t : corpus.vocab.tokens) out << t << '\n';
    }
    {
        auto out = open_out(base / "patients.jsonl");
        for (const auto& p : corpus.patients) {
            json visits = json::array();
            for (const auto& row : p.visit_codes) {
                json r = json::array();
                for (std::size_t m = 0; m < 3; ++m) {
                    if (row[m].empty())
                        r.push_back(nullptr);
                    else
                        r.push_back(row[m]);
                }
                visits.push_back(std::move(r));
            }
            json mask = json::array();
            for (const auto& row : p.modality_mask) {
                mask.push_back({row[0] ? 1 : 0, row[1] ? 1 : 0, row[2] ? 1 : 0});
            }
            json j{{"patient_id", p.id},
                   {"E", std::move(visits)},
                   {"M_P", std::move(mask)},
                   {"d", p.demographics}};
            out << j.dump() << '\n';
        }
    }
    {
        auto out = open_out(base / "trials.jsonl");
        for (const auto& t : corpus.trials) {
            json j{{"trial_id", t.id}, {"category", t.category}, {"phase", t.phase}};
            out << j.dump() << '\n';
        }
    }
    {
        auto out = open_out(base / "criteria.jsonl");
        for (const auto& c : corpus.criteria) {
            json mc = json::array();
            for (auto b : c.mask) mc.push_back(b ? 1 : 0);
            json j{{"criterion_id", c.id}, {"trial_id", c.trial_id},
                   {"kind", criterion_kind_name(c.kind)}, {"text", c.text},
                   {"S", c.tokens}, {"m_C", std::move(mc)}};
            out << j.dump() << '\n';
        }
    }
    {
        auto out = open_out(base / "enrollments.jsonl");
        for (const auto& e : corpus.enrollments) {
            json j{{"patient_id", e.patient_id}, {"trial_id", e.trial_id}};
            out << j.dump() << '\n';
        }
    }
}

PairSet make_label_pairs(const Corpus& corpus, std::uint64_t seed) {
    // Precondition: every patient is enrolled somewhere.
    {
        std::unordered_map<std::string, bool> enrolled;
        for (const auto& e : corpus.enrollments) enrolled[e.patient_id] = true;
        for (const auto& p : corpus.patients) {
            if (!enrolled.count(p.id)) {
                throw std::invalid_argument("patient '" + p.id + "' has no enrollment");
            }
        }
    }

    Rng rng(seed);
    PairSet result;

    // Foreign candidates are reused across enrollments: trial index -> list of
    // criterion indices of each kind, for every trial that has them.
    auto criteria_of_kind = [&](std::size_t trial_idx, CriterionKind kind) {
        std::vector<std::size_t> out;
        for (std::size_t ci : corpus.trials[trial_idx].criterion_indices) {
            if (corpus.criteria[ci].kind == kind) out.push_back(ci);
        }
        return out;
    };

    for (const auto& enrollment : corpus.enrollments) {
        const std::size_t pi = corpus.patient_index(enrollment.patient_id);
        const std::size_t ti = corpus.trial_index(enrollment.trial_id);
        const TrialInfo& trial = corpus.trials[ti];

        if (trial.criterion_indices.empty()) {
            ++result.warnings;
            continue;
        }
        for (std::size_t ci : trial.criterion_indices) {
            const auto kind = corpus.criteria[ci].kind;
            result.pairs.push_back({pi, ci, kind,
                                    kind == CriterionKind::inclusion ? MatchClass::match
                                                                     : MatchClass::mismatch,
                                    trial.id});
        }

        // One foreign inclusion and one foreign exclusion criterion, each from
        // a uniformly chosen different trial that has the right kind.
        for (const auto kind : {CriterionKind::inclusion, CriterionKind::exclusion}) {
            std::vector<std::size_t> donor_trials;
            for (std::size_t oi = 0; oi < corpus.trials.size(); ++oi) {
                if (oi == ti) continue;
                if (!criteria_of_kind(oi, kind).empty()) donor_trials.push_back(oi);
            }
            if (donor_trials.empty()) {
                ++result.warnings;
                continue;
            }
            const std::size_t donor = donor_trials[rng.index(donor_trials.size())];
            const auto candidates = criteria_of_kind(donor, kind);
            const std::size_t ci = candidates[rng.index(candidates.size())];
            result.pairs.push_back(
                {pi, ci, CriterionKind::foreign, MatchClass::unknown, trial.id});
        }
    }
    return result;
}

void ModelConfig::validate() const {
    if (n_m == 0 || n_m % 2 != 0) {
        throw std::invalid_argument("ModelConfig: n_m must be a positive even number");
    }
    if (n_e == 0 || n_s == 0 || n_v == 0) {
        throw std::invalid_argument("ModelConfig: n_e, n_s, n_v must be positive");
    }
    if (attention_heads == 0 || n_e % attention_heads != 0) {
        throw std::invalid_argument("ModelConfig: attention head count must divide n_e");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::invalid_argument("ModelConfig: alpha must be in (0, 1)");
    }
    if (lambda < 0.0) throw std::invalid_argument("ModelConfig: lambda must be >= 0");
    if (beam_infer < 1) throw std::invalid_argument("ModelConfig: beam width must be >= 1");
}

}  // namespace treematch
