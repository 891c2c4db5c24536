#include "treematch/ontology.hpp"

#include <fstream>
#include <sstream>

#include "treematch/errors.hpp"

namespace treematch {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

const char* modality_name(Modality m) {
    switch (m) {
        case Modality::diagnosis: return "diagnosis";
        case Modality::procedure: return "procedure";
        case Modality::medication: return "medication";
    }
    return "?";
}

Modality modality_from_name(const std::string& name) {
    if (name == "diagnosis") return Modality::diagnosis;
    if (name == "procedure") return Modality::procedure;
    if (name == "medication") return Modality::medication;
    throw FormatError("unknown modality: '" + name + "'");
}

void Ontology::add_code(std::string code_id, CodeEntry entry) {
    for (const auto& d : entry.descriptions) {
        if (d.empty()) {
            throw FormatError("code '" + code_id + "' has an empty description level");
        }
    }
    codes_[std::move(code_id)] = std::move(entry);
}

void Ontology::validate() const {
    // For each level k, a description must always sit under the same chain of
    // ancestors; otherwise the chains do not form a tree.
    std::array<std::map<std::string, const CodeEntry*>, kOntologyLevels> seen;
    for (const auto& [id, entry] : codes_) {
        for (std::size_t k = 0; k < kOntologyLevels; ++k) {
            auto [it, inserted] = seen[k].emplace(entry.descriptions[k], &entry);
            if (inserted) continue;
            const CodeEntry& prior = *it->second;
            for (std::size_t j = 0; j < k; ++j) {
                if (prior.descriptions[j] != entry.descriptions[j]) {
                    throw FormatError("code '" + id + "' violates the tree property: level-" +
                                      std::to_string(k + 1) + " description \"" +
                                      entry.descriptions[k] +
                                      "\" appears under conflicting ancestors");
                }
            }
        }
    }
}

const CodeEntry& Ontology::entry(const std::string& code_id) const {
    auto it = codes_.find(code_id);
    if (it == codes_.end()) throw LookupError("unknown code: '" + code_id + "'");
    return it->second;
}

Ontology load_ontology(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("ontology: cannot open '" + path + "'");
    Ontology ontology;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string text = trim(line);
        if (text.empty() || text[0] == '#') continue;
        const auto c1 = text.find(',');
        const auto c2 = text.find(',', c1 == std::string::npos ? c1 : c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos) {
            throw FormatError("ontology: line " + std::to_string(lineno) +
                              " is not `code_id, modality, d1|d2|d3|d4`");
        }
        const std::string code_id = trim(text.substr(0, c1));
        const std::string modality = trim(text.substr(c1 + 1, c2 - c1 - 1));
        const std::string chain = text.substr(c2 + 1);

        CodeEntry entry;
        entry.modality = modality_from_name(modality);
        std::size_t level = 0, start = 0;
        while (true) {
            const auto bar = chain.find('|', start);
            const std::string part =
                trim(bar == std::string::npos ? chain.substr(start)
                                              : chain.substr(start, bar - start));
            if (level >= kOntologyLevels) {
                throw FormatError("ontology: code '" + code_id + "' has more than " +
                                  std::to_string(kOntologyLevels) + " levels");
            }
            entry.descriptions[level++] = part;
            if (bar == std::string::npos) break;
            start = bar + 1;
        }
        if (level != kOntologyLevels) {
            throw FormatError("ontology: code '" + code_id + "' has " + std::to_string(level) +
                              " levels, expected " + std::to_string(kOntologyLevels));
        }
        if (ontology.contains(code_id)) {
            throw FormatError("ontology: duplicate code '" + code_id + "'");
        }
        ontology.add_code(code_id, std::move(entry));
    }
    ontology.validate();
    return ontology;
}

void save_ontology(const std::string& path, const Ontology& ontology) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("ontology: cannot open '" + path + "' for writing");
    for (const auto& [id, entry] : ontology.codes()) {
        out << id << ", " << modality_name(entry.modality) << ", ";
        for (std::size_t k = 0; k < kOntologyLevels; ++k) {
            if (k) out << '|';
            out << entry.descriptions[k];
        }
        out << '\n';
    }
    if (!out) throw FormatError("ontology: write failed for '" + path + "'");
}

CodeInfo code_info(const Ontology& ontology, const TextEmbedder& embedder,
                   const std::string& code_id) {
    const CodeEntry& entry = ontology.entry(code_id);
    CodeInfo info;
    info.descriptions = entry.descriptions;
    for (std::size_t k = 0; k < kOntologyLevels; ++k) {
        info.embeddings[k] = embedder.embed(entry.descriptions[k]);
    }
    return info;
}

const CodeInfo& CodeBook::info(const std::string& code_id) const {
    {
        std::shared_lock lock(mutex_);
        auto it = cache_.find(code_id);
        if (it != cache_.end()) return it->second;
    }
    CodeInfo fresh = code_info(ontology_, embedder_, code_id);
    std::unique_lock lock(mutex_);
    auto [it, inserted] = cache_.emplace(code_id, std::move(fresh));
    return it->second;
}

}  // namespace treematch
