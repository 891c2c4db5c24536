#pragma once

#include <array>
#include <map>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "treematch/embedder.hpp"

namespace treematch {

inline constexpr std::size_t kOntologyLevels = 4;

enum class Modality { diagnosis = 0, procedure = 1, medication = 2 };

const char* modality_name(Modality m);
Modality modality_from_name(const std::string& name);

// One code's chain of descriptions, level 1 (broadest category) through
// level 4 (the code itself).
struct CodeEntry {
    Modality modality;
    std::array<std::string, kOntologyLevels> descriptions;
};

// The 4-level code hierarchy. Codes sharing a level-k description share all
// descriptions at levels 1..k; validate() enforces that tree property.
class Ontology {
public:
    void add_code(std::string code_id, CodeEntry entry);
    void validate() const;

    bool contains(const std::string& code_id) const { return codes_.count(code_id) != 0; }
    const CodeEntry& entry(const std::string& code_id) const;
    std::size_t size() const { return codes_.size(); }

    const std::map<std::string, CodeEntry>& codes() const { return codes_; }

private:
    std::map<std::string, CodeEntry> codes_;
};

// Line-delimited records: `code_id, modality, d1|d2|d3|d4`. Descriptions may
// not contain commas or pipes. Blank lines and lines starting with '#' are
// skipped. The loaded ontology is validated.
Ontology load_ontology(const std::string& path);
void save_ontology(const std::string& path, const Ontology& ontology);

// A code's four (description, embedding) pairs.
struct CodeInfo {
    std::array<std::string, kOntologyLevels> descriptions;
    std::array<std::vector<double>, kOntologyLevels> embeddings;
};

// Uncached embedding of one code's chain; depends only on that code's row.
CodeInfo code_info(const Ontology& ontology, const TextEmbedder& embedder,
                   const std::string& code_id);

// Memoizing view over (ontology, embedder). Safe for concurrent readers;
// misses are filled under an exclusive lock.
class CodeBook {
public:
    CodeBook(const Ontology& ontology, const TextEmbedder& embedder)
        : ontology_(ontology), embedder_(embedder) {}

    const CodeInfo& info(const std::string& code_id) const;
    const Ontology& ontology() const { return ontology_; }
    const TextEmbedder& embedder() const { return embedder_; }

private:
    const Ontology& ontology_;
    const TextEmbedder& embedder_;
    mutable std::shared_mutex mutex_;
    mutable std::unordered_map<std::string, CodeInfo> cache_;
};

}  // namespace treematch
