#include "treematch/embedder.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "treematch/errors.hpp"
#include "treematch/rng.hpp"
#include "treematch/text.hpp"

namespace treematch {

HashEmbedder::HashEmbedder(std::size_t dimension, std::uint64_t seed)
    : dimension_(dimension), seed_(seed) {
    if (dimension_ == 0) throw std::invalid_argument("HashEmbedder: dimension must be positive");
}

std::vector<double> HashEmbedder::raw_token_vector(std::string_view token) const {
    Rng rng(seed_ ^ fnv1a64(token));
    std::vector<double> v(dimension_);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

std::vector<double> HashEmbedder::embed(std::string_view text) const {
    auto tokens = tokenize(text);
    std::vector<double> pooled(dimension_, -1.0);
    if (tokens.empty()) {
        // A text with no alphanumeric content still maps to a fixed vector.
        pooled = raw_token_vector("");
    } else {
        bool first = true;
        for (const auto& tok : tokens) {
            auto tv = raw_token_vector(tok);
            for (std::size_t i = 0; i < dimension_; ++i) {
                pooled[i] = first ? tv[i] : std::max(pooled[i], tv[i]);
            }
            first = false;
        }
    }
    double norm = 0.0;
    for (double x : pooled) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
        for (double& x : pooled) x /= norm;
    }
    return pooled;
}

std::vector<double> HashEmbedder::embed_token(std::string_view token) const {
    return embed(token);
}

TableEmbedder::TableEmbedder(EmbeddingTable table) : table_(std::move(table)) {
    if (table_.empty()) throw std::invalid_argument("TableEmbedder: empty table");
    dimension_ = table_.begin()->second.size();
}

std::vector<double> TableEmbedder::embed(std::string_view text) const {
    auto it = table_.find(std::string(text));
    if (it == table_.end()) {
        throw MissingEmbeddingError("no precomputed embedding for text: \"" + std::string(text) +
                                    "\"");
    }
    return it->second;
}

std::vector<double> TableEmbedder::embed_token(std::string_view token) const {
    return embed(token);
}

EmbeddingTable load_embedding_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("embedding table: cannot open '" + path + "'");
    EmbeddingTable table;
    std::string line;
    std::size_t row = 0;
    std::size_t dim = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw FormatError("embedding table: row " + std::to_string(row) + " has no tab");
        }
        std::string text = line.substr(0, tab);
        std::istringstream rest(line.substr(tab + 1));
        std::vector<double> values;
        double v;
        while (rest >> v) values.push_back(v);
        if (values.empty()) {
            throw FormatError("embedding table: row " + std::to_string(row) + " has no values");
        }
        if (dim == 0) {
            dim = values.size();
        } else if (values.size() != dim) {
            throw FormatError("embedding table: row " + std::to_string(row) + " has dimension " +
                              std::to_string(values.size()) + ", expected " + std::to_string(dim));
        }
        table[std::move(text)] = std::move(values);
    }
    if (table.empty()) throw FormatError("embedding table: '" + path + "' is empty");
    return table;
}

void save_embedding_table(const std::string& path, const EmbeddingTable& table) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("embedding table: cannot open '" + path + "' for writing");
    char buf[40];
    for (const auto& [text, values] : table) {
        out << text << '\t';
        for (std::size_t i = 0; i < values.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", values[i]);
            if (i) out << ' ';
            out << buf;
        }
        out << '\n';
    }
    if (!out) throw FormatError("embedding table: write failed for '" + path + "'");
}

}  // namespace treematch
