#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace treematch {

// Source of fixed-width text embeddings. Two variants ship:
//   - HashEmbedder: seeded per-token pseudo-random vectors, maxpooled over
//     tokens and L2-normalized. Fully deterministic, no model files needed.
//   - TableEmbedder: lookups into a precomputed description -> vector table
//     (the carrier for embeddings exported offline from a language model).
// Both guarantee: the same text always yields the identical vector.
class TextEmbedder {
public:
    virtual ~TextEmbedder() = default;

    virtual std::size_t dimension() const = 0;

    // Embedding of a whole text (a code description, a criterion fragment).
    virtual std::vector<double> embed(std::string_view text) const = 0;

    // Embedding of a single token, used when a sequence of per-token vectors
    // is needed rather than one pooled vector.
    virtual std::vector<double> embed_token(std::string_view token) const = 0;
};

class HashEmbedder final : public TextEmbedder {
public:
    HashEmbedder(std::size_t dimension, std::uint64_t seed);

    std::size_t dimension() const override { return dimension_; }
    std::vector<double> embed(std::string_view text) const override;
    std::vector<double> embed_token(std::string_view token) const override;

private:
    std::vector<double> raw_token_vector(std::string_view token) const;

    std::size_t dimension_;
    std::uint64_t seed_;
};

// description text -> vector, all rows the same width.
using EmbeddingTable = std::map<std::string, std::vector<double>>;

class TableEmbedder final : public TextEmbedder {
public:
    explicit TableEmbedder(EmbeddingTable table);

    std::size_t dimension() const override { return dimension_; }
    std::vector<double> embed(std::string_view text) const override;
    std::vector<double> embed_token(std::string_view token) const override;

private:
    EmbeddingTable table_;
    std::size_t dimension_;
};

// TSV, one row per text: `text<TAB>v1 v2 ... vn` (decimal floats). Values
// round-trip exactly (written with max_digits10 precision).
EmbeddingTable load_embedding_table(const std::string& path);
void save_embedding_table(const std::string& path, const EmbeddingTable& table);

}  // namespace treematch
