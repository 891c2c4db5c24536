#pragma once

#include <stdexcept>
#include <string>

namespace treematch {

// Input that is structurally valid but unusable (all-masked sequence,
// a memory tree with no retrievable node, ...).
class DegenerateInputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed file contents (ontology rows, embedding tables, corpus records).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Unknown code / patient / criterion identifier.
class LookupError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Precomputed embedding table has no row for a requested text.
class MissingEmbeddingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Synthetic generation cannot satisfy its config (target pools exhausted...).
class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Training aborted on a non-finite loss; message carries epoch/batch/loss parts.
class TrainingDivergedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace treematch
