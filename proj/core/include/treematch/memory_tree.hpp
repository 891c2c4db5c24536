#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "treematch/data_model.hpp"
#include "treematch/errors.hpp"
#include "treematch/ontology.hpp"
#include "treematch/ops.hpp"
#include "treematch/rng.hpp"

namespace treematch {

// A node of a patient's memory tree: keyed by a description, holding one
// memory slot. The root carries no key and its memory is never retrieved.
template <typename S>
struct MemoryNode {
    std::string key;
    int level = 0;  // root 0, description levels 1..4, demographics 1
    ad::Tensor<S> memory;
    std::map<std::string, std::unique_ptr<MemoryNode>> children;
    std::size_t update_count = 0;

    MemoryNode* find_child(const std::string& k) {
        auto it = children.find(k);
        return it == children.end() ? nullptr : it->second.get();
    }

    MemoryNode* add_child(const std::string& k, std::size_t memory_dim) {
        auto node = std::make_unique<MemoryNode>();
        node->key = k;
        node->level = level + 1;
        node->memory = ad::Tensor<S>::zeros({memory_dim});
        MemoryNode* raw = node.get();
        children.emplace(k, std::move(node));
        return raw;
    }
};

// Trainable parameters of the tree builder: the erase/add write gates and the
// demographics projection.
template <typename S>
struct TreeParams {
    ad::Tensor<S> write_erase;  // (n_m x n_e)
    ad::Tensor<S> write_add;    // (n_m x n_e)
    ad::Tensor<S> demo_weight;  // (n_m x 3)
    ad::Tensor<S> demo_bias;    // (n_m)

    std::size_t memory_dim() const { return write_erase.dim(0); }
    std::size_t embed_dim() const { return write_erase.dim(1); }

    static TreeParams init(std::size_t n_m, std::size_t n_e, std::uint64_t seed) {
        auto fill = [&](ad::Shape shape, double bound, const char* name) {
            Rng rng(derive_seed(seed, name));
            std::vector<S> v(ad::shape_numel(shape));
            for (auto& x : v) x = static_cast<S>(rng.uniform(-bound, bound));
            return ad::Tensor<S>::from_values(std::move(shape), std::move(v), true);
        };
        const double bound = 1.0 / std::sqrt(static_cast<double>(n_e));
        TreeParams p;
        p.write_erase = fill({n_m, n_e}, bound, "tree.write_erase");
        p.write_add = fill({n_m, n_e}, bound, "tree.write_add");
        p.demo_weight = fill({n_m, 3}, 0.5, "tree.demo_weight");
        p.demo_bias = ad::Tensor<S>::zeros({n_m}, true);
        return p;
    }

    std::vector<std::pair<std::string, ad::Tensor<S>>> named() {
        return {{"tree.write_erase", write_erase},
                {"tree.write_add", write_add},
                {"tree.demo_weight", demo_weight},
                {"tree.demo_bias", demo_bias}};
    }
};

// Trainable scalar count of the tree builder. Independent of how many codes
// the ontology holds: slots exist per description in a patient's record, not
// per vocabulary entry.
template <typename S>
std::size_t count_parameters(const TreeParams<S>& params) {
    return params.write_erase.numel() + params.write_add.numel() + params.demo_weight.numel() +
           params.demo_bias.numel();
}

// One gated write:  m_new = m_old * (1 - s * sigmoid(We e)) + s * tanh(Wa e).
// Differentiable through m_old, e and both gate matrices.
template <typename S>
ad::Tensor<S> update_slot(ad::Graph<S>& g, ad::Tensor<S> m_old, ad::Tensor<S> e, double s,
                          TreeParams<S>& params) {
    if (!(s > 0.0 && s <= 1.0)) {
        throw std::invalid_argument("update_slot: scale must be in (0, 1], got " +
                                    std::to_string(s));
    }
    auto gate = ad::sigmoid(g, ad::matmul(g, params.write_erase, e));
    auto keep = ad::add_scalar(g, ad::scale(g, gate, static_cast<S>(-s)), S(1));
    auto write = ad::scale(g, ad::tanh(g, ad::matmul(g, params.write_add, e)), static_cast<S>(s));
    return ad::add(g, ad::mul(g, m_old, keep), write);
}

// Streamed applications reuse sigmoid(We e) / tanh(Wa e) per description, so
// a build computes each gate projection once per distinct description.
namespace detail {

template <typename S>
struct GateCache {
    ad::Tensor<S> gate;   // sigmoid(We e)
    ad::Tensor<S> write;  // tanh(Wa e)
};

template <typename S>
ad::Tensor<S> apply_cached_update(ad::Graph<S>& g, ad::Tensor<S> m_old,
                                  const GateCache<S>& c, double s) {
    auto keep = ad::add_scalar(g, ad::scale(g, c.gate, static_cast<S>(-s)), S(1));
    auto write = ad::scale(g, c.write, static_cast<S>(s));
    return ad::add(g, ad::mul(g, m_old, keep), write);
}

}  // namespace detail

// Scale and target of one slot write, for tests and debug tracing.
struct UpdateTrace {
    std::string node_key;
    int node_level;
    int embedding_level;  // 1..4
    double scale;
};

using TraceSink = std::function<void(const UpdateTrace&)>;

// Per-build state: the graph, the gate-projection cache and an optional trace.
template <typename S>
struct TreeBuilder {
    ad::Graph<S>& graph;
    TreeParams<S>& params;
    TraceSink trace;
    std::unordered_map<std::string, detail::GateCache<S>> gate_cache;

    const detail::GateCache<S>& gates_for(const std::string& description,
                                          const std::vector<double>& embedding) {
        auto it = gate_cache.find(description);
        if (it != gate_cache.end()) return it->second;
        std::vector<S> cast(embedding.begin(), embedding.end());
        auto e = ad::Tensor<S>::from_values({cast.size()}, std::move(cast));
        detail::GateCache<S> c{ad::sigmoid(graph, ad::matmul(graph, params.write_erase, e)),
                               ad::tanh(graph, ad::matmul(graph, params.write_add, e))};
        return gate_cache.emplace(description, std::move(c)).first->second;
    }
};

// Inserts one code: walks its four description levels from the root, creating
// missing nodes with zero memory, and at the level-l node applies the gated
// write for its own embedding and every deeper one, scale starting at 1 and
// halving per extra level (s = 2^-(d-l)).
template <typename S>
void insert_code(TreeBuilder<S>& builder, MemoryNode<S>& root, const CodeInfo& info) {
    MemoryNode<S>* cur = &root;
    for (std::size_t l = 0; l < kOntologyLevels; ++l) {
        const std::string& desc = info.descriptions[l];
        MemoryNode<S>* next = cur->find_child(desc);
        if (!next) next = cur->add_child(desc, builder.params.memory_dim());
        cur = next;
        for (std::size_t d = l; d < kOntologyLevels; ++d) {
            const double s = std::ldexp(1.0, -static_cast<int>(d - l));
            const auto& gates = builder.gates_for(info.descriptions[d], info.embeddings[d]);
            cur->memory = detail::apply_cached_update(builder.graph, cur->memory, gates, s);
            ++cur->update_count;
            if (builder.trace) {
                builder.trace({cur->key, cur->level, static_cast<int>(d + 1), s});
            }
        }
    }
}

inline constexpr const char* kDemographicsKey = "Demographics";

// Demographics enter the gated-write scale as rough unit-range numbers.
template <typename S>
ad::Tensor<S> demographics_input(const PatientRecord& record) {
    return ad::Tensor<S>::from_values(
        {3}, {static_cast<S>(record.demographics[0]), static_cast<S>(record.demographics[1] / 100.0),
              static_cast<S>(record.demographics[2] / 10.0)});
}

// Builds the full tree for one record: every masked-present code of every
// visit in temporal order (modalities diagnosis, procedure, medication), then
// a demographics child of the root whose memory is the linear projection of d.
// Construction happens through graph ops, so gradients reach the write gates
// and the demographics layer. Build with a non-recording graph for frozen
// bulk inference.
template <typename S>
std::unique_ptr<MemoryNode<S>> build_patient_tree(ad::Graph<S>& g, const PatientRecord& record,
                                                  const CodeBook& codebook,
                                                  TreeParams<S>& params,
                                                  TraceSink trace = nullptr) {
    auto root = std::make_unique<MemoryNode<S>>();
    root->key.clear();
    root->level = 0;
    root->memory = ad::Tensor<S>::zeros({params.memory_dim()});

    TreeBuilder<S> builder{g, params, std::move(trace), {}};
    for (std::size_t v = 0; v < record.visit_count(); ++v) {
        for (std::size_t m = 0; m < 3; ++m) {
            if (!record.modality_mask[v][m]) continue;
            const std::string& code = record.visit_codes[v][m];
            if (!codebook.ontology().contains(code)) {
                throw LookupError("patient '" + record.id + "': code '" + code + "' at visit " +
                                  std::to_string(v) + " modality " +
                                  modality_name(static_cast<Modality>(m)) +
                                  " is not in the ontology");
            }
            insert_code(builder, *root, codebook.info(code));
        }
    }

    MemoryNode<S>* demo = root->add_child(kDemographicsKey, params.memory_dim());
    demo->memory = ad::add(g, ad::matmul(g, params.demo_weight, demographics_input<S>(record)),
                           params.demo_bias);
    demo->update_count = 1;
    return root;
}

// Number of nodes below the root (the root itself is not counted).
template <typename S>
std::size_t tree_size(const MemoryNode<S>& node) {
    std::size_t n = 0;
    for (const auto& [key, child] : node.children) n += 1 + tree_size(*child);
    return n;
}

// Plain-value snapshot for debug dumps; serialization lives in explanation.cpp.
struct TreeSnapshot {
    std::string key;
    int level = 0;
    std::size_t update_count = 0;
    std::vector<double> memory;
    std::vector<TreeSnapshot> children;
};

template <typename S>
TreeSnapshot snapshot_tree(const MemoryNode<S>& node) {
    TreeSnapshot snap;
    snap.key = node.key;
    snap.level = node.level;
    snap.update_count = node.update_count;
    snap.memory.assign(node.memory.values().begin(), node.memory.values().end());
    for (const auto& [key, child] : node.children) snap.children.push_back(snapshot_tree(*child));
    return snap;
}

std::string tree_snapshot_json(const TreeSnapshot& snapshot);

}  // namespace treematch
