#pragma once

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

#include "treematch/errors.hpp"
#include "treematch/memory_tree.hpp"
#include "treematch/ops.hpp"

namespace treematch {

// a = q . m
template <typename S>
ad::Tensor<S> attention_score(ad::Graph<S>& g, ad::Tensor<S> q, ad::Tensor<S> m) {
    return ad::dot(g, q, m);
}

template <typename S>
struct BeamEntry {
    MemoryNode<S>* node = nullptr;
    ad::Tensor<S> score;      // invalid for the root entry, which is never scored
    double score_value = -std::numeric_limits<double>::infinity();
    bool expanded = false;
    std::size_t insertion_index = 0;
    std::vector<std::string> path;  // descriptions, root child ... node itself
};

template <typename S>
struct BeamResult {
    ad::Tensor<S> response;                // r, the weighted memory sum
    std::vector<BeamEntry<S>> final_beam;  // sorted by attention descending
    std::vector<double> weights;           // softmax weight per final entry (0 for root)
    std::size_t scored_nodes = 0;          // how many nodes were attention-scored
};

// Best-first exploration of the memory tree. The beam starts with just the
// root at attention -inf; each iteration gathers the children of every
// not-yet-expanded entry, scores them against the query, re-sorts the whole
// beam by attention (ties to the earlier insertion) and keeps the top b. The
// loop ends when nothing unexpanded remains; the response is the softmax
// attention over the surviving entries' memories. Entries kept at -inf (the
// root) carry exactly zero weight and their memories are never read.
//
// Gradients flow through the kept entries' scores and memories; which nodes
// survive is a discrete choice and not differentiated.
template <typename S>
BeamResult<S> beam_search(ad::Graph<S>& g, MemoryNode<S>& root, ad::Tensor<S> q, std::size_t b) {
    if (b < 1) throw std::invalid_argument("beam_search: width must be >= 1");
    if (root.children.empty()) {
        throw DegenerateInputError("beam_search: tree has no node besides the root");
    }

    BeamResult<S> result;
    std::vector<BeamEntry<S>>& beam = result.final_beam;
    BeamEntry<S> root_entry;
    root_entry.node = &root;
    beam.push_back(std::move(root_entry));
    std::size_t next_index = 1;

    auto has_unexpanded = [&] {
        for (const auto& e : beam)
            if (!e.expanded) return true;
        return false;
    };

    while (has_unexpanded()) {
        std::vector<MemoryNode<S>*> children;
        std::vector<const std::vector<std::string>*> parent_paths;
        for (auto& entry : beam) {
            if (entry.expanded) continue;
            entry.expanded = true;
            for (auto& [key, child] : entry.node->children) {
                children.push_back(child.get());
                parent_paths.push_back(&entry.path);
            }
        }
        for (std::size_t i = 0; i < children.size(); ++i) {
            BeamEntry<S> entry;
            entry.node = children[i];
            entry.score = attention_score(g, q, children[i]->memory);
            entry.score_value = static_cast<double>(entry.score.scalar_value());
            entry.insertion_index = next_index++;
            entry.path = *parent_paths[i];
            entry.path.push_back(children[i]->key);
            beam.push_back(std::move(entry));
            ++result.scored_nodes;
        }
        std::sort(beam.begin(), beam.end(), [](const BeamEntry<S>& a, const BeamEntry<S>& b2) {
            if (a.score_value != b2.score_value) return a.score_value > b2.score_value;
            return a.insertion_index < b2.insertion_index;
        });
        if (beam.size() > b) beam.resize(b);
    }

    // Softmax over the finite attention scores; -inf entries contribute 0.
    std::vector<std::size_t> scored;
    std::vector<ad::Tensor<S>> score_tensors;
    for (std::size_t i = 0; i < beam.size(); ++i) {
        if (beam[i].score.valid()) {
            scored.push_back(i);
            score_tensors.push_back(beam[i].score);
        }
    }
    if (scored.empty()) {
        throw DegenerateInputError("beam_search: no scored node survived the beam");
    }
    auto weights = ad::softmax(g, ad::concat(g, score_tensors));

    result.weights.assign(beam.size(), 0.0);
    ad::Tensor<S> response;
    for (std::size_t k = 0; k < scored.size(); ++k) {
        result.weights[scored[k]] = static_cast<double>(weights.at(k));
        auto contribution = ad::smul(g, ad::pick(g, weights, k), beam[scored[k]].node->memory);
        response = k == 0 ? contribution : ad::add(g, response, contribution);
    }
    result.response = response;
    return result;
}

// The interpretability artifact: attended nodes with their softmax weights,
// listed weight-descending, each with its description path from the root.
struct ExplanationNode {
    std::string description;
    int level = 0;
    double weight = 0.0;
    std::vector<std::string> path;  // includes the node's own description
};

struct ExplanationTree {
    std::vector<ExplanationNode> nodes;
};

template <typename S>
ExplanationTree extract_explanation(const BeamResult<S>& result) {
    ExplanationTree tree;
    for (std::size_t i = 0; i < result.final_beam.size(); ++i) {
        const auto& entry = result.final_beam[i];
        if (!entry.score.valid()) continue;  // root placeholder
        ExplanationNode node;
        node.description = entry.node->key;
        node.level = entry.node->level;
        node.weight = result.weights[i];
        node.path = entry.path;
        tree.nodes.push_back(std::move(node));
    }
    std::stable_sort(tree.nodes.begin(), tree.nodes.end(),
                     [](const ExplanationNode& a, const ExplanationNode& b) {
                         return a.weight > b.weight;
                     });
    return tree;
}

// Serializers (explanation.cpp).
std::string explanation_json(const ExplanationTree& tree);
std::string explanation_dot(const ExplanationTree& tree);
std::string explanation_text(const ExplanationTree& tree);

}  // namespace treematch
