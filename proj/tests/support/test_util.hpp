#pragma once

// Shared test scaffolding: random fixtures, independent oracles and temp-dir
// plumbing. The oracles here deliberately re-derive results with straight-line
// scalar code so they share no path with the library implementations.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "treematch/data_model.hpp"
#include "treematch/memory_tree.hpp"
#include "treematch/ontology.hpp"
#include "treematch/rng.hpp"
#include "treematch/synthdata.hpp"
#include "treematch/tensor.hpp"

namespace testutil {

using treematch::Rng;

template <typename S>
treematch::ad::Tensor<S> random_tensor(treematch::ad::Shape shape, Rng& rng, double lo = -1.0,
                                       double hi = 1.0, bool requires_grad = false) {
    std::vector<S> v(treematch::ad::shape_numel(shape));
    for (auto& x : v) x = static_cast<S>(rng.uniform(lo, hi));
    return treematch::ad::Tensor<S>::from_values(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<double> random_values(std::size_t n, Rng& rng, double lo = -1.0,
                                         double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

// Unique temp directory, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("treematch_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::string str() const { return path_.string(); }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// scalar oracles
// ---------------------------------------------------------------------------

// Entry-by-entry evaluation of the gated slot write.
inline std::vector<double> slot_update_oracle(const std::vector<double>& m_old,
                                              const std::vector<double>& e, double s,
                                              const std::vector<double>& w_erase,
                                              const std::vector<double>& w_add) {
    const std::size_t n_m = m_old.size();
    const std::size_t n_e = e.size();
    std::vector<double> out(n_m);
    for (std::size_t i = 0; i < n_m; ++i) {
        double we = 0.0, wa = 0.0;
        for (std::size_t j = 0; j < n_e; ++j) {
            we += w_erase[i * n_e + j] * e[j];
            wa += w_add[i * n_e + j] * e[j];
        }
        const double gate = 1.0 / (1.0 + std::exp(-we));
        out[i] = m_old[i] * (1.0 - s * gate) + s * std::tanh(wa);
    }
    return out;
}

// Straight-line replay of the whole tree build: one flat map of description
// path -> memory vector, updated in exactly the order the algorithm
// prescribes, with no tree structure and no tensor ops.
struct FlatTreeOracle {
    std::map<std::vector<std::string>, std::vector<double>> memories;

    void insert_code(const treematch::CodeInfo& info, const std::vector<double>& w_erase,
                     const std::vector<double>& w_add, std::size_t n_m) {
        std::vector<std::string> path;
        for (std::size_t l = 0; l < treematch::kOntologyLevels; ++l) {
            path.push_back(info.descriptions[l]);
            auto& memory = memories[path];
            if (memory.empty()) memory.assign(n_m, 0.0);
            for (std::size_t d = l; d < treematch::kOntologyLevels; ++d) {
                const double s = std::ldexp(1.0, -static_cast<int>(d - l));
                memory = slot_update_oracle(memory, info.embeddings[d], s, w_erase, w_add);
            }
        }
    }
};

// Exhaustive softmax attention over every non-root node of a memory tree.
template <typename S>
void collect_memories(const treematch::MemoryNode<S>& node,
                      std::vector<std::vector<double>>& memories) {
    for (const auto& [key, child] : node.children) {
        memories.emplace_back(child->memory.values().begin(), child->memory.values().end());
        collect_memories(*child, memories);
    }
}

inline std::vector<double> exhaustive_attention_oracle(
    const std::vector<std::vector<double>>& memories, const std::vector<double>& query) {
    std::vector<double> scores(memories.size());
    double mx = -1e300;
    for (std::size_t i = 0; i < memories.size(); ++i) {
        double a = 0.0;
        for (std::size_t j = 0; j < query.size(); ++j) a += query[j] * memories[i][j];
        scores[i] = a;
        mx = std::max(mx, a);
    }
    double denom = 0.0;
    for (auto& a : scores) {
        a = std::exp(a - mx);
        denom += a;
    }
    std::vector<double> out(query.size(), 0.0);
    for (std::size_t i = 0; i < memories.size(); ++i) {
        const double w = scores[i] / denom;
        for (std::size_t j = 0; j < query.size(); ++j) out[j] += w * memories[i][j];
    }
    return out;
}

// Scalar evaluation of the prediction head.
inline std::vector<double> head_oracle(const std::vector<double>& q, const std::vector<double>& r,
                                       const std::vector<double>& w1, const std::vector<double>& b1,
                                       const std::vector<double>& w2, const std::vector<double>& b2,
                                       const std::vector<double>& w3,
                                       const std::vector<double>& b3, std::size_t n_m,
                                       std::size_t hidden) {
    std::vector<double> h1(q);
    h1.insert(h1.end(), r.begin(), r.end());
    auto dense = [](const std::vector<double>& x, const std::vector<double>& w,
                    const std::vector<double>& b, std::size_t out_dim) {
        std::vector<double> y(out_dim);
        for (std::size_t j = 0; j < out_dim; ++j) {
            double acc = b[j];
            for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * w[i * out_dim + j];
            y[j] = acc;
        }
        return y;
    };
    auto relu = [](std::vector<double> x) {
        for (auto& v : x) v = v > 0.0 ? v : 0.0;
        return x;
    };
    auto h2 = relu(dense(h1, w1, b1, n_m));
    auto h3 = relu(dense(h2, w2, b2, hidden));
    auto logits = dense(h3, w3, b3, 3);
    double mx = std::max({logits[0], logits[1], logits[2]});
    double denom = 0.0;
    for (auto& v : logits) {
        v = std::exp(v - mx);
        denom += v;
    }
    for (auto& v : logits) v /= denom;
    return logits;
}

// ---------------------------------------------------------------------------
// ground-truth membership oracle for the synthetic task
// ---------------------------------------------------------------------------

inline bool record_contains(const treematch::PatientRecord& record, const std::string& code) {
    for (std::size_t v = 0; v < record.visit_count(); ++v) {
        for (std::size_t m = 0; m < 3; ++m) {
            if (record.modality_mask[v][m] && record.visit_codes[v][m] == code) return true;
        }
    }
    return false;
}

// The target-code membership rule: (inclusion, present) -> match,
// (exclusion, absent) -> mismatch, anything else -> unknown. The criterion
// kind is the authored one (inclusion/exclusion), not the pair kind.
inline treematch::MatchClass membership_oracle(treematch::CriterionKind authored_kind,
                                               bool target_present) {
    using treematch::CriterionKind;
    using treematch::MatchClass;
    if (authored_kind == CriterionKind::inclusion) {
        return target_present ? MatchClass::match : MatchClass::unknown;
    }
    return target_present ? MatchClass::unknown : MatchClass::mismatch;
}

inline std::map<std::string, treematch::GroundTruth> truth_by_criterion(
    const std::vector<treematch::GroundTruth>& truth) {
    std::map<std::string, treematch::GroundTruth> out;
    for (const auto& t : truth) out[t.criterion_id] = t;
    return out;
}

}  // namespace testutil
