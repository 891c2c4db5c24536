#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "treematch/beam_retrieval.hpp"
#include "treematch/criteria_encoder.hpp"
#include "treematch/data_model.hpp"
#include "treematch/memory_tree.hpp"
#include "treematch/ops.hpp"

namespace treematch {

// Final classification head over concat(q, r):
//   h2 = relu(h1 W1 + b1), h3 = relu(h2 W2 + b2), yhat = softmax(h3 W3 + b3).
template <typename S>
struct HeadParams {
    ad::Tensor<S> w1;  // (2 n_m x n_m)
    ad::Tensor<S> b1;  // (n_m)
    ad::Tensor<S> w2;  // (n_m x hidden)
    ad::Tensor<S> b2;  // (hidden)
    ad::Tensor<S> w3;  // (hidden x 3)
    ad::Tensor<S> b3;  // (3)

    static HeadParams init(std::size_t n_m, std::size_t hidden, std::uint64_t seed) {
        HeadParams p;
        p.w1 = detail::xavier<S>(2 * n_m, n_m, seed, "head.w1");
        p.b1 = ad::Tensor<S>::zeros({n_m}, true);
        p.w2 = detail::xavier<S>(n_m, hidden, seed, "head.w2");
        p.b2 = ad::Tensor<S>::zeros({hidden}, true);
        p.w3 = detail::xavier<S>(hidden, 3, seed, "head.w3");
        p.b3 = ad::Tensor<S>::zeros({3}, true);
        return p;
    }

    std::vector<std::pair<std::string, ad::Tensor<S>>> named() {
        return {{"head.w1", w1}, {"head.b1", b1}, {"head.w2", w2},
                {"head.b2", b2}, {"head.w3", w3}, {"head.b3", b3}};
    }
};

template <typename S>
ad::Tensor<S> predict(ad::Graph<S>& g, ad::Tensor<S> q, ad::Tensor<S> r, HeadParams<S>& head) {
    auto h1 = ad::concat(g, {q, r});
    auto h2 = ad::relu(g, ad::affine(g, h1, head.w1, head.b1));
    auto h3 = ad::relu(g, ad::affine(g, h2, head.w2, head.b2));
    return ad::softmax(g, ad::affine(g, h3, head.w3, head.b3));
}

// Alignment loss between the query and the retrieved response. d(r, q) is
// cosine similarity rescaled to [0, 1]; inclusion pairs push d toward 1,
// exclusion pairs push it under the alpha margin, foreign pairs contribute
// nothing. Zero-norm inputs fall back to d = 0.5 (orthogonal-equivalent) and
// bump the warning counter.
template <typename S>
ad::Tensor<S> distance_loss(ad::Graph<S>& g, ad::Tensor<S> q, ad::Tensor<S> r,
                            CriterionKind kind, double alpha,
                            std::atomic<std::size_t>* zero_norm_warnings = nullptr) {
    if (kind == CriterionKind::foreign) return ad::Tensor<S>::scalar(S(0));

    double qq = 0.0, rr = 0.0;
    for (std::size_t i = 0; i < q.numel(); ++i) qq += static_cast<double>(q.at(i)) * q.at(i);
    for (std::size_t i = 0; i < r.numel(); ++i) rr += static_cast<double>(r.at(i)) * r.at(i);

    ad::Tensor<S> similarity;  // d(r, q) in [0, 1]
    if (qq == 0.0 || rr == 0.0) {
        if (zero_norm_warnings) zero_norm_warnings->fetch_add(1);
        similarity = ad::Tensor<S>::scalar(S(0.5));
    } else {
        auto cosine = ad::div(g, ad::dot(g, r, q),
                              ad::sqrt(g, ad::mul(g, ad::dot(g, r, r), ad::dot(g, q, q))));
        similarity = ad::scale(g, ad::add_scalar(g, cosine, S(1)), S(0.5));
    }
    if (kind == CriterionKind::inclusion) {
        return ad::add_scalar(g, ad::scale(g, similarity, S(-1)), S(1));  // 1 - d
    }
    return ad::relu(g, ad::add_scalar(g, similarity, static_cast<S>(-alpha)));  // max(0, d - a)
}

// cross_entropy(yhat, y) + lambda * distance_loss, with the picked probability
// clamped at 1e-12 before the log.
template <typename S>
ad::Tensor<S> total_loss(ad::Graph<S>& g, ad::Tensor<S> yhat, MatchClass label,
                         ad::Tensor<S> distance, double lambda) {
    auto picked = ad::pick(g, yhat, static_cast<std::size_t>(label));
    auto ce = ad::scale(g, ad::log(g, ad::clamp_min(g, picked, S(1e-12))), S(-1));
    if (lambda == 0.0) return ce;
    return ad::add(g, ce, ad::scale(g, distance, static_cast<S>(lambda)));
}

// All trainable parameters plus the dimension/hyperparameter config.
template <typename S>
struct ModelState {
    ModelConfig config;
    TreeParams<S> tree;
    EncoderParams<S> encoder;
    HeadParams<S> head;

    static ModelState init(const ModelConfig& config, std::uint64_t seed) {
        config.validate();
        ModelState s;
        s.config = config;
        s.tree = TreeParams<S>::init(config.n_m, config.n_e, seed);
        s.encoder = EncoderParams<S>::init(config.n_e, config.n_m, config.attention_heads,
                                           config.encoder_layers, seed);
        s.head = HeadParams<S>::init(config.n_m, config.head_hidden, seed);
        return s;
    }

    std::vector<std::pair<std::string, ad::Tensor<S>>> named() {
        std::vector<std::pair<std::string, ad::Tensor<S>>> out;
        for (auto& p : tree.named()) out.push_back(std::move(p));
        for (auto& p : encoder.named()) out.push_back(std::move(p));
        for (auto& p : head.named()) out.push_back(std::move(p));
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (auto& [name, t] : named()) n += t.numel();
        return n;
    }
};

// One pair's forward pass. Owns the freshly built tree so the beam entries'
// node pointers stay valid as long as the result lives.
template <typename S>
struct PairForward {
    std::unique_ptr<MemoryNode<S>> tree;
    ad::Tensor<S> q;
    ad::Tensor<S> r;
    ad::Tensor<S> yhat;
    BeamResult<S> beam;
};

template <typename S>
PairForward<S> forward_pair(ad::Graph<S>& g, ModelState<S>& state, const CodeBook& codebook,
                            const Vocabulary& vocab, const PatientRecord& record,
                            const CriteriaSentence& sentence, std::size_t beam_width) {
    PairForward<S> fwd;
    fwd.tree = build_patient_tree(g, record, codebook, state.tree);
    fwd.q = encode_criteria(g, sentence, vocab, codebook.embedder(), state.encoder);
    fwd.beam = beam_search(g, *fwd.tree, fwd.q, beam_width);
    fwd.r = fwd.beam.response;
    fwd.yhat = predict(g, fwd.q, fwd.r, state.head);
    return fwd;
}

// Retrieval against a prebuilt (frozen) tree, for bulk inference where one
// patient's tree is reused across criteria.
template <typename S>
PairForward<S> forward_pair_cached(ad::Graph<S>& g, ModelState<S>& state,
                                   const CodeBook& codebook, const Vocabulary& vocab,
                                   MemoryNode<S>& tree, const CriteriaSentence& sentence,
                                   std::size_t beam_width) {
    PairForward<S> fwd;
    fwd.q = encode_criteria(g, sentence, vocab, codebook.embedder(), state.encoder);
    fwd.beam = beam_search(g, tree, fwd.q, beam_width);
    fwd.r = fwd.beam.response;
    fwd.yhat = predict(g, fwd.q, fwd.r, state.head);
    return fwd;
}

struct PredictionRecord {
    std::string patient_id;
    std::string trial_id;
    std::string criterion_id;
    std::array<double, 3> probs{0.0, 0.0, 0.0};
    MatchClass predicted = MatchClass::unknown;
    bool has_explanation = false;
    ExplanationTree explanation;
};

// JSON line serializer (explanation.cpp's sibling in prediction_io.cpp).
std::string prediction_json(const PredictionRecord& record);

template <typename S>
MatchClass argmax_class(const ad::Tensor<S>& yhat) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i)
        if (yhat.at(i) > yhat.at(best)) best = i;
    return static_cast<MatchClass>(best);
}

// Full inference for one (patient, criterion) pair: build tree, encode the
// query, beam-search, classify. Returns the prediction and the explanation.
template <typename S>
PredictionRecord match_pair(ModelState<S>& state, const CodeBook& codebook,
                            const Vocabulary& vocab, const PatientRecord& record,
                            const CriteriaSentence& sentence, std::size_t beam_width,
                            bool with_explanation = true) {
    ad::Graph<S> g(false);
    auto fwd = forward_pair(g, state, codebook, vocab, record, sentence, beam_width);
    PredictionRecord out;
    out.patient_id = record.id;
    out.trial_id = sentence.trial_id;
    out.criterion_id = sentence.id;
    for (std::size_t i = 0; i < 3; ++i) out.probs[i] = static_cast<double>(fwd.yhat.at(i));
    out.predicted = argmax_class(fwd.yhat);
    if (with_explanation) {
        out.explanation = extract_explanation(fwd.beam);
        out.has_explanation = true;
    }
    return out;
}

}  // namespace treematch
