#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "treematch/data_model.hpp"
#include "treematch/errors.hpp"
#include "treematch/evaluator.hpp"
#include "treematch/matcher_model.hpp"
#include "treematch/rng.hpp"

namespace treematch {

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;  // desk default; scale up when memory allows
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t beam_start = 25;
    std::size_t beam_end = 4;
    std::uint64_t seed = 1;
    std::size_t workers = 1;  // >1 relaxes bitwise determinism

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (beam_end < 1 || beam_start < beam_end) {
            throw std::invalid_argument("TrainConfig: need beam_start >= beam_end >= 1");
        }
    }
};

// Test split is by patient (30% of distinct patient ids); the remaining pairs
// split 90/10 into train/val at the pair level. No test patient's pairs ever
// reach train or val.
struct DatasetSplit {
    std::vector<LabeledPair> train;
    std::vector<LabeledPair> val;
    std::vector<LabeledPair> test;
    std::vector<std::string> test_patients;
};

inline DatasetSplit split_dataset(const Corpus& corpus, const std::vector<LabeledPair>& pairs,
                                  std::uint64_t seed) {
    std::vector<std::string> patient_ids;
    patient_ids.reserve(corpus.patients.size());
    for (const auto& p : corpus.patients) patient_ids.push_back(p.id);
    if (patient_ids.size() < 10) {
        throw std::invalid_argument("split_dataset: need at least 10 distinct patients, have " +
                                    std::to_string(patient_ids.size()));
    }

    Rng rng(derive_seed(seed, "split.patients"));
    rng.shuffle(patient_ids);
    const std::size_t test_count =
        static_cast<std::size_t>(std::llround(0.30 * static_cast<double>(patient_ids.size())));

    DatasetSplit split;
    std::unordered_map<std::string, bool> in_test;
    for (std::size_t i = 0; i < test_count; ++i) {
        in_test[patient_ids[i]] = true;
        split.test_patients.push_back(patient_ids[i]);
    }

    std::vector<LabeledPair> rest;
    for (const auto& pair : pairs) {
        if (in_test.count(corpus.patients[pair.patient_index].id)) {
            split.test.push_back(pair);
        } else {
            rest.push_back(pair);
        }
    }
    Rng pair_rng(derive_seed(seed, "split.pairs"));
    pair_rng.shuffle(rest);
    const std::size_t val_count =
        static_cast<std::size_t>(std::llround(0.10 * static_cast<double>(rest.size())));
    split.val.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(val_count));
    split.train.assign(rest.begin() + static_cast<std::ptrdiff_t>(val_count), rest.end());
    return split;
}

// Linear anneal from beam_start at epoch 0 to beam_end at the last epoch,
// rounded to the nearest integer; a single-epoch run uses beam_end.
inline std::size_t beam_schedule(std::size_t epoch, const TrainConfig& config) {
    if (epoch >= config.epochs) {
        throw std::invalid_argument("beam_schedule: epoch out of range");
    }
    if (config.epochs == 1) return config.beam_end;
    const double start = static_cast<double>(config.beam_start);
    const double end = static_cast<double>(config.beam_end);
    const double t = static_cast<double>(epoch) / static_cast<double>(config.epochs - 1);
    return static_cast<std::size_t>(std::llround(start - (start - end) * t));
}

template <typename S>
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<std::pair<std::string, ad::Tensor<S>>> params,
                  const TrainConfig& config)
        : params_(std::move(params)),
          lr_(config.learning_rate),
          beta1_(config.beta1),
          beta2_(config.beta2),
          eps_(config.adam_eps) {
        for (auto& [name, t] : params_) {
            m_.emplace_back(t.numel(), S(0));
            v_.emplace_back(t.numel(), S(0));
        }
    }

    void zero_grad() {
        for (auto& [name, t] : params_) {
            t.ensure_grad();
            t.zero_grad();
        }
    }

    void step() {
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& t = params_[k].second;
            auto grad = t.grad();
            auto vals = t.values_mut();
            for (std::size_t i = 0; i < vals.size(); ++i) {
                const double gi = static_cast<double>(grad[i]);
                m_[k][i] = static_cast<S>(beta1_ * m_[k][i] + (1.0 - beta1_) * gi);
                v_[k][i] = static_cast<S>(beta2_ * v_[k][i] + (1.0 - beta2_) * gi * gi);
                const double mhat = static_cast<double>(m_[k][i]) / bc1;
                const double vhat = static_cast<double>(v_[k][i]) / bc2;
                vals[i] -= static_cast<S>(lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

private:
    std::vector<std::pair<std::string, ad::Tensor<S>>> params_;
    std::vector<std::vector<S>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    std::uint64_t step_ = 0;
};

// Forward + loss for one labeled pair.
template <typename S>
ad::Tensor<S> pair_loss(ad::Graph<S>& g, ModelState<S>& state, const CodeBook& codebook,
                        const Vocabulary& vocab, const PatientRecord& record,
                        const CriteriaSentence& sentence, CriterionKind pair_kind,
                        MatchClass label, std::size_t beam_width,
                        std::atomic<std::size_t>* zero_norm_warnings = nullptr) {
    auto fwd = forward_pair(g, state, codebook, vocab, record, sentence, beam_width);
    ad::Tensor<S> distance;
    if (state.config.lambda != 0.0) {
        distance =
            distance_loss(g, fwd.q, fwd.r, pair_kind, state.config.alpha, zero_norm_warnings);
    } else {
        distance = ad::Tensor<S>::scalar(S(0));
    }
    return total_loss(g, fwd.yhat, label, distance, state.config.lambda);
}

// Accuracy of argmax predictions over a pair list, building each distinct
// patient's tree once with frozen parameters.
template <typename S>
double evaluate_accuracy(ModelState<S>& state, const CodeBook& codebook, const Corpus& corpus,
                         const std::vector<LabeledPair>& pairs, std::size_t beam_width) {
    if (pairs.empty()) return 0.0;
    ad::Graph<S> frozen(false);
    std::unordered_map<std::size_t, std::unique_ptr<MemoryNode<S>>> trees;
    std::size_t correct = 0;
    for (const auto& pair : pairs) {
        auto& tree = trees[pair.patient_index];
        if (!tree) {
            tree = build_patient_tree(frozen, corpus.patients[pair.patient_index], codebook,
                                      state.tree);
        }
        auto fwd = forward_pair_cached(frozen, state, codebook, corpus.vocab, *tree,
                                       corpus.criteria[pair.criterion_index], beam_width);
        if (argmax_class(fwd.yhat) == pair.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

// Predictions for a pair list with frozen parameters, one tree build per
// distinct patient. With workers > 1 the pairs are scored in parallel into
// fixed slots, so the output is identical to the serial run.
template <typename S>
std::vector<ScoredPair> score_pairs(ModelState<S>& state, const CodeBook& codebook,
                                    const Corpus& corpus, const std::vector<LabeledPair>& pairs,
                                    std::size_t beam_width, std::size_t workers = 1) {
    ad::Graph<S> frozen(false);
    std::unordered_map<std::size_t, std::unique_ptr<MemoryNode<S>>> trees;
    for (const auto& pair : pairs) {
        auto& tree = trees[pair.patient_index];
        if (!tree) {
            tree = build_patient_tree(frozen, corpus.patients[pair.patient_index], codebook,
                                      state.tree);
        }
    }

    std::vector<ScoredPair> scored(pairs.size());
    auto score_one = [&](std::size_t i) {
        ad::Graph<S> g(false);
        const LabeledPair& pair = pairs[i];
        auto fwd = forward_pair_cached(g, state, codebook, corpus.vocab,
                                       *trees.at(pair.patient_index),
                                       corpus.criteria[pair.criterion_index], beam_width);
        scored[i] = {pair, argmax_class(fwd.yhat)};
    };

    if (workers <= 1) {
        for (std::size_t i = 0; i < pairs.size(); ++i) score_one(i);
    } else {
        std::atomic<std::size_t> cursor{0};
        std::mutex failure_mutex;
        std::exception_ptr failure;
        auto worker = [&] {
            while (true) {
                const std::size_t i = cursor.fetch_add(1);
                if (i >= pairs.size()) return;
                try {
                    score_one(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    return;
                }
            }
        };
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
        if (failure) std::rethrow_exception(failure);
    }
    return scored;
}

struct EpochStats {
    std::size_t epoch;
    double train_loss;
    double val_accuracy;
    std::size_t beam_width;
};

struct TrainResult {
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0;
    double best_val_accuracy = 0.0;
    std::size_t zero_norm_warnings = 0;
};

// History file: one `epoch,train_loss,val_accuracy,beam_width` row per epoch.
inline void write_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("history: cannot open '" + path + "' for writing");
    out << "epoch,train_loss,val_accuracy,beam_width\n";
    char buf[96];
    for (const auto& row : history) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%zu\n", row.epoch, row.train_loss,
                      row.val_accuracy, row.beam_width);
        out << buf;
    }
}

// The optimization loop. Per epoch: seeded shuffle, mean-loss batches with
// per-pair graphs (trees rebuilt every forward pass), one Adam step per
// batch, then a frozen val pass at the inference beam width. The parameters
// with the best val accuracy are restored into `state` before returning.
// With workers > 1, forward passes run in parallel and gradient accumulation
// is serialized; single-worker runs are bitwise deterministic.
template <typename S>
TrainResult train(ModelState<S>& state, const CodeBook& codebook, const Corpus& corpus,
                  const DatasetSplit& split, const TrainConfig& config,
                  std::ostream* progress = nullptr) {
    config.validate();
    if (split.train.empty()) throw std::invalid_argument("train: empty training set");

    AdamOptimizer<S> optimizer(state.named(), config);
    std::atomic<std::size_t> zero_norm_warnings{0};

    TrainResult result;
    std::vector<std::vector<S>> best_values;
    auto snapshot_params = [&]() {
        best_values.clear();
        for (auto& [name, t] : state.named()) {
            best_values.emplace_back(t.values().begin(), t.values().end());
        }
    };

    std::vector<std::size_t> order(split.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const std::size_t width = beam_schedule(epoch, config);
        Rng epoch_rng(derive_seed(config.seed, epoch));
        epoch_rng.shuffle(order);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            const double batch_n = static_cast<double>(stop - start);
            optimizer.zero_grad();

            auto run_pair = [&](std::size_t oi, std::mutex* accumulate_mutex) {
                const LabeledPair& pair = split.train[order[oi]];
                ad::Graph<S> g;
                auto loss = pair_loss(g, state, codebook, corpus,
                                      corpus.patients[pair.patient_index],
                                      corpus.criteria[pair.criterion_index], pair.pair_kind,
                                      pair.label, width, &zero_norm_warnings);
                const double value = static_cast<double>(loss.scalar_value());
                if (!std::isfinite(value)) {
                    throw TrainingDivergedError(
                        "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                        std::to_string(start / config.batch_size) + ", pair " +
                        std::to_string(order[oi]) + " (loss=" + std::to_string(value) + ")");
                }
                auto scaled = ad::scale(g, loss, static_cast<S>(1.0 / batch_n));
                if (accumulate_mutex) {
                    std::lock_guard lock(*accumulate_mutex);
                    g.backward(scaled);
                } else {
                    g.backward(scaled);
                }
                return value;
            };

            if (config.workers <= 1) {
                for (std::size_t oi = start; oi < stop; ++oi) loss_sum += run_pair(oi, nullptr);
            } else {
                std::mutex accumulate_mutex;
                std::mutex state_mutex;
                std::exception_ptr failure;
                std::atomic<std::size_t> cursor{start};
                auto worker = [&] {
                    while (true) {
                        const std::size_t oi = cursor.fetch_add(1);
                        if (oi >= stop) return;
                        try {
                            const double v = run_pair(oi, &accumulate_mutex);
                            std::lock_guard lock(state_mutex);
                            loss_sum += v;
                        } catch (...) {
                            std::lock_guard lock(state_mutex);
                            if (!failure) failure = std::current_exception();
                            return;
                        }
                    }
                };
                std::vector<std::thread> threads;
                for (std::size_t w = 0; w < config.workers; ++w) threads.emplace_back(worker);
                for (auto& t : threads) t.join();
                if (failure) std::rethrow_exception(failure);
            }
            optimizer.step();
        }

        const double train_loss = loss_sum / static_cast<double>(order.size());
        const double val_accuracy =
            split.val.empty()
                ? 0.0
                : evaluate_accuracy(state, codebook, corpus, split.val, config.beam_end);
        result.history.push_back({epoch, train_loss, val_accuracy, width});
        if (progress) {
            (*progress) << "epoch " << epoch << ": loss " << train_loss << ", val_acc "
                        << val_accuracy << ", beam " << width << '\n';
        }
        if (best_values.empty() || val_accuracy > result.best_val_accuracy) {
            result.best_val_accuracy = val_accuracy;
            result.best_epoch = epoch;
            snapshot_params();
        }
    }

    // Restore the best-val parameters.
    std::size_t k = 0;
    for (auto& [name, t] : state.named()) {
        std::copy(best_values[k].begin(), best_values[k].end(), t.values_mut().begin());
        ++k;
    }
    result.zero_norm_warnings = zero_norm_warnings.load();
    return result;
}

}  // namespace treematch
