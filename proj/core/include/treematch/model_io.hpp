#pragma once

#include <cstdio>
#include <map>
#include <string>

#include "treematch/checkpoint.hpp"
#include "treematch/matcher_model.hpp"

namespace treematch {

// Model persistence on top of the checkpoint container. The manifest meta
// carries everything needed to rebuild the parameter shapes plus free-form
// entries from the caller (split seed, embedder settings, val accuracy...).

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline std::map<std::string, std::string> config_meta(const ModelConfig& c) {
    return {
        {"n_v", std::to_string(c.n_v)},
        {"n_c", std::to_string(c.n_c)},
        {"n_s", std::to_string(c.n_s)},
        {"n_w", std::to_string(c.n_w)},
        {"n_m", std::to_string(c.n_m)},
        {"n_e", std::to_string(c.n_e)},
        {"attention_heads", std::to_string(c.attention_heads)},
        {"encoder_layers", std::to_string(c.encoder_layers)},
        {"head_hidden", std::to_string(c.head_hidden)},
        {"beam_infer", std::to_string(c.beam_infer)},
        {"learning_rate", detail::fmt_double(c.learning_rate)},
        {"alpha", detail::fmt_double(c.alpha)},
        {"lambda", detail::fmt_double(c.lambda)},
    };
}

inline ModelConfig config_from_meta(const std::map<std::string, std::string>& meta) {
    ModelConfig c;
    auto get = [&](const char* key) -> const std::string& {
        auto it = meta.find(key);
        if (it == meta.end()) throw FormatError(std::string("checkpoint meta missing '") + key + "'");
        return it->second;
    };
    c.n_v = std::stoull(get("n_v"));
    c.n_c = std::stoull(get("n_c"));
    c.n_s = std::stoull(get("n_s"));
    c.n_w = std::stoull(get("n_w"));
    c.n_m = std::stoull(get("n_m"));
    c.n_e = std::stoull(get("n_e"));
    c.attention_heads = std::stoull(get("attention_heads"));
    c.encoder_layers = std::stoull(get("encoder_layers"));
    c.head_hidden = std::stoull(get("head_hidden"));
    c.beam_infer = std::stoull(get("beam_infer"));
    c.learning_rate = std::stod(get("learning_rate"));
    c.alpha = std::stod(get("alpha"));
    c.lambda = std::stod(get("lambda"));
    return c;
}

template <typename S>
void save_model(const std::string& path, ModelState<S>& state,
                std::map<std::string, std::string> extra_meta = {}) {
    Checkpoint ckpt;
    ckpt.meta = config_meta(state.config);
    ckpt.meta["dtype"] = dtype_traits<S>::name;
    for (auto& [key, value] : extra_meta) ckpt.meta[key] = value;
    for (auto& [name, tensor] : state.named()) {
        ckpt.tensors.push_back(to_record(name, tensor));
    }
    save_checkpoint(path, ckpt);
}

template <typename S>
struct LoadedModel {
    ModelState<S> state;
    std::map<std::string, std::string> meta;
};

template <typename S>
LoadedModel<S> load_model(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    auto dtype = ckpt.meta.find("dtype");
    if (dtype == ckpt.meta.end() || dtype->second != dtype_traits<S>::name) {
        throw FormatError("checkpoint dtype mismatch: stored " +
                          (dtype == ckpt.meta.end() ? std::string("<none>") : dtype->second) +
                          ", requested " + dtype_traits<S>::name);
    }
    LoadedModel<S> loaded{ModelState<S>::init(config_from_meta(ckpt.meta), 0), ckpt.meta};
    for (auto& [name, tensor] : loaded.state.named()) {
        const TensorRecord* rec = ckpt.find(name);
        if (!rec) throw FormatError("checkpoint missing tensor '" + name + "'");
        if (rec->shape != tensor.shape()) {
            throw FormatError("checkpoint tensor '" + name + "' has shape mismatch");
        }
        auto restored = from_record<S>(*rec);
        std::copy(restored.values().begin(), restored.values().end(),
                  tensor.values_mut().begin());
    }
    return loaded;
}

}  // namespace treematch
