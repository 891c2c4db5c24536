#pragma once

#include <bit>
#include <cstddef>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "treematch/tensor.hpp"

namespace treematch {

// Container file for named value buffers: a magic tag, a JSON manifest
// (name -> shape, dtype, byte offset) and the raw little-endian buffers.
// Round-trips are bit-exact.

struct TensorRecord {
    std::string name;
    std::string dtype;  // "f32" | "f64"
    std::vector<std::size_t> shape;
    std::vector<std::byte> data;
};

struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::vector<TensorRecord> tensors;

    const TensorRecord* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

template <typename S>
struct dtype_traits;

template <>
struct dtype_traits<float> {
    static constexpr const char* name = "f32";
};

template <>
struct dtype_traits<double> {
    static constexpr const char* name = "f64";
};

static_assert(std::endian::native == std::endian::little,
              "checkpoint buffers are stored little-endian; big-endian hosts are unsupported");

template <typename S>
TensorRecord to_record(std::string name, const ad::Tensor<S>& t) {
    TensorRecord rec;
    rec.name = std::move(name);
    rec.dtype = dtype_traits<S>::name;
    rec.shape = t.shape();
    rec.data.resize(t.numel() * sizeof(S));
    std::memcpy(rec.data.data(), t.values().data(), rec.data.size());
    return rec;
}

template <typename S>
ad::Tensor<S> from_record(const TensorRecord& rec, bool requires_grad = false) {
    if (rec.dtype != dtype_traits<S>::name) {
        throw std::invalid_argument("tensor '" + rec.name + "' has dtype " + rec.dtype +
                                    ", expected " + dtype_traits<S>::name);
    }
    std::vector<S> values(rec.data.size() / sizeof(S));
    std::memcpy(values.data(), rec.data.data(), rec.data.size());
    return ad::Tensor<S>::from_values(rec.shape, std::move(values), requires_grad);
}

}  // namespace treematch
