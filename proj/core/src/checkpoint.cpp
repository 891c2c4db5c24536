#include "treematch/checkpoint.hpp"

#include <cstdint>
#include <fstream>

#include "json.hpp"
#include "treematch/errors.hpp"

namespace treematch {

namespace {

constexpr char kMagic[8] = {'T', 'M', 'C', 'K', 'P', 'T', '0', '1'};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    nlohmann::json manifest;
    manifest["meta"] = ckpt.meta;
    manifest["tensors"] = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& t : ckpt.tensors) {
        manifest["tensors"].push_back({{"name", t.name},
                                       {"dtype", t.dtype},
                                       {"shape", t.shape},
                                       {"offset", offset},
                                       {"bytes", t.data.size()}});
        offset += t.data.size();
    }
    const std::string mtext = manifest.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("checkpoint: cannot open '" + path + "' for writing");
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t mlen = mtext.size();
    out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
    for (const auto& t : ckpt.tensors) {
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size()));
    }
    if (!out) throw FormatError("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("checkpoint: cannot open '" + path + "'");

    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("checkpoint: bad magic in '" + path + "'");
    }
    std::uint64_t mlen = 0;
    in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    std::string mtext(mlen, '\0');
    in.read(mtext.data(), static_cast<std::streamsize>(mlen));
    if (!in) throw FormatError("checkpoint: truncated manifest in '" + path + "'");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mtext);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint: manifest parse error: " + std::string(e.what()));
    }

    Checkpoint ckpt;
    if (manifest.contains("meta")) {
        ckpt.meta = manifest["meta"].get<std::map<std::string, std::string>>();
    }
    const std::streampos data_start = in.tellg();
    for (const auto& entry : manifest["tensors"]) {
        TensorRecord rec;
        rec.name = entry["name"].get<std::string>();
        rec.dtype = entry["dtype"].get<std::string>();
        rec.shape = entry["shape"].get<std::vector<std::size_t>>();
        const auto offset = entry["offset"].get<std::uint64_t>();
        const auto bytes = entry["bytes"].get<std::uint64_t>();
        rec.data.resize(bytes);
        in.seekg(data_start + static_cast<std::streamoff>(offset));
        in.read(reinterpret_cast<char*>(rec.data.data()), static_cast<std::streamsize>(bytes));
        if (!in) throw FormatError("checkpoint: truncated buffer for tensor '" + rec.name + "'");
        ckpt.tensors.push_back(std::move(rec));
    }
    return ckpt;
}

}  // namespace treematch
