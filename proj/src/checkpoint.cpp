#include "bdg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "bdg/errors.hpp"

namespace bdg {

namespace {

constexpr const char* kTensorSection = "[tensors]";

struct TensorRecord {
    Shape shape;
    std::size_t offset = 0;
};

std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const RunConfig& cfg, BDGNet<float>& net) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / kManifestFile);
    std::ofstream blob(dir / kWeightsFile, std::ios::binary);
    if (!manifest || !blob) throw DataError("cannot write checkpoint in " + dir.string());

    manifest << to_text(cfg) << '\n' << kTensorSection << '\n';
    std::size_t offset = 0;
    std::vector<std::uint32_t> words;
    for (const auto& entry : net.state()) {
        const Shape& s = entry.tensor->shape();
        manifest << entry.name << ' ' << s.n << ',' << s.c << ',' << s.h << ',' << s.w << ' ' << offset << '\n';
        words.resize(entry.tensor->numel());
        std::memcpy(words.data(), entry.tensor->data(), words.size() * sizeof(float));
        for (auto& w : words) w = to_le(w);
        blob.write(reinterpret_cast<const char*>(words.data()),
                   static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
        offset += words.size();
    }
    if (!manifest || !blob) throw DataError("write failed for checkpoint in " + dir.string());
}

LoadedModel load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / kManifestFile);
    if (!manifest) throw DataError("checkpoint manifest not found in " + dir.string());

    std::string config_text;
    std::map<std::string, TensorRecord> records;
    std::string line;
    bool in_tensors = false;
    while (std::getline(manifest, line)) {
        if (!in_tensors) {
            if (line == kTensorSection) {
                in_tensors = true;
            } else {
                config_text += line + '\n';
            }
            continue;
        }
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string name, dims;
        TensorRecord rec;
        char c1 = 0, c2 = 0, c3 = 0;
        if (!(ls >> name >> dims >> rec.offset)) throw DataError("malformed tensor line: " + line);
        std::istringstream ds(dims);
        if (!(ds >> rec.shape.n >> c1 >> rec.shape.c >> c2 >> rec.shape.h >> c3 >> rec.shape.w) || !rec.shape.valid()) {
            throw DataError("malformed tensor shape: " + line);
        }
        records[name] = rec;
    }
    if (!in_tensors) throw DataError("checkpoint manifest has no tensor section: " + dir.string());

    LoadedModel out;
    try {
        out.config = parse_config(config_text);
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("checkpoint config: ") + e.what());
    }
    out.net = std::make_unique<BDGNet<float>>(out.config.network, out.config.seed);

    std::ifstream blob(dir / kWeightsFile, std::ios::binary);
    if (!blob) throw DataError("checkpoint weights not found in " + dir.string());
    std::vector<std::uint32_t> words;
    std::size_t restored = 0;
    for (auto& entry : out.net->state()) {
        const auto it = records.find(entry.name);
        if (it == records.end()) throw DataError("checkpoint lacks tensor " + entry.name);
        if (it->second.shape != entry.tensor->shape()) {
            throw DataError("shape mismatch for " + entry.name + ": stored " + it->second.shape.str() + ", expected " +
                            entry.tensor->shape().str());
        }
        words.resize(entry.tensor->numel());
        blob.seekg(static_cast<std::streamoff>(it->second.offset * sizeof(std::uint32_t)));
        blob.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
        if (!blob) throw DataError("truncated checkpoint blob at " + entry.name);
        for (auto& w : words) w = to_le(w);
        std::memcpy(entry.tensor->data(), words.data(), words.size() * sizeof(float));
        ++restored;
    }
    if (restored != records.size()) throw DataError("checkpoint holds tensors the network does not have");
    return out;
}

}  // namespace bdg
