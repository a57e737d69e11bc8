#pragma once

// Checkpoint directory format:
//   <dir>/manifest.json  — {"format": "...", "tensors": {name: {shape, dtype,
//                          offset, file}}} with offsets into the blob file
//   <dir>/tensors.bin    — raw little-endian IEEE-754 f32 values, row-major,
//                          concatenated in manifest order
// Round-trips are bit-exact: save -> load reproduces every byte.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mfm/nn.hpp"

namespace mfm::ckpt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written little-endian via raw memory");

inline constexpr const char* kFormatTag = "mfm-checkpoint-v1";
inline constexpr const char* kBlobFile = "tensors.bin";

struct LoadedTensor {
    Shape shape;
    std::vector<float> data;
};

using LoadedMap = std::map<std::string, LoadedTensor>;

namespace detail {

inline void write_manifest(const std::string& dir, const nlohmann::json& tensors) {
    nlohmann::json manifest;
    manifest["format"] = kFormatTag;
    manifest["tensors"] = tensors;
    std::ofstream mf(std::filesystem::path(dir) / "manifest.json");
    if (!mf) throw ConfigError("checkpoint: cannot write manifest in '" + dir + "'");
    mf << manifest.dump(2) << "\n";
}

inline void save_entries(const std::string& dir,
                         const std::vector<std::pair<std::string, const float*>>& ptrs,
                         const std::vector<std::pair<std::string, Shape>>& shapes) {
    std::filesystem::create_directories(dir);
    std::ofstream blob(std::filesystem::path(dir) / kBlobFile, std::ios::binary);
    if (!blob) throw ConfigError("checkpoint: cannot write blob in '" + dir + "'");
    nlohmann::json tensors = nlohmann::json::object();
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
        const auto& name = ptrs[i].first;
        const Shape& shape = shapes[i].second;
        const auto count = static_cast<std::uint64_t>(numel(shape));
        nlohmann::json entry;
        entry["shape"] = shape;
        entry["dtype"] = "f32";
        entry["offset"] = offset;
        entry["file"] = kBlobFile;
        tensors[name] = entry;
        blob.write(reinterpret_cast<const char*>(ptrs[i].second),
                   static_cast<std::streamsize>(count * sizeof(float)));
        offset += count * sizeof(float);
    }
    if (!blob) throw ConfigError("checkpoint: blob write failed in '" + dir + "'");
    blob.close();
    write_manifest(dir, tensors);
}

}  // namespace detail

// Save every parameter of `params` (manifest order = registry order).
inline void save(const std::string& dir, const nn::ParamMap& params) {
    std::vector<std::pair<std::string, const float*>> ptrs;
    std::vector<std::pair<std::string, Shape>> shapes;
    for (const auto& kv : params.items) {
        ptrs.emplace_back(kv.first, kv.second.data().data());
        shapes.emplace_back(kv.first, kv.second.shape());
    }
    detail::save_entries(dir, ptrs, shapes);
}

// Save an already-loaded map (used to rewrite a checkpoint after filtering).
inline void save(const std::string& dir, const LoadedMap& tensors) {
    std::vector<std::pair<std::string, const float*>> ptrs;
    std::vector<std::pair<std::string, Shape>> shapes;
    for (const auto& kv : tensors) {
        ptrs.emplace_back(kv.first, kv.second.data.data());
        shapes.emplace_back(kv.first, kv.second.shape);
    }
    detail::save_entries(dir, ptrs, shapes);
}

inline LoadedMap load(const std::string& dir) {
    const auto manifest_path = std::filesystem::path(dir) / "manifest.json";
    std::ifstream mf(manifest_path);
    if (!mf) throw ConfigError("checkpoint: no manifest at '" + manifest_path.string() + "'");
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("checkpoint: bad manifest at '" + manifest_path.string() + "': " +
                          e.what());
    }
    if (!manifest.contains("tensors") || !manifest["tensors"].is_object())
        throw ConfigError("checkpoint: manifest missing 'tensors' object");

    // All entries reference files inside the directory; open each once.
    std::map<std::string, std::vector<char>> files;
    LoadedMap out;
    for (const auto& [name, entry] : manifest["tensors"].items()) {
        const std::string file = entry.at("file").get<std::string>();
        if (!files.count(file)) {
            std::ifstream blob(std::filesystem::path(dir) / file,
                               std::ios::binary | std::ios::ate);
            if (!blob)
                throw ConfigError("checkpoint: missing blob file '" + file + "' in '" + dir +
                                  "'");
            const auto size = static_cast<std::size_t>(blob.tellg());
            blob.seekg(0);
            std::vector<char> bytes(size);
            blob.read(bytes.data(), static_cast<std::streamsize>(size));
            if (!blob) throw ConfigError("checkpoint: short read from '" + file + "'");
            files.emplace(file, std::move(bytes));
        }
        const std::string dtype = entry.at("dtype").get<std::string>();
        if (dtype != "f32")
            throw ConfigError("checkpoint: tensor '" + name + "' has unsupported dtype '" +
                              dtype + "'");
        LoadedTensor lt;
        lt.shape = entry.at("shape").get<Shape>();
        const auto count = static_cast<std::size_t>(numel(lt.shape));
        const auto offset = entry.at("offset").get<std::uint64_t>();
        const auto& bytes = files.at(file);
        if (offset + count * sizeof(float) > bytes.size())
            throw ConfigError("checkpoint: tensor '" + name + "' extends past end of '" + file +
                              "'");
        lt.data.resize(count);
        std::memcpy(lt.data.data(), bytes.data() + offset, count * sizeof(float));
        out.emplace(name, std::move(lt));
    }
    return out;
}

// Copy loaded values into an existing parameter registry. Every parameter must
// be present with a matching shape; extra tensors in `loaded` are ignored.
inline void assign(const nn::ParamMap& params, const LoadedMap& loaded) {
    for (const auto& kv : params.items) {
        auto it = loaded.find(kv.first);
        if (it == loaded.end())
            throw ConfigError("checkpoint: tensor '" + kv.first + "' not found in checkpoint");
        if (it->second.shape != kv.second.shape())
            throw ConfigError("checkpoint: tensor '" + kv.first + "' shape " +
                              shape_str(it->second.shape) + " does not match parameter shape " +
                              shape_str(kv.second.shape()));
        std::memcpy(kv.second.node->data.data(), it->second.data.data(),
                    it->second.data.size() * sizeof(float));
    }
}

// Rewrite the checkpoint at `dir` without any tensor whose name starts with
// `prefix`. Returns the number of tensors removed.
inline int strip_prefix(const std::string& dir, const std::string& prefix) {
    LoadedMap tensors = load(dir);
    int removed = 0;
    for (auto it = tensors.begin(); it != tensors.end();) {
        if (it->first.rfind(prefix, 0) == 0) {
            it = tensors.erase(it);
            ++removed;
        } else {
            ++it;
        }
    }
    save(dir, tensors);
    return removed;
}

}  // namespace mfm::ckpt
