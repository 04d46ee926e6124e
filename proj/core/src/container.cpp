#include "lcmfuse/container.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace lcmfuse::weights {

using nlohmann::json;

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape || a.data.size() != b.data.size()) return false;
    if (a.data.empty()) return true;
    return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

bool bitwise_equal(const TensorContainer& a, const TensorContainer& b) {
    if (a.metadata != b.metadata) return false;
    if (a.entries.size() != b.entries.size()) return false;
    auto ia = a.entries.begin();
    auto ib = b.entries.begin();
    for (; ia != a.entries.end(); ++ia, ++ib) {
        if (ia->first != ib->first || !bitwise_equal(ia->second, ib->second)) return false;
    }
    return true;
}

const Tensor& TensorContainer::at(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end()) {
        throw ContainerError(ContainerErrorKind::ShapeMismatch, name,
                             "container has no tensor named '" + name + "'");
    }
    return it->second;
}

void validate_tensor(const std::string& name, const Tensor& t) {
    if (t.shape.empty()) {
        throw ContainerError(ContainerErrorKind::ShapeMismatch, name,
                             "tensor '" + name + "' has an empty shape");
    }
    int64_t n = 1;
    for (int64_t d : t.shape) {
        if (d <= 0) {
            throw ContainerError(ContainerErrorKind::ShapeMismatch, name,
                                 "tensor '" + name + "' has a non-positive dimension");
        }
        n *= d;
    }
    if (n != static_cast<int64_t>(t.data.size())) {
        throw ContainerError(ContainerErrorKind::ShapeMismatch, name,
                             "tensor '" + name + "' holds " + std::to_string(t.data.size()) +
                                 " elements but its shape implies " + std::to_string(n));
    }
}

std::vector<unsigned char> serialize_container(const TensorContainer& c) {
    json manifest = json::object();
    json meta = json::object();
    for (const auto& [k, v] : c.metadata) meta[k] = v;
    manifest["__metadata__"] = meta;

    // Data region laid out in sorted-name order; std::map iteration gives it.
    int64_t offset = 0;
    for (const auto& [name, t] : c.entries) {
        validate_tensor(name, t);
        if (name == "__metadata__") {
            throw ContainerError(ContainerErrorKind::DuplicateName, name,
                                 "tensor name '__metadata__' is reserved");
        }
        int64_t nbytes = t.numel() * static_cast<int64_t>(sizeof(float));
        json entry = json::object();
        entry["dtype"] = "f32";
        entry["shape"] = t.shape;
        entry["offset"] = offset;
        entry["nbytes"] = nbytes;
        manifest[name] = entry;
        offset += nbytes;
    }

    std::string manifest_str = manifest.dump();
    uint64_t mlen = manifest_str.size();

    std::vector<unsigned char> out;
    out.reserve(8 + manifest_str.size() + static_cast<size_t>(offset));
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((mlen >> (8 * i)) & 0xff));
    out.insert(out.end(), manifest_str.begin(), manifest_str.end());
    for (const auto& [name, t] : c.entries) {
        const auto* p = reinterpret_cast<const unsigned char*>(t.data.data());
        out.insert(out.end(), p, p + t.data.size() * sizeof(float));
    }
    return out;
}

namespace {

// Tracks object keys while parsing so duplicate names are rejected instead of
// being silently collapsed by the DOM.
struct DuplicateKeyDetector {
    std::vector<std::vector<std::string>> stack;
    std::string duplicate;

    bool operator()(int /*depth*/, json::parse_event_t event, json& parsed) {
        switch (event) {
            case json::parse_event_t::object_start:
                stack.emplace_back();
                break;
            case json::parse_event_t::object_end:
                if (!stack.empty()) stack.pop_back();
                break;
            case json::parse_event_t::key: {
                if (!stack.empty() && duplicate.empty()) {
                    auto& keys = stack.back();
                    std::string k = parsed.get<std::string>();
                    if (std::find(keys.begin(), keys.end(), k) != keys.end()) {
                        duplicate = k;
                    } else {
                        keys.push_back(std::move(k));
                    }
                }
                break;
            }
            default:
                break;
        }
        return true;
    }
};

}  // namespace

TensorContainer deserialize_container(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 8) {
        throw ContainerError(ContainerErrorKind::MalformedHeader, "",
                             "container shorter than the 8-byte header");
    }
    uint64_t mlen = 0;
    for (int i = 0; i < 8; ++i) mlen |= static_cast<uint64_t>(bytes[static_cast<size_t>(i)]) << (8 * i);
    if (8 + mlen > bytes.size()) {
        throw ContainerError(ContainerErrorKind::MalformedHeader, "",
                             "manifest length " + std::to_string(mlen) + " exceeds file size");
    }

    DuplicateKeyDetector detector;
    json manifest;
    try {
        manifest = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<int64_t>(mlen),
                               std::ref(detector));
    } catch (const json::exception& e) {
        throw ContainerError(ContainerErrorKind::MalformedManifest, "",
                             std::string("manifest is not valid JSON: ") + e.what());
    }
    if (!detector.duplicate.empty()) {
        throw ContainerError(ContainerErrorKind::DuplicateName, detector.duplicate,
                             "duplicate name '" + detector.duplicate + "' in manifest");
    }
    if (!manifest.is_object()) {
        throw ContainerError(ContainerErrorKind::MalformedManifest, "", "manifest is not a JSON object");
    }
    if (!manifest.contains("__metadata__") || !manifest["__metadata__"].is_object()) {
        throw ContainerError(ContainerErrorKind::MalformedManifest, "__metadata__",
                             "manifest lacks the __metadata__ object");
    }

    TensorContainer c;
    for (const auto& [k, v] : manifest["__metadata__"].items()) {
        if (!v.is_string()) {
            throw ContainerError(ContainerErrorKind::MalformedManifest, k,
                                 "metadata value for '" + k + "' is not a string");
        }
        c.metadata[k] = v.get<std::string>();
    }

    const size_t data_begin = 8 + static_cast<size_t>(mlen);
    const int64_t data_size = static_cast<int64_t>(bytes.size() - data_begin);

    struct Entry {
        std::string name;
        std::vector<int64_t> shape;
        int64_t offset;
        int64_t nbytes;
    };
    std::vector<Entry> entries;
    for (const auto& [name, v] : manifest.items()) {
        if (name == "__metadata__") continue;
        if (!v.is_object() || !v.contains("dtype") || !v.contains("shape") || !v.contains("offset") ||
            !v.contains("nbytes")) {
            throw ContainerError(ContainerErrorKind::MalformedManifest, name,
                                 "tensor entry '" + name + "' is missing required fields");
        }
        if (v["dtype"].get<std::string>() != "f32") {
            throw ContainerError(ContainerErrorKind::MalformedManifest, name,
                                 "tensor '" + name + "' has unsupported dtype '" +
                                     v["dtype"].get<std::string>() + "'");
        }
        Entry e;
        e.name = name;
        if (!v["shape"].is_array() || v["shape"].empty()) {
            throw ContainerError(ContainerErrorKind::ShapeMismatch, name,
                                 "tensor '" + name + "' has an empty or invalid shape");
        }
        int64_t numel = 1;
        for (const auto& d : v["shape"]) {
            int64_t dim = d.get<int64_t>();
            if (dim <= 0) {
                throw ContainerError(ContainerErrorKind::ShapeMismatch, name,
                                     "tensor '" + name + "' has a non-positive dimension");
            }
            e.shape.push_back(dim);
            numel *= dim;
        }
        e.offset = v["offset"].get<int64_t>();
        e.nbytes = v["nbytes"].get<int64_t>();
        if (e.nbytes != numel * static_cast<int64_t>(sizeof(float))) {
            throw ContainerError(ContainerErrorKind::ShapeMismatch, name,
                                 "tensor '" + name + "' declares " + std::to_string(e.nbytes) +
                                     " bytes but its shape implies " +
                                     std::to_string(numel * static_cast<int64_t>(sizeof(float))));
        }
        if (e.offset < 0) {
            throw ContainerError(ContainerErrorKind::BadLayout, name,
                                 "tensor '" + name + "' has a negative offset");
        }
        entries.push_back(std::move(e));
    }

    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.offset < b.offset; });
    int64_t cursor = 0;
    for (const auto& e : entries) {
        if (e.offset != cursor) {
            throw ContainerError(ContainerErrorKind::BadLayout, e.name,
                                 "tensor '" + e.name + "' breaks the contiguous data layout");
        }
        cursor += e.nbytes;
        if (e.offset + e.nbytes > data_size) {
            throw ContainerError(ContainerErrorKind::TruncatedData, e.name,
                                 "data region truncated: tensor '" + e.name + "' needs bytes [" +
                                     std::to_string(e.offset) + ", " + std::to_string(e.offset + e.nbytes) +
                                     ") but only " + std::to_string(data_size) + " are present");
        }
    }
    if (cursor != data_size) {
        throw ContainerError(ContainerErrorKind::BadLayout, "",
                             "data region has " + std::to_string(data_size - cursor) + " trailing bytes");
    }

    for (const auto& e : entries) {
        Tensor t;
        t.shape = e.shape;
        t.data.resize(static_cast<size_t>(e.nbytes / static_cast<int64_t>(sizeof(float))));
        std::memcpy(t.data.data(), bytes.data() + data_begin + static_cast<size_t>(e.offset),
                    static_cast<size_t>(e.nbytes));
        c.entries.emplace(e.name, std::move(t));
    }
    return c;
}

void save_container(const TensorContainer& c, const std::string& path) {
    auto bytes = serialize_container(c);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw ContainerError(ContainerErrorKind::Io, "", "cannot open '" + path + "' for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw ContainerError(ContainerErrorKind::Io, "", "short write to '" + path + "'");
    }
}

TensorContainer load_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ContainerError(ContainerErrorKind::Io, "", "cannot open '" + path + "' for reading");
    }
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_container(bytes);
}

std::string container_digest(const TensorContainer& c) {
    auto bytes = serialize_container(c);
    return to_hex(fnv1a64(bytes.data(), bytes.size()));
}

}  // namespace lcmfuse::weights
