#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lcmfuse/common.hpp"

namespace lcmfuse::weights {

// Dense row-major float32 tensor. This is the unit of persistence; model
// internals compute in double and convert at this boundary.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<int64_t> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {}

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return n;
    }
};

bool bitwise_equal(const Tensor& a, const Tensor& b);

// Named tensor map plus string metadata; immutable by convention after load.
struct TensorContainer {
    std::map<std::string, Tensor> entries;
    std::map<std::string, std::string> metadata;

    bool has(const std::string& name) const { return entries.count(name) != 0; }
    const Tensor& at(const std::string& name) const;
};

bool bitwise_equal(const TensorContainer& a, const TensorContainer& b);

enum class ContainerErrorKind {
    MalformedHeader,
    MalformedManifest,
    DuplicateName,
    TruncatedData,
    ShapeMismatch,
    BadLayout,
    Io,
};

class ContainerError : public Error {
public:
    ContainerError(ContainerErrorKind kind, std::string entry, const std::string& msg)
        : Error(msg), kind_(kind), entry_(std::move(entry)) {}
    ContainerErrorKind kind() const { return kind_; }
    const std::string& entry() const { return entry_; }

private:
    ContainerErrorKind kind_;
    std::string entry_;
};

// Flat container format: 8-byte little-endian manifest length, JSON manifest
// with "__metadata__" and per-tensor {dtype, shape, offset, nbytes}, then the
// concatenated raw float32 data region. Offsets are contiguous and ascending.
std::vector<unsigned char> serialize_container(const TensorContainer& c);
TensorContainer deserialize_container(const std::vector<unsigned char>& bytes);

void save_container(const TensorContainer& c, const std::string& path);
TensorContainer load_container(const std::string& path);

// FNV-1a digest of the canonical serialized bytes, for provenance metadata.
std::string container_digest(const TensorContainer& c);

// Validates the invariants a Tensor must satisfy inside a container.
void validate_tensor(const std::string& name, const Tensor& t);

}  // namespace lcmfuse::weights
