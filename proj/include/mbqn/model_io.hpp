#pragma once

#include "mbqn/network.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <variant>

namespace mbqn {

// ===== model container =====

enum class Storage { Float32, Quantized, Planes };

std::string storage_name(Storage s);
Storage storage_from_name(std::string_view name);

/// A model in one of its three storage forms: full-precision weights,
/// odd-integer quantized weights, or packed bit planes.
struct Model {
    std::variant<FloatModel, QuantizedModel, MbnPlan> value;

    Storage storage() const { return Storage(value.index()); }
    const ModelSpec& spec() const;

    const FloatModel& as_float() const;
    const QuantizedModel& as_quantized() const;
    const MbnPlan& as_plan() const;
};

/// File layout: magic "MBQN", u32 LE format version, u64 LE JSON header
/// length, UTF-8 JSON header, zero padding to 8 bytes, one payload section
/// per layer (each zero-padded to 8 bytes), and a trailing u64 LE FNV-1a
/// checksum over everything before it. Plane payloads store the shared
/// plane length once per layer followed by the raw words of every plane,
/// so a 1-bit layer costs exactly one bit per weight.
void save_model(const Model& model, const std::string& path);
void save_model(const FloatModel& model, const std::string& path);
void save_model(const QuantizedModel& model, const std::string& path);
void save_model(const MbnPlan& plan, const std::string& path);

Model load_model(const std::string& path);

/// Raw plane bytes of one decomposed layer: rows * K * ceil(N/64) * 8.
std::size_t plane_payload_bytes(const LayerSpec& spec);

// ===== tensor container =====

/// Layout: u64 LE rank, rank u64 LE dims, then row-major f32 LE values.
struct TensorFile {
    std::vector<std::uint64_t> dims;
    std::vector<float> values;

    std::uint64_t element_count() const;
};

void write_tensor(const std::string& path, const TensorFile& tensor);
TensorFile read_tensor(const std::string& path);

/// View a tensor file as a batch of flattened samples: rank 1 and rank 3
/// are a single sample, rank 2 and rank 4 carry the batch in dim 0.
Matrix tensor_as_batch(const TensorFile& tensor);
TensorFile batch_as_tensor(const Eigen::Ref<const Matrix>& batch);

// ===== hashing =====

std::uint64_t fnv1a64(std::span<const unsigned char> bytes);

} // namespace mbqn
