#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zklora/quantizer.hpp"

namespace zklora {

// One tensor inside a ZKLT container. dtype is "f32" or "i64"; payload is
// raw little-endian row-major data.
struct Tensor {
    std::string dtype;
    std::vector<uint32_t> shape;
    Bytes payload;

    size_t element_count() const;
    size_t dtype_size() const;
};

using TensorMap = std::map<std::string, Tensor>;

Tensor tensor_from_matrix(const Matrix& m);          // f32
Tensor tensor_from_quantized(const QuantizedMatrix& q);  // i64
Matrix matrix_from_tensor(const Tensor& t);
QuantizedMatrix quantized_from_tensor(const Tensor& t, int scale_exp);

// ZKLT container: magic "ZKLT", version u16 LE, header_len u32 LE, header
// JSON (sorted keys, per-tensor sha256 of the payload), then the payload
// region. Writes are atomic (temp file + rename).
void write_tensors(const std::string& path, const TensorMap& tensors);
TensorMap read_tensors(const std::string& path);

// Serialization of one tensor for wire messages and digests:
// dtype u8 {0:f32, 1:i64} || rank u8 || dims u32 BE || raw LE payload.
Bytes encode_wire_tensor(const Tensor& t);
Tensor decode_wire_tensor(std::span<const uint8_t> data, size_t* consumed);

std::array<uint8_t, 32> tensor_digest(const Tensor& t);

// Base model: ordered layers of named linear slots; dims chain from one
// slot to the next. Optional ReLU between layers.
struct SlotConfig {
    std::string slot;
    uint32_t n = 0;  // in_dim
    uint32_t d = 0;  // out_dim
    std::string weight;
};

struct ModelConfig {
    std::string model_id;
    std::string activation;  // "relu" | "none"
    std::vector<std::vector<SlotConfig>> layers;

    static ModelConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    void validate(const TensorMap& tensors) const;

    uint32_t input_dim() const;
    uint32_t output_dim() const;
    const SlotConfig* find_slot(const std::string& target) const;
};

// "layer.slot" target path for slot s of layer l.
std::string slot_target(size_t layer, const std::string& slot);

struct LoraModuleInfo {
    uint32_t module_id = 0;
    std::string target;
    uint32_t n = 0;
    uint32_t r = 0;
    uint32_t d = 0;
    int scale_bits = 12;
    // Public cap on |quantized weight entry| for A and B; the overflow
    // bound on both sides is computed from it.
    int64_t weight_bound = 1;
    std::string tensor_a;
    std::string tensor_b;

    nlohmann::json to_json() const;
    std::string canonical_row() const;
};

struct LoraManifest {
    std::string model_id;
    std::vector<LoraModuleInfo> modules;

    static LoraManifest from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    // module_ids dense from 0 and in forward-pass order; targets resolve
    // with matching dims when a model config is given.
    void validate(const ModelConfig* config = nullptr) const;

    const LoraModuleInfo* find_module(uint32_t module_id) const;
    const LoraModuleInfo* find_target(const std::string& target) const;
};

struct LoraWeights {
    Matrix a;  // r x n
    Matrix b;  // d x r
};

// Per-module weights pulled out of a tensor map.
LoraWeights load_lora_weights(const LoraModuleInfo& info,
                              const TensorMap& tensors);

nlohmann::json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j);

struct SynthSpec {
    uint64_t seed = 1;
    std::string model_id = "synthetic";
    uint32_t layers = 1;
    uint32_t slots_per_layer = 1;
    uint32_t n = 8;   // input dim of the first slot
    uint32_t d = 8;   // output dim of the first slot
    uint32_t rank = 2;
    // Number of leading slots that get a LoRA module; UINT32_MAX = all.
    uint32_t lora_targets = UINT32_MAX;
    std::string activation = "relu";
    int scale_bits = 12;
};

struct SyntheticModel {
    ModelConfig config;
    TensorMap model_tensors;
    LoraManifest manifest;
    TensorMap lora_tensors;
};

// Deterministic synthetic model + LoRA stack, entries uniform in [-1, 1].
// When n != d the slot dims alternate (n->d, d->n, ...) so every module
// has r*(n+d) parameters.
SyntheticModel gen_synthetic(const SynthSpec& spec);

}  // namespace zklora
