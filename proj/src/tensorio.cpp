#include "zklora/tensorio.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>

namespace zklora {

namespace {

constexpr char kMagic[4] = {'Z', 'K', 'L', 'T'};
constexpr uint16_t kVersion = 1;

void put_u16_le(Bytes& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32_le(Bytes& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
}

uint16_t get_u16_le(const uint8_t* p) {
    return static_cast<uint16_t>(p[0] | (uint16_t(p[1]) << 8));
}

uint32_t get_u32_le(const uint8_t* p) {
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
        v = (v << 8) | p[i];
    }
    return v;
}

void put_u32_be(Bytes& out, uint32_t v) {
    for (int i = 3; i >= 0; --i) {
        out.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
}

uint32_t get_u32_be(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) |
           (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void atomic_write(const std::string& path, const Bytes& bytes) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(ErrorKind::IoError, "cannot open for write: " + tmp);
        }
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw Error(ErrorKind::IoError, "write failed: " + tmp);
        }
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw Error(ErrorKind::IoError, "rename failed: " + path);
    }
}

Bytes read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::IoError, "cannot open: " + path);
    }
    in.seekg(0, std::ios::end);
    auto size = in.tellg();
    in.seekg(0, std::ios::beg);
    Bytes bytes(static_cast<size_t>(size));
    in.read(reinterpret_cast<char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!in) {
        throw Error(ErrorKind::IoError, "read failed: " + path);
    }
    return bytes;
}

}  // namespace

size_t Tensor::element_count() const {
    size_t count = 1;
    for (uint32_t s : shape) {
        count *= s;
    }
    return count;
}

size_t Tensor::dtype_size() const {
    if (dtype == "f32") {
        return 4;
    }
    if (dtype == "i64") {
        return 8;
    }
    throw Error(ErrorKind::CorruptHeader, "unknown dtype: " + dtype);
}

Tensor tensor_from_matrix(const Matrix& m) {
    Tensor t;
    t.dtype = "f32";
    t.shape = {static_cast<uint32_t>(m.rows), static_cast<uint32_t>(m.cols)};
    t.payload.resize(m.data.size() * 4);
    for (size_t i = 0; i < m.data.size(); ++i) {
        float f = static_cast<float>(m.data[i]);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        for (int b = 0; b < 4; ++b) {
            t.payload[i * 4 + b] = static_cast<uint8_t>(bits >> (8 * b));
        }
    }
    return t;
}

Tensor tensor_from_quantized(const QuantizedMatrix& q) {
    Tensor t;
    t.dtype = "i64";
    t.shape = {q.rows, q.cols};
    t.payload.resize(q.entries.size() * 8);
    for (size_t i = 0; i < q.entries.size(); ++i) {
        uint64_t bits = static_cast<uint64_t>(q.entries[i]);
        for (int b = 0; b < 8; ++b) {
            t.payload[i * 8 + b] = static_cast<uint8_t>(bits >> (8 * b));
        }
    }
    return t;
}

Matrix matrix_from_tensor(const Tensor& t) {
    if (t.dtype != "f32" || t.shape.size() != 2) {
        throw Error(ErrorKind::DimMismatch, "expected rank-2 f32 tensor");
    }
    Matrix m(t.shape[0], t.shape[1]);
    if (t.payload.size() != m.data.size() * 4) {
        throw Error(ErrorKind::BoundsViolation, "tensor payload size mismatch");
    }
    for (size_t i = 0; i < m.data.size(); ++i) {
        uint32_t bits = 0;
        for (int b = 3; b >= 0; --b) {
            bits = (bits << 8) | t.payload[i * 4 + b];
        }
        float f;
        std::memcpy(&f, &bits, 4);
        m.data[i] = static_cast<double>(f);
    }
    return m;
}

QuantizedMatrix quantized_from_tensor(const Tensor& t, int scale_exp) {
    if (t.dtype != "i64" || t.shape.size() != 2) {
        throw Error(ErrorKind::DimMismatch, "expected rank-2 i64 tensor");
    }
    QuantizedMatrix q(t.shape[0], t.shape[1], scale_exp);
    if (t.payload.size() != q.entries.size() * 8) {
        throw Error(ErrorKind::BoundsViolation, "tensor payload size mismatch");
    }
    for (size_t i = 0; i < q.entries.size(); ++i) {
        uint64_t bits = 0;
        for (int b = 7; b >= 0; --b) {
            bits = (bits << 8) | t.payload[i * 8 + b];
        }
        int64_t e = static_cast<int64_t>(bits);
        if (e >= kEntryLimit || e <= -kEntryLimit) {
            throw Error(ErrorKind::BoundsViolation,
                        "i64 entry exceeds the 2^62 container bound");
        }
        q.entries[i] = e;
    }
    return q;
}

void write_tensors(const std::string& path, const TensorMap& tensors) {
    nlohmann::json header = nlohmann::json::object();
    Bytes data;
    for (const auto& [name, t] : tensors) {
        if (t.payload.size() != t.element_count() * t.dtype_size()) {
            throw Error(ErrorKind::BoundsViolation,
                        "payload does not match shape: " + name);
        }
        nlohmann::json entry;
        entry["dtype"] = t.dtype;
        entry["shape"] = t.shape;
        entry["offset"] = data.size();
        entry["length"] = t.payload.size();
        entry["sha256"] = hex_encode(sha256(t.payload));
        header[name] = entry;
        data.insert(data.end(), t.payload.begin(), t.payload.end());
    }
    std::string header_text = header.dump();

    Bytes file;
    file.insert(file.end(), kMagic, kMagic + 4);
    put_u16_le(file, kVersion);
    put_u32_le(file, static_cast<uint32_t>(header_text.size()));
    file.insert(file.end(), header_text.begin(), header_text.end());
    file.insert(file.end(), data.begin(), data.end());
    atomic_write(path, file);
}

TensorMap read_tensors(const std::string& path) {
    Bytes file = read_file(path);
    if (file.size() < 10 || std::memcmp(file.data(), kMagic, 4) != 0) {
        throw Error(ErrorKind::BadMagic, "not a ZKLT file: " + path);
    }
    if (get_u16_le(file.data() + 4) != kVersion) {
        throw Error(ErrorKind::VersionUnsupported, "unsupported ZKLT version");
    }
    uint32_t header_len = get_u32_le(file.data() + 6);
    if (size_t(10) + header_len > file.size()) {
        throw Error(ErrorKind::CorruptHeader, "header overruns file");
    }
    nlohmann::json header = nlohmann::json::parse(
        file.begin() + 10, file.begin() + 10 + header_len, nullptr, false);
    if (header.is_discarded() || !header.is_object()) {
        throw Error(ErrorKind::CorruptHeader, "header is not a JSON object");
    }
    const size_t data_begin = 10 + header_len;
    const size_t data_size = file.size() - data_begin;

    TensorMap out;
    std::vector<std::pair<uint64_t, uint64_t>> extents;
    for (const auto& [name, entry] : header.items()) {
        Tensor t;
        try {
            t.dtype = entry.at("dtype").get<std::string>();
            t.shape = entry.at("shape").get<std::vector<uint32_t>>();
            uint64_t offset = entry.at("offset").get<uint64_t>();
            uint64_t length = entry.at("length").get<uint64_t>();
            if (length != t.element_count() * t.dtype_size()) {
                throw Error(ErrorKind::CorruptHeader,
                            "length does not match shape: " + name);
            }
            if (offset > data_size || length > data_size - offset) {
                throw Error(ErrorKind::BoundsViolation,
                            "tensor extent out of bounds: " + name);
            }
            for (const auto& [o, l] : extents) {
                if (offset < o + l && o < offset + length) {
                    throw Error(ErrorKind::BoundsViolation,
                                "overlapping tensor extents: " + name);
                }
            }
            extents.emplace_back(offset, length);
            t.payload.assign(file.begin() + data_begin + offset,
                             file.begin() + data_begin + offset + length);
            auto digest = hex_encode(sha256(t.payload));
            if (digest != entry.at("sha256").get<std::string>()) {
                throw Error(ErrorKind::BoundsViolation,
                            "payload digest mismatch: " + name);
            }
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::CorruptHeader,
                        std::string("bad tensor header: ") + e.what());
        }
        out.emplace(name, std::move(t));
    }
    return out;
}

Bytes encode_wire_tensor(const Tensor& t) {
    Bytes out;
    if (t.dtype == "f32") {
        out.push_back(0);
    } else if (t.dtype == "i64") {
        out.push_back(1);
    } else {
        throw Error(ErrorKind::CorruptHeader, "unknown dtype: " + t.dtype);
    }
    if (t.shape.size() > 255) {
        throw Error(ErrorKind::BoundsViolation, "tensor rank too large");
    }
    out.push_back(static_cast<uint8_t>(t.shape.size()));
    for (uint32_t dim : t.shape) {
        put_u32_be(out, dim);
    }
    if (t.payload.size() != t.element_count() * t.dtype_size()) {
        throw Error(ErrorKind::BoundsViolation, "payload size mismatch");
    }
    out.insert(out.end(), t.payload.begin(), t.payload.end());
    return out;
}

Tensor decode_wire_tensor(std::span<const uint8_t> data, size_t* consumed) {
    if (data.size() < 2) {
        throw Error(ErrorKind::ProtocolError, "truncated tensor");
    }
    Tensor t;
    switch (data[0]) {
        case 0: t.dtype = "f32"; break;
        case 1: t.dtype = "i64"; break;
        default:
            throw Error(ErrorKind::ProtocolError, "unknown tensor dtype byte");
    }
    uint8_t rank = data[1];
    size_t pos = 2;
    if (data.size() < pos + size_t(rank) * 4) {
        throw Error(ErrorKind::ProtocolError, "truncated tensor dims");
    }
    uint64_t count = 1;
    for (uint8_t i = 0; i < rank; ++i) {
        uint32_t dim = get_u32_be(data.data() + pos);
        pos += 4;
        t.shape.push_back(dim);
        count *= dim;
        if (count > (uint64_t(1) << 32)) {
            throw Error(ErrorKind::ProtocolError, "tensor too large");
        }
    }
    uint64_t payload_len = count * t.dtype_size();
    if (data.size() < pos + payload_len) {
        throw Error(ErrorKind::ProtocolError, "truncated tensor payload");
    }
    t.payload.assign(data.begin() + pos, data.begin() + pos + payload_len);
    pos += payload_len;
    if (consumed != nullptr) {
        *consumed = pos;
    }
    return t;
}

std::array<uint8_t, 32> tensor_digest(const Tensor& t) {
    Bytes encoded = encode_wire_tensor(t);
    return sha256(encoded);
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    try {
        cfg.model_id = j.at("model_id").get<std::string>();
        cfg.activation = j.at("activation").get<std::string>();
        for (const auto& layer : j.at("layers")) {
            std::vector<SlotConfig> slots;
            for (const auto& slot : layer) {
                SlotConfig s;
                s.slot = slot.at("slot").get<std::string>();
                s.n = slot.at("n").get<uint32_t>();
                s.d = slot.at("d").get<uint32_t>();
                s.weight = slot.at("weight").get<std::string>();
                slots.push_back(std::move(s));
            }
            cfg.layers.push_back(std::move(slots));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::CorruptHeader,
                    std::string("bad model config: ") + e.what());
    }
    if (cfg.activation != "relu" && cfg.activation != "none") {
        throw Error(ErrorKind::CorruptHeader,
                    "unknown activation: " + cfg.activation);
    }
    return cfg;
}

nlohmann::json ModelConfig::to_json() const {
    nlohmann::json j;
    j["model_id"] = model_id;
    j["activation"] = activation;
    j["layers"] = nlohmann::json::array();
    for (const auto& layer : layers) {
        nlohmann::json jl = nlohmann::json::array();
        for (const auto& s : layer) {
            jl.push_back({{"slot", s.slot},
                          {"n", s.n},
                          {"d", s.d},
                          {"weight", s.weight}});
        }
        j["layers"].push_back(std::move(jl));
    }
    return j;
}

void ModelConfig::validate(const TensorMap& tensors) const {
    uint32_t prev = 0;
    bool first = true;
    for (const auto& layer : layers) {
        for (const auto& s : layer) {
            if (!first && s.n != prev) {
                throw Error(ErrorKind::DimMismatch,
                            "slot dims do not chain at " + s.slot);
            }
            first = false;
            prev = s.d;
            auto it = tensors.find(s.weight);
            if (it == tensors.end()) {
                throw Error(ErrorKind::CorruptHeader,
                            "weight tensor missing: " + s.weight);
            }
            const Tensor& t = it->second;
            if (t.shape.size() != 2 || t.shape[0] != s.d || t.shape[1] != s.n) {
                throw Error(ErrorKind::DimMismatch,
                            "weight tensor shape mismatch: " + s.weight);
            }
        }
    }
    if (first) {
        throw Error(ErrorKind::CorruptHeader, "model has no slots");
    }
}

uint32_t ModelConfig::input_dim() const {
    for (const auto& layer : layers) {
        if (!layer.empty()) {
            return layer.front().n;
        }
    }
    throw Error(ErrorKind::CorruptHeader, "model has no slots");
}

uint32_t ModelConfig::output_dim() const {
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
        if (!it->empty()) {
            return it->back().d;
        }
    }
    throw Error(ErrorKind::CorruptHeader, "model has no slots");
}

const SlotConfig* ModelConfig::find_slot(const std::string& target) const {
    for (size_t l = 0; l < layers.size(); ++l) {
        for (const auto& s : layers[l]) {
            if (slot_target(l, s.slot) == target) {
                return &s;
            }
        }
    }
    return nullptr;
}

std::string slot_target(size_t layer, const std::string& slot) {
    return std::to_string(layer) + "." + slot;
}

nlohmann::json LoraModuleInfo::to_json() const {
    nlohmann::json j;
    j["module_id"] = module_id;
    j["target"] = target;
    j["n"] = n;
    j["r"] = r;
    j["d"] = d;
    j["scale_bits"] = scale_bits;
    j["weight_bound"] = weight_bound;
    j["tensor_a"] = tensor_a;
    j["tensor_b"] = tensor_b;
    return j;
}

std::string LoraModuleInfo::canonical_row() const { return to_json().dump(); }

LoraManifest LoraManifest::from_json(const nlohmann::json& j) {
    LoraManifest m;
    try {
        if (j.at("manifest_version").get<int>() != 1) {
            throw Error(ErrorKind::VersionUnsupported,
                        "unsupported manifest version");
        }
        m.model_id = j.at("model_id").get<std::string>();
        for (const auto& e : j.at("modules")) {
            LoraModuleInfo info;
            info.module_id = e.at("module_id").get<uint32_t>();
            info.target = e.at("target").get<std::string>();
            info.n = e.at("n").get<uint32_t>();
            info.r = e.at("r").get<uint32_t>();
            info.d = e.at("d").get<uint32_t>();
            info.scale_bits = e.at("scale_bits").get<int>();
            info.weight_bound = e.at("weight_bound").get<int64_t>();
            info.tensor_a = e.at("tensor_a").get<std::string>();
            info.tensor_b = e.at("tensor_b").get<std::string>();
            m.modules.push_back(std::move(info));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::CorruptHeader,
                    std::string("bad manifest: ") + e.what());
    }
    return m;
}

nlohmann::json LoraManifest::to_json() const {
    nlohmann::json j;
    j["manifest_version"] = 1;
    j["model_id"] = model_id;
    j["modules"] = nlohmann::json::array();
    for (const auto& info : modules) {
        j["modules"].push_back(info.to_json());
    }
    return j;
}

void LoraManifest::validate(const ModelConfig* config) const {
    for (size_t i = 0; i < modules.size(); ++i) {
        const auto& info = modules[i];
        if (info.module_id != i) {
            throw Error(ErrorKind::CorruptHeader,
                        "module_ids must be dense from 0 in pass order");
        }
        if (info.r < 1) {
            throw Error(ErrorKind::CorruptHeader, "module rank must be >= 1");
        }
        if (info.scale_bits < 4 || info.scale_bits > 24) {
            throw Error(ErrorKind::CorruptHeader,
                        "module scale_bits outside [4, 24]");
        }
        if (info.weight_bound < 1 || info.weight_bound >= kEntryLimit) {
            throw Error(ErrorKind::CorruptHeader,
                        "module weight_bound out of range");
        }
        for (size_t k = 0; k < i; ++k) {
            if (modules[k].target == info.target) {
                throw Error(ErrorKind::DuplicateModule,
                            "duplicate target: " + info.target);
            }
        }
        if (config != nullptr) {
            const SlotConfig* slot = config->find_slot(info.target);
            if (slot == nullptr) {
                throw Error(ErrorKind::UnknownModule,
                            "target not in model: " + info.target);
            }
            if (slot->n != info.n || slot->d != info.d) {
                throw Error(ErrorKind::DimMismatch,
                            "module dims disagree with slot " + info.target);
            }
        }
    }
}

const LoraModuleInfo* LoraManifest::find_module(uint32_t module_id) const {
    for (const auto& info : modules) {
        if (info.module_id == module_id) {
            return &info;
        }
    }
    return nullptr;
}

const LoraModuleInfo* LoraManifest::find_target(const std::string& target) const {
    for (const auto& info : modules) {
        if (info.target == target) {
            return &info;
        }
    }
    return nullptr;
}

LoraWeights load_lora_weights(const LoraModuleInfo& info,
                              const TensorMap& tensors) {
    auto ita = tensors.find(info.tensor_a);
    auto itb = tensors.find(info.tensor_b);
    if (ita == tensors.end() || itb == tensors.end()) {
        throw Error(ErrorKind::CorruptHeader,
                    "lora tensors missing for module " +
                        std::to_string(info.module_id));
    }
    LoraWeights w;
    w.a = matrix_from_tensor(ita->second);
    w.b = matrix_from_tensor(itb->second);
    if (w.a.rows != info.r || w.a.cols != info.n || w.b.rows != info.d ||
        w.b.cols != info.r) {
        throw Error(ErrorKind::DimMismatch,
                    "lora tensor dims disagree with manifest");
    }
    return w;
}

nlohmann::json read_json_file(const std::string& path) {
    Bytes bytes = read_file(path);
    nlohmann::json j = nlohmann::json::parse(bytes.begin(), bytes.end(),
                                             nullptr, false);
    if (j.is_discarded()) {
        throw Error(ErrorKind::CorruptHeader, "invalid JSON: " + path);
    }
    return j;
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::string text = j.dump(2);
    text.push_back('\n');
    Bytes bytes(text.begin(), text.end());
    atomic_write(path, bytes);
}

namespace {

// Portable uniform [-1, 1] doubles, stored at f32 precision so the value
// in memory equals the value on disk.
class UniformGen {
 public:
    explicit UniformGen(uint64_t seed) : rng_(seed) {}

    double next() {
        uint64_t bits = rng_() >> 11;  // 53 bits
        double u = static_cast<double>(bits) * (1.0 / 9007199254740992.0);
        return static_cast<double>(static_cast<float>(u * 2.0 - 1.0));
    }

    Matrix matrix(size_t rows, size_t cols) {
        Matrix m(rows, cols);
        for (double& x : m.data) {
            x = next();
        }
        return m;
    }

 private:
    std::mt19937_64 rng_;
};

}  // namespace

SyntheticModel gen_synthetic(const SynthSpec& spec) {
    if (spec.layers < 1 || spec.slots_per_layer < 1 || spec.n < 1 ||
        spec.d < 1 || spec.rank < 1) {
        throw Error(ErrorKind::OutOfRange, "synthetic dims must be positive");
    }
    UniformGen gen(spec.seed);
    SyntheticModel out;
    out.config.model_id = spec.model_id;
    out.config.activation = spec.activation;
    out.manifest.model_id = spec.model_id;

    uint32_t remaining_targets = spec.lora_targets;
    uint32_t next_module_id = 0;
    uint32_t in_dim = spec.n;
    uint32_t out_dim = spec.d;
    for (uint32_t l = 0; l < spec.layers; ++l) {
        std::vector<SlotConfig> layer;
        for (uint32_t si = 0; si < spec.slots_per_layer; ++si) {
            SlotConfig slot;
            slot.slot = "s" + std::to_string(si);
            slot.n = in_dim;
            slot.d = out_dim;
            slot.weight = "w/" + std::to_string(l) + "/" + slot.slot;
            Matrix w = gen.matrix(out_dim, in_dim);
            out.model_tensors[slot.weight] = tensor_from_matrix(w);

            if (remaining_targets > 0) {
                --remaining_targets;
                LoraModuleInfo info;
                info.module_id = next_module_id++;
                info.target = slot_target(l, slot.slot);
                info.n = in_dim;
                info.d = out_dim;
                info.r = spec.rank;
                info.scale_bits = spec.scale_bits;
                info.tensor_a = "lora/" + std::to_string(info.module_id) + "/a";
                info.tensor_b = "lora/" + std::to_string(info.module_id) + "/b";
                Matrix a = gen.matrix(spec.rank, in_dim);
                Matrix b = gen.matrix(out_dim, spec.rank);
                QuantizedMatrix aq = quantize(a, spec.scale_bits);
                QuantizedMatrix bq = quantize(b, spec.scale_bits);
                info.weight_bound = std::max<int64_t>(
                    1, std::max(max_abs_entry(aq), max_abs_entry(bq)));
                out.lora_tensors[info.tensor_a] = tensor_from_matrix(a);
                out.lora_tensors[info.tensor_b] = tensor_from_matrix(b);
                out.manifest.modules.push_back(std::move(info));
            }
            layer.push_back(std::move(slot));
            std::swap(in_dim, out_dim);
        }
        out.config.layers.push_back(std::move(layer));
    }

    out.config.validate(out.model_tensors);
    out.manifest.validate(&out.config);
    return out;
}

}  // namespace zklora
