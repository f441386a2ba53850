#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <random>
#include <string>

#include "doctest.h"
#include "helpers.hpp"
#include "zklora/tensorio.hpp"

using namespace zklora;

namespace {

// In-place byte patch of a written file.
void patch_file(const std::string& path, size_t offset,
                const std::string& bytes) {
    std::string data = testutil::slurp(path);
    REQUIRE(offset + bytes.size() <= data.size());
    data.replace(offset, bytes.size(), bytes);
    testutil::spit(path, data);
}

// Replaces the first occurrence of `from` (same length as `to`).
void patch_substr(const std::string& path, const std::string& from,
                  const std::string& to) {
    REQUIRE(from.size() == to.size());
    std::string data = testutil::slurp(path);
    size_t pos = data.find(from);
    REQUIRE(pos != std::string::npos);
    data.replace(pos, from.size(), to);
    testutil::spit(path, data);
}

ErrorKind read_kind(const std::string& path) {
    try {
        read_tensors(path);
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("read_tensors accepted a corrupted file");
    return ErrorKind::Internal;
}

TensorMap sample_map(uint64_t seed) {
    std::mt19937_64 rng(seed);
    TensorMap map;
    map["alpha"] = tensor_from_matrix(testutil::rand_mat(rng, 3, 5));
    map["beta"] = tensor_from_quantized(testutil::rand_q(rng, 4, 2, 1 << 20));
    map["gamma"] = tensor_from_matrix(testutil::rand_mat(rng, 1, 7));
    return map;
}

}  // namespace

TEST_CASE("tensor/matrix conversions roundtrip") {
    std::mt19937_64 rng(11);
    Matrix m = testutil::rand_mat(rng, 6, 4, 2.0);
    Tensor t = tensor_from_matrix(m);
    CHECK(t.dtype == "f32");
    CHECK(t.shape == std::vector<uint32_t>{6, 4});
    CHECK(t.payload.size() == 6 * 4 * 4);
    Matrix back = matrix_from_tensor(t);
    for (size_t i = 0; i < m.data.size(); ++i) {
        CHECK(back.data[i] == double(float(m.data[i])));
    }

    QuantizedMatrix q = testutil::rand_q(rng, 5, 3, int64_t(1) << 40, 3);
    Tensor tq = tensor_from_quantized(q);
    CHECK(tq.dtype == "i64");
    QuantizedMatrix qback = quantized_from_tensor(tq, 3);
    CHECK(qback == q);

    CHECK_THROWS_AS(matrix_from_tensor(tq), Error);
    CHECK_THROWS_AS(quantized_from_tensor(t, 1), Error);
    Tensor bad = t;
    bad.payload.pop_back();
    CHECK_THROWS_AS(matrix_from_tensor(bad), Error);
}

TEST_CASE("zklt files roundtrip and are byte-deterministic") {
    testutil::TempDir dir("zklt");
    TensorMap map = sample_map(1);
    write_tensors(dir.sub("a.zklt"), map);
    TensorMap back = read_tensors(dir.sub("a.zklt"));
    REQUIRE(back.size() == map.size());
    for (const auto& [name, t] : map) {
        REQUIRE(back.count(name) == 1);
        CHECK(back[name].dtype == t.dtype);
        CHECK(back[name].shape == t.shape);
        CHECK(back[name].payload == t.payload);
    }

    write_tensors(dir.sub("b.zklt"), map);
    CHECK(testutil::slurp(dir.sub("a.zklt")) ==
          testutil::slurp(dir.sub("b.zklt")));

    write_tensors(dir.sub("empty.zklt"), {});
    CHECK(read_tensors(dir.sub("empty.zklt")).empty());
}

TEST_CASE("zklt corruption is detected field by field") {
    testutil::TempDir dir("zklt-corrupt");
    const std::string path = dir.sub("t.zklt");
    TensorMap map = sample_map(2);

    write_tensors(path, map);
    patch_file(path, 0, "XKLT");
    CHECK(read_kind(path) == ErrorKind::BadMagic);

    write_tensors(path, map);
    patch_file(path, 4, std::string("\x09", 1));
    CHECK(read_kind(path) == ErrorKind::VersionUnsupported);

    write_tensors(path, map);
    patch_file(path, 6, std::string("\xff\xff\xff\x7f", 4));
    CHECK(read_kind(path) == ErrorKind::CorruptHeader);  // header overruns

    write_tensors(path, map);
    patch_file(path, 6, std::string("\x01\x00\x00\x00", 4));
    CHECK(read_kind(path) == ErrorKind::CorruptHeader);  // not a JSON object

    // Flip one payload byte: per-tensor digest catches it.
    {
        write_tensors(path, map);
        std::string data = testutil::slurp(path);
        data.back() = char(data.back() ^ 0x01);
        testutil::spit(path, data);
        CHECK(read_kind(path) == ErrorKind::BoundsViolation);
    }

    // "alpha" sits at offset 0; pointing it past the end breaks bounds.
    write_tensors(path, map);
    patch_substr(path, "\"offset\":0", "\"offset\":9");
    CHECK(read_kind(path) == ErrorKind::BoundsViolation);

    // Truncated payload region.
    {
        write_tensors(path, map);
        std::string data = testutil::slurp(path);
        testutil::spit(path, data.substr(0, data.size() - 3));
        CHECK(read_kind(path) == ErrorKind::BoundsViolation);
    }

    CHECK_THROWS_AS(read_tensors(dir.sub("missing.zklt")), Error);
}

TEST_CASE("zklt rejects overlapping tensor extents") {
    testutil::TempDir dir("zklt-overlap");
    const std::string path = dir.sub("t.zklt");
    TensorMap map;
    QuantizedMatrix one(1, 1, 1);
    one.at(0, 0) = 1;
    QuantizedMatrix two(1, 1, 1);
    two.at(0, 0) = 2;
    map["a"] = tensor_from_quantized(one);
    map["b"] = tensor_from_quantized(two);
    write_tensors(path, map);
    // "b" starts at offset 8; moving it onto "a" overlaps the extents.
    patch_substr(path, "\"offset\":8", "\"offset\":0");
    CHECK(read_kind(path) == ErrorKind::BoundsViolation);
}

TEST_CASE("wire tensor encoding roundtrips with exact consumption") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor t;
        if (trial % 2 == 0) {
            t = tensor_from_matrix(testutil::rand_mat(
                rng, 1 + trial % 5, 1 + trial % 7));
        } else {
            t = tensor_from_quantized(testutil::rand_q(
                rng, 1 + trial % 4, 1 + trial % 6, int64_t(1) << 30));
        }
        Bytes enc = encode_wire_tensor(t);
        Bytes padded = enc;
        padded.push_back(0xAB);
        size_t consumed = 0;
        Tensor dec = decode_wire_tensor(padded, &consumed);
        CHECK(consumed == enc.size());
        CHECK(dec.dtype == t.dtype);
        CHECK(dec.shape == t.shape);
        CHECK(dec.payload == t.payload);
    }
}

TEST_CASE("wire tensor decode rejects malformed input") {
    std::mt19937_64 seed_rng(4);
    Tensor t = tensor_from_quantized(testutil::rand_q(seed_rng, 2, 2, 100));
    Bytes enc = encode_wire_tensor(t);

    auto kind_of = [](Bytes b) {
        try {
            decode_wire_tensor(b, nullptr);
        } catch (const Error& e) {
            return e.kind();
        }
        return ErrorKind::Internal;
    };

    CHECK(kind_of(Bytes{}) == ErrorKind::ProtocolError);
    CHECK(kind_of(Bytes{0}) == ErrorKind::ProtocolError);
    Bytes bad_dtype = enc;
    bad_dtype[0] = 7;
    CHECK(kind_of(bad_dtype) == ErrorKind::ProtocolError);
    Bytes short_dims(enc.begin(), enc.begin() + 5);
    CHECK(kind_of(short_dims) == ErrorKind::ProtocolError);
    Bytes short_payload(enc.begin(), enc.end() - 1);
    CHECK(kind_of(short_payload) == ErrorKind::ProtocolError);
    // 2^17 x 2^17 elements crosses the 2^32 element limit.
    Bytes huge{1, 2, 0, 2, 0, 0, 0, 2, 0, 0};
    CHECK(kind_of(huge) == ErrorKind::ProtocolError);

    // Arbitrary mutations either decode or raise zklora::Error.
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 1000; ++trial) {
        Bytes fuzzed = enc;
        size_t flips = 1 + rng() % 4;
        for (size_t i = 0; i < flips; ++i) {
            fuzzed[rng() % fuzzed.size()] ^= uint8_t(1 + rng() % 255);
        }
        if (rng() % 4 == 0) {
            fuzzed.resize(rng() % (fuzzed.size() + 1));
        }
        try {
            decode_wire_tensor(fuzzed, nullptr);
        } catch (const Error&) {
        }
    }
}

TEST_CASE("tensor digest binds dtype, shape, and payload") {
    std::mt19937_64 rng(6);
    QuantizedMatrix q = testutil::rand_q(rng, 2, 3, 1000);
    Tensor t = tensor_from_quantized(q);
    auto base = tensor_digest(t);
    CHECK(base == tensor_digest(t));

    Tensor reshaped = t;
    reshaped.shape = {3, 2};
    CHECK(tensor_digest(reshaped) != base);

    Tensor flipped = t;
    flipped.payload[0] ^= 1;
    CHECK(tensor_digest(flipped) != base);

    QuantizedMatrix q2 = q;
    q2.at(0, 0) += 1;
    CHECK(tensor_digest(tensor_from_quantized(q2)) != base);
}

TEST_CASE("model config json roundtrip and validation") {
    SynthSpec spec;
    spec.seed = 7;
    spec.layers = 2;
    spec.slots_per_layer = 2;
    spec.n = 4;
    spec.d = 6;
    spec.rank = 2;
    SyntheticModel model = gen_synthetic(spec);

    ModelConfig cfg = ModelConfig::from_json(model.config.to_json());
    CHECK(cfg.model_id == model.config.model_id);
    CHECK(cfg.layers.size() == 2);
    CHECK(cfg.input_dim() == 4);
    cfg.validate(model.model_tensors);

    CHECK(cfg.find_slot("0.s1") != nullptr);
    CHECK(cfg.find_slot("0.s1")->slot == "s1");
    CHECK(cfg.find_slot("9.s0") == nullptr);
    CHECK(slot_target(0, "s0") == "0.s0");
    CHECK(slot_target(3, "q") == "3.q");

    TensorMap missing = model.model_tensors;
    missing.erase(missing.begin());
    CHECK_THROWS_AS(cfg.validate(missing), Error);

    ModelConfig broken = cfg;
    broken.layers[1][0].n += 1;  // no longer chains
    CHECK_THROWS_AS(broken.validate(model.model_tensors), Error);

    nlohmann::json bad = model.config.to_json();
    bad["activation"] = "tanh";
    CHECK_THROWS_AS(ModelConfig::from_json(bad), Error);
    CHECK_THROWS_AS(ModelConfig::from_json(nlohmann::json::array()), Error);
}

TEST_CASE("manifest json roundtrip and validation kinds") {
    SynthSpec spec;
    spec.seed = 8;
    spec.layers = 1;
    spec.slots_per_layer = 3;
    spec.n = 4;
    spec.d = 4;
    spec.rank = 2;
    SyntheticModel model = gen_synthetic(spec);

    LoraManifest m = LoraManifest::from_json(model.manifest.to_json());
    REQUIRE(m.modules.size() == 3);
    CHECK(m.modules[1].canonical_row() ==
          model.manifest.modules[1].canonical_row());
    m.validate(&model.config);
    m.validate(nullptr);

    CHECK(m.find_module(2) != nullptr);
    CHECK(m.find_module(3) == nullptr);
    CHECK(m.find_target("0.s2") != nullptr);
    CHECK(m.find_target("5.s0") == nullptr);

    auto kind_of = [&](LoraManifest broken, const ModelConfig* cfg) {
        try {
            broken.validate(cfg);
        } catch (const Error& e) {
            return e.kind();
        }
        return ErrorKind::Internal;
    };

    LoraManifest gap = m;
    gap.modules[1].module_id = 7;
    CHECK(kind_of(gap, nullptr) == ErrorKind::CorruptHeader);

    LoraManifest dup = m;
    dup.modules[1].target = dup.modules[0].target;
    CHECK(kind_of(dup, nullptr) == ErrorKind::DuplicateModule);

    LoraManifest unknown = m;
    unknown.modules[2].target = "4.s9";
    CHECK(kind_of(unknown, &model.config) == ErrorKind::UnknownModule);

    LoraManifest dims = m;
    dims.modules[0].n += 1;
    CHECK(kind_of(dims, &model.config) == ErrorKind::DimMismatch);

    LoraManifest rank0 = m;
    rank0.modules[0].r = 0;
    CHECK(kind_of(rank0, nullptr) == ErrorKind::CorruptHeader);

    LoraManifest scale = m;
    scale.modules[0].scale_bits = 25;
    CHECK(kind_of(scale, nullptr) == ErrorKind::CorruptHeader);

    LoraManifest bound = m;
    bound.modules[0].weight_bound = 0;
    CHECK(kind_of(bound, nullptr) == ErrorKind::CorruptHeader);

    nlohmann::json bad = model.manifest.to_json();
    bad["manifest_version"] = 2;
    CHECK_THROWS_AS(LoraManifest::from_json(bad), Error);
    nlohmann::json no_modules = model.manifest.to_json();
    no_modules.erase("modules");
    CHECK_THROWS_AS(LoraManifest::from_json(no_modules), Error);
}

TEST_CASE("load_lora_weights checks presence and dims") {
    SynthSpec spec;
    spec.seed = 9;
    spec.n = 6;
    spec.d = 8;
    spec.rank = 3;
    SyntheticModel model = gen_synthetic(spec);
    const LoraModuleInfo& info = model.manifest.modules[0];

    LoraWeights w = load_lora_weights(info, model.lora_tensors);
    CHECK(w.a.rows == 3);
    CHECK(w.a.cols == 6);
    CHECK(w.b.rows == 8);
    CHECK(w.b.cols == 3);

    TensorMap missing = model.lora_tensors;
    missing.erase(info.tensor_a);
    CHECK_THROWS_AS(load_lora_weights(info, missing), Error);

    LoraModuleInfo wrong = info;
    wrong.r += 1;
    CHECK_THROWS_AS(load_lora_weights(wrong, model.lora_tensors), Error);
}

TEST_CASE("gen_synthetic is deterministic and hits target parameter counts") {
    auto params = [](const SynthSpec& s) {
        SyntheticModel m = gen_synthetic(s);
        REQUIRE(!m.manifest.modules.empty());
        const auto& info = m.manifest.modules[0];
        return size_t(info.r) * (info.n + info.d);
    };

    SynthSpec small;
    small.n = 512;
    small.d = 512;
    small.rank = 24;
    CHECK(params(small) == 24576);

    SynthSpec large;
    large.n = 4096;
    large.d = 4096;
    large.rank = 40;
    CHECK(params(large) == 327680);

    SynthSpec spec;
    spec.seed = 10;
    spec.layers = 2;
    spec.slots_per_layer = 2;
    spec.n = 4;
    spec.d = 6;
    spec.rank = 2;
    SyntheticModel m1 = gen_synthetic(spec);
    SyntheticModel m2 = gen_synthetic(spec);
    CHECK(m1.manifest.to_json() == m2.manifest.to_json());
    for (const auto& [name, t] : m1.lora_tensors) {
        CHECK(m2.lora_tensors.at(name).payload == t.payload);
    }
    SynthSpec other = spec;
    other.seed = 11;
    SyntheticModel m3 = gen_synthetic(other);
    CHECK(m3.lora_tensors.begin()->second.payload !=
          m1.lora_tensors.begin()->second.payload);

    // n != d alternates slot dims, manifest still validates end to end.
    m1.manifest.validate(&m1.config);
    m1.config.validate(m1.model_tensors);
    CHECK(m1.manifest.modules[0].n == 4);
    CHECK(m1.manifest.modules[0].d == 6);
    CHECK(m1.manifest.modules[1].n == 6);
    CHECK(m1.manifest.modules[1].d == 4);

    SynthSpec subset = spec;
    subset.lora_targets = 1;
    CHECK(gen_synthetic(subset).manifest.modules.size() == 1);

    SynthSpec zero;
    zero.rank = 0;
    CHECK_THROWS_AS(gen_synthetic(zero), Error);
}

TEST_CASE("json file helpers") {
    testutil::TempDir dir("json");
    nlohmann::json j = {{"alpha", 1}, {"nested", {{"b", "x"}}}};
    write_json_file(dir.sub("a.json"), j);
    CHECK(read_json_file(dir.sub("a.json")) == j);

    testutil::spit(dir.sub("bad.json"), "{not json");
    CHECK_THROWS_AS(read_json_file(dir.sub("bad.json")), Error);
    CHECK_THROWS_AS(read_json_file(dir.sub("absent.json")), Error);
}
