#include "zklora/field.hpp"

#include <sodium.h>

#include <algorithm>
#include <cstring>
#include <mutex>

#include <boost/multiprecision/miller_rabin.hpp>

#include <nlohmann/json.hpp>

namespace zklora {

namespace {

void ensure_sodium() {
    static std::once_flag flag;
    std::call_once(flag, [] {
        if (sodium_init() < 0) {
            throw Error(ErrorKind::Internal, "sodium_init failed");
        }
    });
}

// Order of ristretto255: 2^252 + 27742317777372353535851937790883648493.
const char* kGroupOrderDec =
    "7237005577332262213973186563042994240857116359379907606001950938285454250989";

BigInt make_group_order() { return BigInt(kGroupOrderDec); }

void put_u64_be(Bytes& out, uint64_t v) {
    for (int i = 7; i >= 0; --i) {
        out.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
}

}  // namespace

Sha256::Sha256() {
    ensure_sodium();
    static_assert(sizeof(crypto_hash_sha256_state) <= sizeof(state_));
    crypto_hash_sha256_init(reinterpret_cast<crypto_hash_sha256_state*>(state_.data()));
}

Sha256& Sha256::update(std::span<const uint8_t> data) {
    crypto_hash_sha256_update(reinterpret_cast<crypto_hash_sha256_state*>(state_.data()),
                              data.data(), data.size());
    return *this;
}

Sha256& Sha256::update(const std::string& data) {
    return update(std::span<const uint8_t>(
        reinterpret_cast<const uint8_t*>(data.data()), data.size()));
}

std::array<uint8_t, 32> Sha256::finalize() {
    std::array<uint8_t, 32> out{};
    crypto_hash_sha256_final(reinterpret_cast<crypto_hash_sha256_state*>(state_.data()),
                             out.data());
    return out;
}

std::array<uint8_t, 32> sha256(std::span<const uint8_t> data) {
    return Sha256().update(data).finalize();
}

std::string hex_encode(std::span<const uint8_t> data) {
    std::string out(data.size() * 2 + 1, '\0');
    sodium_bin2hex(out.data(), out.size(), data.data(), data.size());
    out.resize(data.size() * 2);
    return out;
}

Bytes hex_decode(const std::string& hex) {
    Bytes out(hex.size() / 2);
    size_t len = 0;
    if (hex.size() % 2 != 0 ||
        sodium_hex2bin(out.data(), out.size(), hex.data(), hex.size(), nullptr,
                       &len, nullptr) != 0) {
        throw Error(ErrorKind::CorruptHeader, "invalid hex string");
    }
    out.resize(len);
    return out;
}

const BigInt& field_order() {
    static const BigInt p = make_group_order();
    return p;
}

const DeploymentProfile& DeploymentProfile::default_profile() {
    static const DeploymentProfile profile = [] {
        DeploymentProfile pr;
        pr.profile_id = "zklora-r255-v1";
        pr.group_id = "ristretto255";
        pr.p = field_order();
        pr.hash_id = "sha256";
        pr.scale_bits = 12;
        pr.validate();
        return pr;
    }();
    return profile;
}

DeploymentProfile DeploymentProfile::from_json_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw Error(ErrorKind::CorruptHeader, "profile is not a JSON object");
    }
    DeploymentProfile pr;
    try {
        pr.profile_id = j.at("profile_id").get<std::string>();
        pr.group_id = j.at("group_id").get<std::string>();
        pr.p = BigInt(j.at("p").get<std::string>());
        pr.hash_id = j.at("hash_id").get<std::string>();
        pr.scale_bits = j.at("scale_bits").get<int>();
    } catch (const std::exception& e) {
        throw Error(ErrorKind::CorruptHeader,
                    std::string("bad profile json: ") + e.what());
    }
    pr.validate();
    return pr;
}

std::string DeploymentProfile::canonical_json() const {
    nlohmann::json j;
    j["group_id"] = group_id;
    j["hash_id"] = hash_id;
    j["p"] = p.str();
    j["profile_id"] = profile_id;
    j["scale_bits"] = scale_bits;
    return j.dump();
}

void DeploymentProfile::validate() const {
    if (profile_id.empty()) {
        throw Error(ErrorKind::UnsupportedProfile, "empty profile_id");
    }
    if (group_id != "ristretto255") {
        throw Error(ErrorKind::UnsupportedProfile,
                    "unsupported group: " + group_id);
    }
    if (hash_id != "sha256") {
        throw Error(ErrorKind::UnsupportedProfile,
                    "unsupported hash: " + hash_id);
    }
    if (scale_bits < 4 || scale_bits > 24) {
        throw Error(ErrorKind::UnsupportedProfile,
                    "scale_bits outside [4, 24]");
    }
    if (p <= (BigInt(1) << 250)) {
        throw Error(ErrorKind::UnsupportedProfile, "p must exceed 2^250");
    }
    if (p != field_order()) {
        throw Error(ErrorKind::UnsupportedProfile,
                    "p does not match the ristretto255 group order");
    }
    boost::random::mt19937_64 gen(0x7a6b6c6f7261ULL);
    if (!boost::multiprecision::miller_rabin_test(p, 25, gen)) {
        throw Error(ErrorKind::UnsupportedProfile, "p failed primality test");
    }
}

FieldElement fe_zero() { return FieldElement{}; }

FieldElement fe_one() {
    FieldElement e;
    e.v[0] = 1;
    return e;
}

FieldElement fe_add(const FieldElement& a, const FieldElement& b) {
    ensure_sodium();
    FieldElement out;
    crypto_core_ristretto255_scalar_add(out.v.data(), a.v.data(), b.v.data());
    return out;
}

FieldElement fe_sub(const FieldElement& a, const FieldElement& b) {
    ensure_sodium();
    FieldElement out;
    crypto_core_ristretto255_scalar_sub(out.v.data(), a.v.data(), b.v.data());
    return out;
}

FieldElement fe_mul(const FieldElement& a, const FieldElement& b) {
    ensure_sodium();
    FieldElement out;
    crypto_core_ristretto255_scalar_mul(out.v.data(), a.v.data(), b.v.data());
    return out;
}

FieldElement fe_neg(const FieldElement& a) {
    ensure_sodium();
    FieldElement out;
    crypto_core_ristretto255_scalar_negate(out.v.data(), a.v.data());
    return out;
}

FieldElement fe_invert(const FieldElement& a) {
    ensure_sodium();
    FieldElement out;
    if (crypto_core_ristretto255_scalar_invert(out.v.data(), a.v.data()) != 0) {
        throw Error(ErrorKind::OutOfRange, "inverse of zero");
    }
    return out;
}

bool fe_is_zero(const FieldElement& a) {
    return std::all_of(a.v.begin(), a.v.end(), [](uint8_t b) { return b == 0; });
}

FieldElement fe_from_u64(uint64_t k) {
    FieldElement e;
    for (int i = 0; i < 8; ++i) {
        e.v[i] = static_cast<uint8_t>(k >> (8 * i));
    }
    return e;
}

FieldElement fe_from_signed(int64_t k) {
    if (k >= 0) {
        return fe_from_u64(static_cast<uint64_t>(k));
    }
    uint64_t mag = k == INT64_MIN ? (1ULL << 63) : static_cast<uint64_t>(-k);
    return fe_neg(fe_from_u64(mag));
}

FieldElement fe_from_bigint(const BigInt& k) {
    const BigInt& p = field_order();
    BigInt half = (p - 1) / 2;
    if (abs(k) > half) {
        throw Error(ErrorKind::OutOfRange, "|k| exceeds (p-1)/2");
    }
    BigInt mag = abs(k);
    FieldElement e;
    export_bits(mag, e.v.begin(), 8, false);  // little-endian, zero padded
    return k < 0 ? fe_neg(e) : e;
}

BigInt fe_to_signed(const FieldElement& e) {
    BigInt val;
    import_bits(val, e.v.begin(), e.v.end(), 8, false);
    const BigInt& p = field_order();
    if (val > (p - 1) / 2) {
        val -= p;
    }
    return val;
}

FieldElement fe_from_wide_be(std::span<const uint8_t> wide64) {
    ensure_sodium();
    if (wide64.size() != 64) {
        throw Error(ErrorKind::LengthMismatch, "wide reduction needs 64 bytes");
    }
    std::array<uint8_t, 64> le;
    for (size_t i = 0; i < 64; ++i) {
        le[i] = wide64[63 - i];
    }
    FieldElement out;
    crypto_core_ristretto255_scalar_reduce(out.v.data(), le.data());
    return out;
}

std::array<uint8_t, 32> fe_encode(const FieldElement& e) { return e.v; }

bool fe_is_canonical(std::span<const uint8_t> bytes) {
    if (bytes.size() != 32) {
        return false;
    }
    BigInt val;
    import_bits(val, bytes.begin(), bytes.end(), 8, false);
    return val < field_order();
}

FieldElement fe_decode(std::span<const uint8_t> bytes) {
    if (!fe_is_canonical(bytes)) {
        throw Error(ErrorKind::OutOfRange, "non-canonical field encoding");
    }
    FieldElement e;
    std::copy(bytes.begin(), bytes.end(), e.v.begin());
    return e;
}

GroupElement ge_identity() { return GroupElement{}; }

bool ge_is_identity(const GroupElement& a) {
    return std::all_of(a.v.begin(), a.v.end(), [](uint8_t b) { return b == 0; });
}

GroupElement ge_add(const GroupElement& a, const GroupElement& b) {
    ensure_sodium();
    GroupElement out;
    if (crypto_core_ristretto255_add(out.v.data(), a.v.data(), b.v.data()) != 0) {
        throw Error(ErrorKind::OutOfRange, "invalid group element in add");
    }
    return out;
}

GroupElement ge_sub(const GroupElement& a, const GroupElement& b) {
    ensure_sodium();
    GroupElement out;
    if (crypto_core_ristretto255_sub(out.v.data(), a.v.data(), b.v.data()) != 0) {
        throw Error(ErrorKind::OutOfRange, "invalid group element in sub");
    }
    return out;
}

GroupElement ge_mul(const FieldElement& scalar, const GroupElement& point) {
    ensure_sodium();
    if (fe_is_zero(scalar) || ge_is_identity(point)) {
        return ge_identity();
    }
    GroupElement out;
    // sodium reports the identity result as an error; prime order makes
    // n*P = O possible only for n = 0, handled above.
    if (crypto_scalarmult_ristretto255(out.v.data(), scalar.v.data(),
                                       point.v.data()) != 0) {
        throw Error(ErrorKind::OutOfRange, "invalid group element in mul");
    }
    return out;
}

std::array<uint8_t, 32> ge_encode(const GroupElement& a) { return a.v; }

bool ge_is_valid(std::span<const uint8_t> bytes) {
    ensure_sodium();
    if (bytes.size() != 32) {
        return false;
    }
    return crypto_core_ristretto255_is_valid_point(bytes.data()) == 1;
}

GroupElement ge_decode(std::span<const uint8_t> bytes) {
    if (!ge_is_valid(bytes)) {
        throw Error(ErrorKind::OutOfRange, "invalid group encoding");
    }
    GroupElement a;
    std::copy(bytes.begin(), bytes.end(), a.v.begin());
    return a;
}

GroupElement ge_multi_mul(std::span<const FieldElement> scalars,
                          std::span<const GroupElement> points) {
    if (scalars.size() != points.size()) {
        throw Error(ErrorKind::LengthMismatch, "multi_mul length mismatch");
    }
    GroupElement acc = ge_identity();
    for (size_t i = 0; i < scalars.size(); ++i) {
        if (fe_is_zero(scalars[i])) {
            continue;
        }
        acc = ge_add(acc, ge_mul(scalars[i], points[i]));
    }
    return acc;
}

namespace {

GroupElement hash_to_group(const std::string& profile_id,
                           const std::string& label,
                           const Bytes& index_tag) {
    for (uint64_t retry = 0;; ++retry) {
        Bytes buf;
        put_u64_be(buf, profile_id.size());
        buf.insert(buf.end(), profile_id.begin(), profile_id.end());
        put_u64_be(buf, label.size());
        buf.insert(buf.end(), label.begin(), label.end());
        buf.insert(buf.end(), index_tag.begin(), index_tag.end());
        put_u64_be(buf, retry);
        auto candidate = sha256(buf);
        if (ge_is_valid(candidate)) {
            GroupElement g;
            std::copy(candidate.begin(), candidate.end(), g.v.begin());
            if (!ge_is_identity(g)) {
                return g;
            }
        }
    }
}

}  // namespace

GeneratorSet derive_generators(const DeploymentProfile& profile,
                               const std::string& label,
                               size_t count) {
    if (count < 1) {
        throw Error(ErrorKind::OutOfRange, "generator count must be >= 1");
    }
    GeneratorSet set;
    set.g.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        Bytes tag;
        put_u64_be(tag, i);
        set.g.push_back(hash_to_group(profile.profile_id, label, tag));
    }
    Bytes blind_tag{'b', 'l', 'i', 'n', 'd'};
    set.h = hash_to_group(profile.profile_id, label, blind_tag);
    return set;
}

FieldElement RandomSource::field_element() {
    std::array<uint8_t, 64> wide;
    fill(wide.data(), wide.size());
    return fe_from_wide_be(wide);
}

void OsRandom::fill(uint8_t* out, size_t len) {
    ensure_sodium();
    randombytes_buf(out, len);
}

SeededRandom::SeededRandom(uint64_t seed) {
    ensure_sodium();
    Bytes tag{'z', 'k', 'l', 'o', 'r', 'a', '-', 's', 'e', 'e', 'd'};
    put_u64_be(tag, seed);
    key_ = sha256(tag);
}

void SeededRandom::refill() {
    std::array<uint8_t, 41> block_key;
    std::memcpy(block_key.data(), key_.data(), 32);
    for (int i = 0; i < 8; ++i) {
        block_key[32 + i] = static_cast<uint8_t>(block_ >> (8 * (7 - i)));
    }
    block_key[40] = 0;
    auto h0 = sha256(block_key);
    block_key[40] = 1;
    auto h1 = sha256(block_key);
    std::memcpy(buf_.data(), h0.data(), 32);
    std::memcpy(buf_.data() + 32, h1.data(), 32);
    ++block_;
    pos_ = 0;
}

void SeededRandom::fill(uint8_t* out, size_t len) {
    while (len > 0) {
        if (pos_ == buf_.size()) {
            refill();
        }
        size_t take = std::min(len, buf_.size() - pos_);
        std::memcpy(out, buf_.data() + pos_, take);
        pos_ += take;
        out += take;
        len -= take;
    }
}

}  // namespace zklora
