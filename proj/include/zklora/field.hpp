#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "zklora/errors.hpp"

namespace zklora {

using BigInt = boost::multiprecision::cpp_int;
using Bytes = std::vector<uint8_t>;

// SHA-256 helpers (the profile's hash_id names this hash).
struct Sha256 {
    Sha256();
    Sha256& update(std::span<const uint8_t> data);
    Sha256& update(const std::string& data);
    std::array<uint8_t, 32> finalize();

 private:
    std::array<uint8_t, 104> state_;  // opaque crypto_hash_sha256_state
};

std::array<uint8_t, 32> sha256(std::span<const uint8_t> data);

std::string hex_encode(std::span<const uint8_t> data);
Bytes hex_decode(const std::string& hex);

// Named configuration for one deployment of the protocol. Every transcript,
// proof file and wire handshake carries profile_id verbatim; mismatched
// profiles abort the session.
struct DeploymentProfile {
    std::string profile_id;
    std::string group_id;
    BigInt p;
    std::string hash_id;
    int scale_bits = 12;

    // Built-in profile: ristretto255 group, SHA-256, f = 12.
    static const DeploymentProfile& default_profile();

    static DeploymentProfile from_json_text(const std::string& text);
    std::string canonical_json() const;

    // Checks: p prime (probabilistic) and > 2^250, scale_bits in [4, 24],
    // group/hash supported by this build, p equal to the group order.
    void validate() const;
};

// Canonical residue in [0, p), encoded as 32 little-endian bytes.
struct FieldElement {
    std::array<uint8_t, 32> v{};

    bool operator==(const FieldElement&) const = default;
};

// Element of the prime-order group, canonical 32-byte encoding.
struct GroupElement {
    std::array<uint8_t, 32> v{};

    bool operator==(const GroupElement&) const = default;
};

// Order of the ristretto255 group = field modulus p of the default profile.
const BigInt& field_order();

FieldElement fe_zero();
FieldElement fe_one();
FieldElement fe_add(const FieldElement& a, const FieldElement& b);
FieldElement fe_sub(const FieldElement& a, const FieldElement& b);
FieldElement fe_mul(const FieldElement& a, const FieldElement& b);
FieldElement fe_neg(const FieldElement& a);
FieldElement fe_invert(const FieldElement& a);  // throws OutOfRange on zero
bool fe_is_zero(const FieldElement& a);

FieldElement fe_from_u64(uint64_t k);
FieldElement fe_from_signed(int64_t k);
// Centered embedding of a big integer, |k| <= (p-1)/2.
FieldElement fe_from_bigint(const BigInt& k);
// Centered lift: e if e <= (p-1)/2, else e - p.
BigInt fe_to_signed(const FieldElement& e);

// Reduction of a 512-bit big-endian integer mod p (challenge derivation).
FieldElement fe_from_wide_be(std::span<const uint8_t> wide64);

std::array<uint8_t, 32> fe_encode(const FieldElement& e);
// Rejects non-canonical encodings (value >= p).
FieldElement fe_decode(std::span<const uint8_t> bytes);
bool fe_is_canonical(std::span<const uint8_t> bytes);

GroupElement ge_identity();
bool ge_is_identity(const GroupElement& a);
GroupElement ge_add(const GroupElement& a, const GroupElement& b);
GroupElement ge_sub(const GroupElement& a, const GroupElement& b);
// Scalar exponentiation; scalar zero or identity base give the identity.
GroupElement ge_mul(const FieldElement& scalar, const GroupElement& point);
std::array<uint8_t, 32> ge_encode(const GroupElement& a);
// Rejects encodings that are not valid group elements.
GroupElement ge_decode(std::span<const uint8_t> bytes);
bool ge_is_valid(std::span<const uint8_t> bytes);

// sum_i scalars[i] * points[i]; empty input gives the identity.
GroupElement ge_multi_mul(std::span<const FieldElement> scalars,
                          std::span<const GroupElement> points);

struct GeneratorSet {
    std::vector<GroupElement> g;
    GroupElement h;  // blinding generator
};

// Deterministic nothing-up-my-sleeve generators: candidate encodings are
// hash(profile_id || label || index || retry) until one decodes to a
// non-identity point. Index-parameterized, so a shorter derivation is a
// prefix of a longer one.
GeneratorSet derive_generators(const DeploymentProfile& profile,
                               const std::string& label,
                               size_t count);

// Source of randomness for blinders and session ids.
class RandomSource {
 public:
    virtual ~RandomSource() = default;
    virtual void fill(uint8_t* out, size_t len) = 0;

    // Uniform field element via 512-bit reduction.
    FieldElement field_element();
};

// OS randomness (the default for blinders).
class OsRandom final : public RandomSource {
 public:
    void fill(uint8_t* out, size_t len) override;
};

// Deterministic stream for tests; never use for real blinders.
class SeededRandom final : public RandomSource {
 public:
    explicit SeededRandom(uint64_t seed);
    void fill(uint8_t* out, size_t len) override;

 private:
    void refill();

    std::array<uint8_t, 32> key_{};
    std::array<uint8_t, 64> buf_{};
    uint64_t block_ = 0;
    size_t pos_ = 64;
};

}  // namespace zklora
