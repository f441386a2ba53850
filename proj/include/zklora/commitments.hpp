#pragma once

#include <span>

#include "zklora/field.hpp"
#include "zklora/quantizer.hpp"

namespace zklora {

// Pedersen vector-commitment key: L message generators plus a blinding
// generator, all derived deterministically from the profile so both parties
// agree without a trusted setup.
struct PedersenKey {
    std::vector<GroupElement> g;
    GroupElement h;

    size_t width() const { return g.size(); }
};

PedersenKey derive_pedersen_key(const DeploymentProfile& profile, size_t width);

// Public row commitments to a quantized matrix: c[i] = h^rho_i prod_j g_j^{m_ij}.
// Blinders live in RowBlinders on the prover side and are never serialized
// with the set.
struct CommitmentSet {
    uint32_t rows = 0;
    uint32_t cols = 0;
    std::vector<GroupElement> c;

    bool operator==(const CommitmentSet&) const = default;
};

struct RowBlinders {
    std::vector<FieldElement> rho;
};

// Fresh uniform blinder per row. This call is the per-matrix "settings"
// phase; callers time it as such. Throws RowTooLong when cols > key width.
CommitmentSet commit_rows(const QuantizedMatrix& m, const PedersenKey& key,
                          RandomSource& rng, RowBlinders& blinders);

// Deterministic rebuild under fixed blinders (offline re-proof path).
CommitmentSet commit_rows_with(const QuantizedMatrix& m, const PedersenKey& key,
                               const RowBlinders& blinders);

// prod_i c[i]^{s_i}; homomorphically commits to s^T M with blinder <s, rho>.
GroupElement combine(const CommitmentSet& set, std::span<const FieldElement> s);

// Opening of a combined commitment.
struct Opening {
    std::vector<FieldElement> w;  // s^T M as field row
    FieldElement rho;             // <s, blinders>

    bool operator==(const Opening&) const = default;
};

Opening open_combination(const QuantizedMatrix& m, const RowBlinders& blinders,
                         std::span<const FieldElement> s);

// true iff h^rho prod_j g_j^{w_j} equals combined.
bool verify_opening(const PedersenKey& key, const GroupElement& combined,
                    const Opening& opening);

// rows u32 LE || cols u32 LE || rows canonical 32-byte encodings.
Bytes serialize_commitments(const CommitmentSet& set);
CommitmentSet deserialize_commitments(std::span<const uint8_t> data);

std::array<uint8_t, 32> commitment_digest(const CommitmentSet& set);

}  // namespace zklora
