#pragma once

#include <filesystem>
#include <map>
#include <set>

#include "zklora/commitments.hpp"
#include "zklora/tensorio.hpp"
#include "zklora/transcript.hpp"

namespace zklora {

// Binds a proof to the exact witness: profile, session, module, dims and
// digests of everything the verifier recomputes from its own copies.
struct ProofHeader {
    std::string profile_id;
    std::array<uint8_t, 16> session_id{};
    uint32_t module_id = 0;
    uint32_t n = 0;
    uint32_t r = 0;
    uint32_t d = 0;
    uint32_t m = 0;
    int scale_bits = 12;
    std::array<uint8_t, 32> x_digest{};      // wire bytes of X_q
    std::array<uint8_t, 32> delta_digest{};  // wire bytes of Delta_q
    std::array<uint8_t, 32> commit_a_digest{};
    std::array<uint8_t, 32> commit_b_digest{};

    nlohmann::json to_json() const;
    static ProofHeader from_json(const nlohmann::json& j);

    bool operator==(const ProofHeader&) const = default;
};

// v = A_q * (X_q * c) plus the two homomorphic openings. Size is
// O(n + 2r) field elements regardless of d*m.
struct LoraProof {
    ProofHeader header;
    std::vector<FieldElement> v;  // length r
    Opening opening_a;            // w length n
    Opening opening_b;            // w length r

    bool operator==(const LoraProof&) const = default;
};

// "ZKLP" container: magic, version u16 LE, header_len u32 LE, header JSON,
// then v || opening_a.w || rho_a || opening_b.w || rho_b, 32 bytes each.
Bytes encode_proof(const LoraProof& proof);
LoraProof decode_proof(std::span<const uint8_t> data);
void write_proof_file(const std::string& path, const LoraProof& proof);
LoraProof read_proof_file(const std::string& path);

enum class FailureReason {
    None = 0,
    MalformedProof,
    DigestMismatch,
    OpeningAInvalid,
    OpeningBInvalid,
    FreivaldsOuterFail,
    FreivaldsInnerFail,
    MissingProof,
};

const char* failure_reason_name(FailureReason reason);
FailureReason failure_reason_from_name(const std::string& name);

struct ModuleReport {
    uint32_t module_id = 0;
    bool accepted = false;
    FailureReason reason = FailureReason::None;
    double verify_millis = 0.0;
};

struct VerificationReport {
    bool accept = false;
    std::vector<ModuleReport> modules;
    double total_verify_millis = 0.0;

    nlohmann::json to_json() const;  // report_version 1
    static VerificationReport from_json(const nlohmann::json& j);
};

// Caps how many row-combinations of each committed matrix may be revealed.
// Counters are keyed by commitment digest; a (session, module) pair is
// charged at most once so the deterministic offline re-proof of an already
// proven module does not burn budget (it reveals nothing new).
class OpeningBudget {
 public:
    OpeningBudget() = default;

    // Missing file loads as an empty budget.
    static OpeningBudget load(const std::filesystem::path& file);
    void save(const std::filesystem::path& file) const;

    // Registers a set, keeping any existing limit.
    void ensure_limit(const std::array<uint8_t, 32>& digest, uint64_t limit);
    // Operator override; replaces the limit.
    void set_limit(const std::array<uint8_t, 32>& digest, uint64_t limit);

    bool check(const std::array<uint8_t, 32>& digest, uint64_t requested) const;
    uint64_t used(const std::array<uint8_t, 32>& digest) const;
    uint64_t limit(const std::array<uint8_t, 32>& digest) const;

    // One opening against each set; throws BudgetExceeded (charging
    // nothing) when either counter would pass its limit.
    void charge(const std::array<uint8_t, 32>& a_digest,
                const std::array<uint8_t, 32>& b_digest,
                std::span<const uint8_t> session_id, uint32_t module_id);

 private:
    struct Entry {
        uint64_t used = 0;
        uint64_t limit = 0;
    };
    std::map<std::string, Entry> sets_;  // hex digest -> counters
    std::set<std::string> charged_;      // "<session hex>/<module_id>"
};

// floor(r/2): strictly below the r openings that determine A (and well
// below the d that determine B).
uint64_t default_opening_limit(uint32_t r);

// Refusal is a value; the wire layer maps it to BUDGET_EXCEEDED.
bool check_budget(const OpeningBudget& budget,
                  const std::array<uint8_t, 32>& digest, uint64_t requested);

// Everything the contributor holds for one module.
struct ModuleWitness {
    QuantizedMatrix a_q;  // r x n
    QuantizedMatrix b_q;  // d x r
    RowBlinders a_blinders;
    RowBlinders b_blinders;
    CommitmentSet commit_a;
    CommitmentSet commit_b;
};

// Quantizes the module's weights, commits both matrices (the timed
// "settings" phase) and records the blinders.
ModuleWitness build_module_witness(const LoraModuleInfo& info,
                                   const LoraWeights& weights,
                                   const PedersenKey& key, RandomSource& rng);

// Recomputes Delta and asserts it matches (WitnessMismatch), checks the
// overflow bound, charges the budget when one is given, then derives the
// Fiat-Shamir challenges and produces the openings.
LoraProof prove_module(const DeploymentProfile& profile,
                       const LoraModuleInfo& info,
                       const ModuleWitness& witness,
                       std::span<const uint8_t> session_id,
                       const QuantizedMatrix& x_q,
                       const QuantizedMatrix& delta_q,
                       OpeningBudget* budget = nullptr);

// Rebuilds the transcript from public data only. Returns None on accept.
FailureReason verify_module(const DeploymentProfile& profile,
                            const LoraModuleInfo& info,
                            const LoraProof& proof,
                            const QuantizedMatrix& x_q,
                            const QuantizedMatrix& delta_q,
                            const CommitmentSet& commit_a,
                            const CommitmentSet& commit_b,
                            const PedersenKey& key);

// Verifier-side public context for a whole session.
struct BundleContext {
    DeploymentProfile profile;
    LoraManifest manifest;
    std::array<uint8_t, 16> session_id{};
    PedersenKey key;
    std::map<uint32_t, QuantizedMatrix> x_q;
    std::map<uint32_t, QuantizedMatrix> delta_q;
    std::map<uint32_t, CommitmentSet> commit_a;
    std::map<uint32_t, CommitmentSet> commit_b;
};

// Reject-all: accept only if every manifest module has exactly one proof
// and each verifies. Throws DuplicateModule / UnknownModule on a malformed
// bundle; a missing proof is a per-module rejection, not an exception.
VerificationReport verify_bundle(const BundleContext& ctx,
                                 std::span<const LoraProof> proofs);

// Generator vector length covering every opening in the manifest.
size_t manifest_key_width(const LoraManifest& manifest);

}  // namespace zklora
