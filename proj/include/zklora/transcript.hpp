#pragma once

#include <array>
#include <string>
#include <vector>

#include "zklora/field.hpp"

namespace zklora {

// Fiat-Shamir transcript. Both parties rebuild it from public data; it
// never crosses the wire. Label vocabulary used by the proof pipeline:
// "zklora/v1", "profile", "manifest", "commit/A", "commit/B", "x-digest",
// "delta-digest", "v", "chal/c", "chal/r", "chal/s".
class Transcript {
 public:
    explicit Transcript(const DeploymentProfile& profile);

    // state' = H(state || len8(label) || label || len8(data) || data),
    // len8 = 8-byte big-endian length. Order-sensitive by construction.
    void absorb(const std::string& label, std::span<const uint8_t> data);
    void absorb(const std::string& label, const std::string& data);

    // element i = BE(H(state || label || ctr_i || 0x00) ||
    //               H(state || label || ctr_i || 0x01)) mod p,
    // then the state absorbs the label so later challenges chain.
    std::vector<FieldElement> challenge_vector(const std::string& label,
                                               size_t count);

    const std::array<uint8_t, 32>& state() const { return state_; }

 private:
    std::array<uint8_t, 32> state_{};
    const DeploymentProfile* profile_;
};

constexpr size_t kMaxTranscriptLabel = 64;

}  // namespace zklora
