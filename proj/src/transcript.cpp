#include "zklora/transcript.hpp"

namespace zklora {

namespace {

std::array<uint8_t, 8> be64(uint64_t v) {
    std::array<uint8_t, 8> out;
    for (int i = 0; i < 8; ++i) {
        out[i] = static_cast<uint8_t>(v >> (8 * (7 - i)));
    }
    return out;
}

}  // namespace

Transcript::Transcript(const DeploymentProfile& profile) : profile_(&profile) {
    absorb("zklora/v1", std::string());
}

void Transcript::absorb(const std::string& label,
                        std::span<const uint8_t> data) {
    if (label.empty() || label.size() > kMaxTranscriptLabel) {
        throw Error(ErrorKind::LabelTooLong,
                    "transcript label must be 1..64 bytes");
    }
    Sha256 h;
    h.update(state_);
    h.update(be64(label.size()));
    h.update(label);
    h.update(be64(data.size()));
    h.update(data);
    state_ = h.finalize();
}

void Transcript::absorb(const std::string& label, const std::string& data) {
    absorb(label, std::span<const uint8_t>(
                      reinterpret_cast<const uint8_t*>(data.data()),
                      data.size()));
}

std::vector<FieldElement> Transcript::challenge_vector(
    const std::string& label, size_t count) {
    if (count < 1) {
        throw Error(ErrorKind::OutOfRange, "challenge count must be >= 1");
    }
    if (label.empty() || label.size() > kMaxTranscriptLabel) {
        throw Error(ErrorKind::LabelTooLong,
                    "transcript label must be 1..64 bytes");
    }
    std::vector<FieldElement> out;
    out.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        std::array<uint8_t, 64> wide;
        for (uint8_t half = 0; half < 2; ++half) {
            Sha256 h;
            h.update(state_);
            h.update(label);
            h.update(be64(i));
            h.update(std::span<const uint8_t>(&half, 1));
            auto digest = h.finalize();
            std::copy(digest.begin(), digest.end(),
                      wide.begin() + half * 32);
        }
        out.push_back(fe_from_wide_be(wide));
    }
    absorb(label, std::string());
    return out;
}

}  // namespace zklora
