#pragma once

// Shared fixtures for the test binaries: scratch directories, random
// matrices, and hand-built proof instances.

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>

#include "zklora/lora_proof.hpp"

namespace testutil {

// Self-cleaning scratch directory under the system temp root.
class TempDir {
 public:
    explicit TempDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path();
        for (int i = 0; i < 10000; ++i) {
            auto cand = base / (tag + "-" + std::to_string(::getpid()) + "-" +
                                std::to_string(counter_++));
            std::error_code ec;
            if (std::filesystem::create_directories(cand, ec) && !ec) {
                path_ = cand;
                return;
            }
        }
        throw std::runtime_error("cannot create scratch dir");
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string str() const { return path_.string(); }
    std::string sub(const std::string& name) const {
        return (path_ / name).string();
    }

 private:
    static inline std::atomic<int> counter_{0};
    std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    return std::string(std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>());
}

inline void spit(const std::string& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << data;
    if (!out) {
        throw std::runtime_error("cannot write " + path);
    }
}

inline zklora::QuantizedMatrix rand_q(std::mt19937_64& rng, uint32_t rows,
                                      uint32_t cols, int64_t mag,
                                      int scale_exp = 1) {
    zklora::QuantizedMatrix q(rows, cols, scale_exp);
    std::uniform_int_distribution<int64_t> dist(-mag, mag);
    for (auto& e : q.entries) {
        e = dist(rng);
    }
    return q;
}

inline zklora::Matrix rand_mat(std::mt19937_64& rng, size_t rows, size_t cols,
                               double mag = 1.0) {
    zklora::Matrix m(rows, cols);
    std::uniform_real_distribution<double> dist(-mag, mag);
    for (auto& e : m.data) {
        e = dist(rng);
    }
    return m;
}

// A complete single-module proof instance over random integer weights.
struct ProofInstance {
    zklora::DeploymentProfile profile =
        zklora::DeploymentProfile::default_profile();
    zklora::LoraModuleInfo info;
    zklora::PedersenKey key;
    zklora::ModuleWitness witness;
    zklora::QuantizedMatrix x_q;
    zklora::QuantizedMatrix delta_q;
    std::array<uint8_t, 16> session{};
};

inline ProofInstance make_instance(uint64_t seed, uint32_t n, uint32_t r,
                                   uint32_t d, uint32_t m, int64_t mag = 64) {
    std::mt19937_64 rng(seed);
    ProofInstance inst;
    inst.info.module_id = 0;
    inst.info.target = "0.s0";
    inst.info.n = n;
    inst.info.r = r;
    inst.info.d = d;
    inst.info.scale_bits = inst.profile.scale_bits;
    inst.info.tensor_a = "lora.0.a";
    inst.info.tensor_b = "lora.0.b";
    inst.key = zklora::derive_pedersen_key(inst.profile,
                                           std::max<size_t>(n, r));
    inst.witness.a_q = rand_q(rng, r, n, mag);
    inst.witness.b_q = rand_q(rng, d, r, mag);
    inst.info.weight_bound = std::max<int64_t>(
        1, std::max(zklora::max_abs_entry(inst.witness.a_q),
                    zklora::max_abs_entry(inst.witness.b_q)));
    zklora::SeededRandom blinders(seed ^ 0x9e3779b97f4a7c15ULL);
    inst.witness.commit_a = zklora::commit_rows(
        inst.witness.a_q, inst.key, blinders, inst.witness.a_blinders);
    inst.witness.commit_b = zklora::commit_rows(
        inst.witness.b_q, inst.key, blinders, inst.witness.b_blinders);
    inst.x_q = rand_q(rng, n, m, mag);
    inst.delta_q =
        zklora::delta_exact(inst.witness.a_q, inst.witness.b_q, inst.x_q);
    for (auto& b : inst.session) {
        b = static_cast<uint8_t>(rng());
    }
    return inst;
}

inline zklora::LoraProof prove(const ProofInstance& inst,
                               zklora::OpeningBudget* budget = nullptr) {
    return zklora::prove_module(inst.profile, inst.info, inst.witness,
                                inst.session, inst.x_q, inst.delta_q, budget);
}

inline zklora::FailureReason verify(const ProofInstance& inst,
                                    const zklora::LoraProof& proof) {
    return zklora::verify_module(inst.profile, inst.info, proof, inst.x_q,
                                 inst.delta_q, inst.witness.commit_a,
                                 inst.witness.commit_b, inst.key);
}

}  // namespace testutil
