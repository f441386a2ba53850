#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>

#include "zklora/lora_proof.hpp"
#include "zklora/wire.hpp"

namespace zklora {

struct ServeConfig {
    std::string host = "127.0.0.1";
    uint16_t port = 0;  // 0 = ephemeral
    DeploymentProfile profile = DeploymentProfile::default_profile();
    LoraManifest manifest;
    TensorMap lora_tensors;
    std::optional<uint64_t> budget_limit;   // override floor(r/2) per set
    std::optional<std::string> state_dir;   // witness + budget persistence
    std::optional<uint64_t> insecure_seed;  // deterministic blinders (tests)
    bool parallel_prove = false;
};

// Long-running contributor: holds the private LoRA weights, answers
// activation requests and proves on demand. One thread per session;
// budget updates are serialized globally.
class ContributorServer {
 public:
    explicit ContributorServer(ServeConfig config);
    ~ContributorServer();

    void start();
    void stop();
    uint16_t port() const { return port_; }

    const std::map<uint32_t, double>& settings_ms() const {
        return settings_ms_;
    }
    OpeningBudget budget_snapshot() const;
    std::optional<VerificationReport> last_report() const;

 private:
    struct SessionSlot {
        std::thread thread;
        std::atomic<bool> done{false};
    };

    void accept_loop();
    void reap_sessions(bool join_all);
    void session_main(Socket sock);
    void persist_session_header(const std::array<uint8_t, 16>& session_id);
    void persist_witness(const std::array<uint8_t, 16>& session_id,
                         const LoraModuleInfo& info, const QuantizedMatrix& x_q,
                         const QuantizedMatrix& delta_q);

    ServeConfig cfg_;
    PedersenKey key_;
    std::map<uint32_t, ModuleWitness> witnesses_;
    std::map<uint32_t, std::array<uint8_t, 32>> digest_a_;
    std::map<uint32_t, std::array<uint8_t, 32>> digest_b_;
    std::map<uint32_t, double> settings_ms_;
    ManifestMsg manifest_msg_;

    mutable std::mutex budget_mutex_;
    OpeningBudget budget_;

    mutable std::mutex report_mutex_;
    std::optional<VerificationReport> last_report_;

    Listener listener_;
    uint16_t port_ = 0;
    std::thread accept_thread_;
    std::mutex sessions_mutex_;
    std::vector<std::unique_ptr<SessionSlot>> sessions_;
    bool started_ = false;
};

struct InferConfig {
    std::string host;  // empty = run fully local, no remote modules
    uint16_t port = 0;
    DeploymentProfile profile = DeploymentProfile::default_profile();
    ModelConfig model;
    TensorMap model_tensors;
    std::optional<std::string> session_dir;  // activation records for verify
    RandomSource* rng = nullptr;             // session id source
};

struct InferenceResult {
    Matrix output;
    VerificationReport report;
    std::array<uint8_t, 16> session_id{};
    LoraManifest manifest;
    std::map<uint32_t, double> settings_ms;
    std::map<uint32_t, double> prove_ms;
};

// Forward pass plumbing shared by the client and the reference pipelines.
// The hook receives the f32-narrowed slot input and the local base product
// W*x32 and returns the slot output; layers apply the model activation
// between them.
using SlotHook = std::function<Matrix(size_t layer_idx, const SlotConfig& slot,
                                      const Matrix& x32, Matrix base)>;
Matrix forward_pass(const ModelConfig& model, const TensorMap& tensors,
                    const Matrix& input, const SlotHook& hook);

// The user side of Algorithm 1: local base-model products, remote deltas
// for LoRA-routed slots, bit-exact dequantization gate, recombination,
// then bulk proof request and verification. On Reject the outputs are
// still returned, flagged by the report.
InferenceResult run_user_inference(const InferConfig& cfg, const Matrix& input);

// Mirrors the distributed arithmetic exactly (bit-identical outputs).
Matrix monolithic_quantized_reference(const ModelConfig& model,
                                      const TensorMap& model_tensors,
                                      const LoraManifest& manifest,
                                      const TensorMap& lora_tensors,
                                      const Matrix& input);

// Ideal pipeline: same f32 slot boundaries, deltas in double precision.
Matrix monolithic_float_reference(const ModelConfig& model,
                                  const TensorMap& model_tensors,
                                  const LoraManifest& manifest,
                                  const TensorMap& lora_tensors,
                                  const Matrix& input);

// Re-proves a persisted session from its self-contained witness directory;
// proof bytes equal the online ones (blinders are persisted). A budget file
// already charged for this session re-proves for free.
void offline_prove(const std::string& witness_dir, const std::string& out_dir,
                   OpeningBudget* budget = nullptr);

// Verifies a directory of .zklp files against a persisted user session.
VerificationReport offline_verify(const std::string& proof_dir,
                                  const std::string& session_dir);

}  // namespace zklora
