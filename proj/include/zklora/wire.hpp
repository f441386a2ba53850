#pragma once

#include <optional>

#include "zklora/lora_proof.hpp"
#include "zklora/tensorio.hpp"

namespace zklora {

enum class MsgType : uint8_t {
    Hello = 0x01,
    Manifest = 0x02,
    ActRequest = 0x03,
    ActResponse = 0x04,
    ProofRequest = 0x05,
    ProofBundle = 0x06,
    VerifyReport = 0x07,
    WireError = 0x7F,
};

enum class WireErrorCode : uint16_t {
    Protocol = 0x0001,
    ProfileMismatch = 0x0002,
    UnknownModule = 0x0003,
    DimMismatch = 0x0004,
    BudgetExceeded = 0x0005,
    OverflowBound = 0x0006,
    Internal = 0x0007,
};

const char* wire_error_name(WireErrorCode code);

// Frame = length u32 BE (over type byte + payload) || type u8 || payload.
constexpr size_t kMaxFramePayload = (256u << 20) - 1;  // 256 MiB frame cap

// type is kept raw so unknown values survive decoding and can be answered
// with ERROR(PROTOCOL) instead of crashing.
struct Frame {
    uint8_t type = 0;
    Bytes payload;
};

Bytes encode_frame(uint8_t type, std::span<const uint8_t> payload);
// Throws ProtocolError on malformed input; *consumed covers the frame.
Frame decode_frame(std::span<const uint8_t> data, size_t* consumed);

constexpr uint16_t kWireVersion = 1;
constexpr uint8_t kRoleUser = 0;
constexpr uint8_t kRoleContributor = 1;

// "ZKLW" || version u16 BE || role u8 || session_id 16B || profile JSON.
struct HelloMsg {
    uint16_t version = kWireVersion;
    uint8_t role = kRoleUser;
    std::array<uint8_t, 16> session_id{};
    std::string profile_json;
};

Bytes encode_hello(const HelloMsg& msg);
HelloMsg decode_hello(std::span<const uint8_t> payload);

// Canonical JSON: manifest, hex commitment serializations, settings times.
struct ManifestMsg {
    LoraManifest manifest;
    std::map<uint32_t, Bytes> commit_a;
    std::map<uint32_t, Bytes> commit_b;
    std::map<uint32_t, double> settings_ms;
};

Bytes encode_manifest_msg(const ManifestMsg& msg);
ManifestMsg decode_manifest_msg(std::span<const uint8_t> payload);

struct ActRequestMsg {
    uint32_t module_id = 0;
    Tensor x;  // f32, n x m
};

Bytes encode_act_request(const ActRequestMsg& msg);
ActRequestMsg decode_act_request(std::span<const uint8_t> payload);

struct ActResponseMsg {
    uint32_t module_id = 0;
    Tensor delta_q;  // i64, d x m, scale S^3
    Tensor delta_f;  // f32, d x m
};

Bytes encode_act_response(const ActResponseMsg& msg);
ActResponseMsg decode_act_response(std::span<const uint8_t> payload);

// count u32 BE, then per proof: prove_millis f64 BE || len u32 BE || ZKLP bytes.
struct ProofBundleMsg {
    struct Entry {
        double prove_millis = 0.0;
        Bytes proof;  // full ZKLP container, identical to the file bytes
    };
    std::vector<Entry> entries;
};

Bytes encode_proof_bundle(const ProofBundleMsg& msg);
ProofBundleMsg decode_proof_bundle(std::span<const uint8_t> payload);

struct ErrorMsg {
    WireErrorCode code = WireErrorCode::Internal;
    std::string message;
};

Bytes encode_error(const ErrorMsg& msg);
ErrorMsg decode_error(std::span<const uint8_t> payload);

// VERIFY_REPORT payload is the canonical report JSON.
Bytes encode_report_msg(const VerificationReport& report);
VerificationReport decode_report_msg(std::span<const uint8_t> payload);

// Blocking TCP socket with the frame codec on top. recv_frame throws
// ProtocolError on EOF, oversized length or truncation.
class Socket {
 public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    Socket(Socket&& other) noexcept;
    Socket& operator=(Socket&& other) noexcept;
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    ~Socket();

    static Socket connect_to(const std::string& host, uint16_t port);

    void send_frame(uint8_t type, std::span<const uint8_t> payload);
    Frame recv_frame();

    void set_recv_timeout(int seconds);
    bool valid() const { return fd_ >= 0; }
    int fd() const { return fd_; }
    void close();

 private:
    int fd_ = -1;
};

// Listening socket; close() unblocks a concurrent accept().
class Listener {
 public:
    Listener() = default;
    Listener(Listener&& other) noexcept;
    Listener& operator=(Listener&& other) noexcept;
    Listener(const Listener&) = delete;
    Listener& operator=(const Listener&) = delete;
    ~Listener();

    static Listener bind_to(const std::string& host, uint16_t port);

    uint16_t port() const { return port_; }
    std::optional<Socket> accept_one();
    void close();

 private:
    int fd_ = -1;
    uint16_t port_ = 0;
};

}  // namespace zklora
