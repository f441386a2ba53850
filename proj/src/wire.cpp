#include "zklora/wire.hpp"

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>

namespace zklora {

namespace {

void put_u16_be(Bytes& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

void put_u32_be(Bytes& out, uint32_t v) {
    for (int i = 3; i >= 0; --i) {
        out.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
}

void put_u64_be(Bytes& out, uint64_t v) {
    for (int i = 7; i >= 0; --i) {
        out.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
}

uint16_t get_u16_be(std::span<const uint8_t> d, size_t off) {
    return static_cast<uint16_t>(uint16_t(d[off]) << 8 | d[off + 1]);
}

uint32_t get_u32_be(std::span<const uint8_t> d, size_t off) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v = (v << 8) | d[off + i];
    }
    return v;
}

uint64_t get_u64_be(std::span<const uint8_t> d, size_t off) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v = (v << 8) | d[off + i];
    }
    return v;
}

[[noreturn]] void proto_error(const std::string& what) {
    throw Error(ErrorKind::ProtocolError, what);
}

void need(std::span<const uint8_t> d, size_t off, size_t len,
          const char* what) {
    if (off + len > d.size()) {
        proto_error(std::string("truncated ") + what);
    }
}

Tensor decode_tensor_at(std::span<const uint8_t> payload, size_t& off,
                        const char* what) {
    size_t consumed = 0;
    Tensor t;
    try {
        t = decode_wire_tensor(payload.subspan(off), &consumed);
    } catch (const Error&) {
        proto_error(std::string("bad tensor in ") + what);
    }
    off += consumed;
    return t;
}

}  // namespace

const char* wire_error_name(WireErrorCode code) {
    switch (code) {
        case WireErrorCode::Protocol: return "PROTOCOL";
        case WireErrorCode::ProfileMismatch: return "PROFILE_MISMATCH";
        case WireErrorCode::UnknownModule: return "UNKNOWN_MODULE";
        case WireErrorCode::DimMismatch: return "DIM_MISMATCH";
        case WireErrorCode::BudgetExceeded: return "BUDGET_EXCEEDED";
        case WireErrorCode::OverflowBound: return "OVERFLOW_BOUND";
        case WireErrorCode::Internal: return "INTERNAL";
    }
    return "UNKNOWN";
}

Bytes encode_frame(uint8_t type, std::span<const uint8_t> payload) {
    if (payload.size() > kMaxFramePayload) {
        throw Error(ErrorKind::ProtocolError, "frame payload too large");
    }
    Bytes out;
    out.reserve(5 + payload.size());
    put_u32_be(out, static_cast<uint32_t>(payload.size() + 1));
    out.push_back(type);
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

Frame decode_frame(std::span<const uint8_t> data, size_t* consumed) {
    if (data.size() < 5) {
        proto_error("frame shorter than header");
    }
    uint32_t len = get_u32_be(data, 0);
    if (len < 1 || len > kMaxFramePayload + 1) {
        proto_error("frame length out of range");
    }
    if (data.size() < 4 + size_t(len)) {
        proto_error("frame truncated");
    }
    Frame f;
    f.type = data[4];
    f.payload.assign(data.begin() + 5, data.begin() + 4 + len);
    if (consumed) {
        *consumed = 4 + size_t(len);
    }
    return f;
}

Bytes encode_hello(const HelloMsg& msg) {
    Bytes out;
    out.insert(out.end(), {'Z', 'K', 'L', 'W'});
    put_u16_be(out, msg.version);
    out.push_back(msg.role);
    out.insert(out.end(), msg.session_id.begin(), msg.session_id.end());
    out.insert(out.end(), msg.profile_json.begin(), msg.profile_json.end());
    return out;
}

HelloMsg decode_hello(std::span<const uint8_t> payload) {
    if (payload.size() < 23) {
        proto_error("hello too short");
    }
    if (std::memcmp(payload.data(), "ZKLW", 4) != 0) {
        proto_error("hello magic mismatch");
    }
    HelloMsg msg;
    msg.version = get_u16_be(payload, 4);
    if (msg.version != kWireVersion) {
        proto_error("unsupported wire version");
    }
    msg.role = payload[6];
    if (msg.role != kRoleUser && msg.role != kRoleContributor) {
        proto_error("unknown hello role");
    }
    std::copy(payload.begin() + 7, payload.begin() + 23,
              msg.session_id.begin());
    msg.profile_json.assign(payload.begin() + 23, payload.end());
    return msg;
}

Bytes encode_manifest_msg(const ManifestMsg& msg) {
    nlohmann::json commits = nlohmann::json::object();
    for (const auto& [id, bytes] : msg.commit_a) {
        auto it = msg.commit_b.find(id);
        if (it == msg.commit_b.end()) {
            throw Error(ErrorKind::LengthMismatch, "commit_b missing module");
        }
        commits[std::to_string(id)] = {{"a", hex_encode(bytes)},
                                       {"b", hex_encode(it->second)}};
    }
    nlohmann::json settings = nlohmann::json::object();
    for (const auto& [id, ms] : msg.settings_ms) {
        settings[std::to_string(id)] = ms;
    }
    nlohmann::json j;
    j["commitments"] = commits;
    j["manifest"] = msg.manifest.to_json();
    j["settings_ms"] = settings;
    std::string text = j.dump();
    return Bytes(text.begin(), text.end());
}

ManifestMsg decode_manifest_msg(std::span<const uint8_t> payload) {
    nlohmann::json j = nlohmann::json::parse(payload.begin(), payload.end(),
                                             nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        proto_error("manifest message is not JSON");
    }
    ManifestMsg msg;
    try {
        msg.manifest = LoraManifest::from_json(j.at("manifest"));
        for (const auto& [key, val] : j.at("commitments").items()) {
            uint32_t id = static_cast<uint32_t>(std::stoul(key));
            msg.commit_a[id] = hex_decode(val.at("a").get<std::string>());
            msg.commit_b[id] = hex_decode(val.at("b").get<std::string>());
        }
        for (const auto& [key, val] : j.at("settings_ms").items()) {
            msg.settings_ms[static_cast<uint32_t>(std::stoul(key))] =
                val.get<double>();
        }
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        proto_error(std::string("bad manifest message: ") + e.what());
    }
    return msg;
}

Bytes encode_act_request(const ActRequestMsg& msg) {
    Bytes out;
    put_u32_be(out, msg.module_id);
    Bytes tensor = encode_wire_tensor(msg.x);
    out.insert(out.end(), tensor.begin(), tensor.end());
    return out;
}

ActRequestMsg decode_act_request(std::span<const uint8_t> payload) {
    need(payload, 0, 4, "act request");
    ActRequestMsg msg;
    msg.module_id = get_u32_be(payload, 0);
    size_t off = 4;
    msg.x = decode_tensor_at(payload, off, "act request");
    if (off != payload.size()) {
        proto_error("act request has trailing bytes");
    }
    return msg;
}

Bytes encode_act_response(const ActResponseMsg& msg) {
    Bytes out;
    put_u32_be(out, msg.module_id);
    Bytes dq = encode_wire_tensor(msg.delta_q);
    Bytes df = encode_wire_tensor(msg.delta_f);
    out.insert(out.end(), dq.begin(), dq.end());
    out.insert(out.end(), df.begin(), df.end());
    return out;
}

ActResponseMsg decode_act_response(std::span<const uint8_t> payload) {
    need(payload, 0, 4, "act response");
    ActResponseMsg msg;
    msg.module_id = get_u32_be(payload, 0);
    size_t off = 4;
    msg.delta_q = decode_tensor_at(payload, off, "act response");
    msg.delta_f = decode_tensor_at(payload, off, "act response");
    if (off != payload.size()) {
        proto_error("act response has trailing bytes");
    }
    return msg;
}

Bytes encode_proof_bundle(const ProofBundleMsg& msg) {
    Bytes out;
    put_u32_be(out, static_cast<uint32_t>(msg.entries.size()));
    for (const auto& entry : msg.entries) {
        uint64_t bits;
        std::memcpy(&bits, &entry.prove_millis, 8);
        put_u64_be(out, bits);
        put_u32_be(out, static_cast<uint32_t>(entry.proof.size()));
        out.insert(out.end(), entry.proof.begin(), entry.proof.end());
    }
    return out;
}

ProofBundleMsg decode_proof_bundle(std::span<const uint8_t> payload) {
    need(payload, 0, 4, "proof bundle");
    uint32_t count = get_u32_be(payload, 0);
    if (count > 1u << 20) {
        proto_error("proof bundle count out of range");
    }
    ProofBundleMsg msg;
    size_t off = 4;
    for (uint32_t i = 0; i < count; ++i) {
        need(payload, off, 12, "proof bundle entry");
        ProofBundleMsg::Entry entry;
        uint64_t bits = get_u64_be(payload, off);
        std::memcpy(&entry.prove_millis, &bits, 8);
        uint32_t len = get_u32_be(payload, off + 8);
        off += 12;
        need(payload, off, len, "proof bundle entry");
        entry.proof.assign(payload.begin() + off, payload.begin() + off + len);
        off += len;
        msg.entries.push_back(std::move(entry));
    }
    if (off != payload.size()) {
        proto_error("proof bundle has trailing bytes");
    }
    return msg;
}

Bytes encode_error(const ErrorMsg& msg) {
    Bytes out;
    put_u16_be(out, static_cast<uint16_t>(msg.code));
    out.insert(out.end(), msg.message.begin(), msg.message.end());
    return out;
}

ErrorMsg decode_error(std::span<const uint8_t> payload) {
    need(payload, 0, 2, "error message");
    ErrorMsg msg;
    msg.code = static_cast<WireErrorCode>(get_u16_be(payload, 0));
    msg.message.assign(payload.begin() + 2, payload.end());
    return msg;
}

Bytes encode_report_msg(const VerificationReport& report) {
    std::string text = report.to_json().dump();
    return Bytes(text.begin(), text.end());
}

VerificationReport decode_report_msg(std::span<const uint8_t> payload) {
    nlohmann::json j = nlohmann::json::parse(payload.begin(), payload.end(),
                                             nullptr, false);
    if (j.is_discarded()) {
        proto_error("report message is not JSON");
    }
    try {
        return VerificationReport::from_json(j);
    } catch (const Error& e) {
        proto_error(std::string("bad report message: ") + e.what());
    }
}

Socket::Socket(Socket&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }

Socket& Socket::operator=(Socket&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_;
        other.fd_ = -1;
    }
    return *this;
}

Socket::~Socket() { close(); }

void Socket::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

Socket Socket::connect_to(const std::string& host, uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    std::string port_str = std::to_string(port);
    if (getaddrinfo(host.c_str(), port_str.c_str(), &hints, &res) != 0) {
        throw Error(ErrorKind::ConnectFailed, "cannot resolve " + host);
    }
    int fd = -1;
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) {
            continue;
        }
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
            break;
        }
        ::close(fd);
        fd = -1;
    }
    freeaddrinfo(res);
    if (fd < 0) {
        throw Error(ErrorKind::ConnectFailed,
                    "cannot connect to " + host + ":" + port_str);
    }
    int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return Socket(fd);
}

void Socket::set_recv_timeout(int seconds) {
    timeval tv{};
    tv.tv_sec = seconds;
    setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
}

void Socket::send_frame(uint8_t type, std::span<const uint8_t> payload) {
    Bytes frame = encode_frame(type, payload);
    size_t sent = 0;
    while (sent < frame.size()) {
        ssize_t k = ::send(fd_, frame.data() + sent, frame.size() - sent,
                           MSG_NOSIGNAL);
        if (k <= 0) {
            throw Error(ErrorKind::ProtocolError, "send failed");
        }
        sent += static_cast<size_t>(k);
    }
}

namespace {

void read_exact(int fd, uint8_t* out, size_t len) {
    size_t got = 0;
    while (got < len) {
        ssize_t k = ::recv(fd, out + got, len - got, 0);
        if (k <= 0) {
            throw Error(ErrorKind::ProtocolError, "connection closed");
        }
        got += static_cast<size_t>(k);
    }
}

}  // namespace

Frame Socket::recv_frame() {
    uint8_t header[4];
    read_exact(fd_, header, 4);
    uint32_t len = get_u32_be(std::span<const uint8_t>(header, 4), 0);
    if (len < 1 || len > kMaxFramePayload + 1) {
        throw Error(ErrorKind::ProtocolError, "frame length out of range");
    }
    Frame f;
    uint8_t type = 0;
    read_exact(fd_, &type, 1);
    f.type = type;
    f.payload.resize(len - 1);
    read_exact(fd_, f.payload.data(), f.payload.size());
    return f;
}

Listener::Listener(Listener&& other) noexcept
    : fd_(other.fd_), port_(other.port_) {
    other.fd_ = -1;
}

Listener& Listener::operator=(Listener&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_;
        port_ = other.port_;
        other.fd_ = -1;
    }
    return *this;
}

Listener::~Listener() { close(); }

void Listener::close() {
    if (fd_ >= 0) {
        ::shutdown(fd_, SHUT_RDWR);
        ::close(fd_);
        fd_ = -1;
    }
}

Listener Listener::bind_to(const std::string& host, uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    std::string port_str = std::to_string(port);
    if (getaddrinfo(host.empty() ? nullptr : host.c_str(), port_str.c_str(),
                    &hints, &res) != 0) {
        throw Error(ErrorKind::ConnectFailed, "cannot resolve " + host);
    }
    int fd = -1;
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) {
            continue;
        }
        int one = 1;
        setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 &&
            ::listen(fd, 16) == 0) {
            break;
        }
        ::close(fd);
        fd = -1;
    }
    freeaddrinfo(res);
    if (fd < 0) {
        throw Error(ErrorKind::ConnectFailed,
                    "cannot listen on " + host + ":" + port_str);
    }
    sockaddr_storage addr{};
    socklen_t addr_len = sizeof(addr);
    if (getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &addr_len) != 0) {
        ::close(fd);
        throw Error(ErrorKind::ConnectFailed, "getsockname failed");
    }
    Listener l;
    l.fd_ = fd;
    if (addr.ss_family == AF_INET) {
        l.port_ = ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
    } else {
        l.port_ = ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port);
    }
    return l;
}

std::optional<Socket> Listener::accept_one() {
    while (true) {
        int fd = ::accept(fd_, nullptr, nullptr);
        if (fd < 0) {
            if (errno == EINTR) {
                continue;
            }
            return std::nullopt;  // listener closed
        }
        int one = 1;
        setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        return Socket(fd);
    }
}

}  // namespace zklora
