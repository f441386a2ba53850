#include "zklora/mpi.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <future>

namespace zklora {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

WireErrorCode wire_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::ProfileMismatch:
        case ErrorKind::UnsupportedProfile:
            return WireErrorCode::ProfileMismatch;
        case ErrorKind::UnknownModule:
            return WireErrorCode::UnknownModule;
        case ErrorKind::DimMismatch:
        case ErrorKind::LengthMismatch:
            return WireErrorCode::DimMismatch;
        case ErrorKind::BudgetExceeded:
            return WireErrorCode::BudgetExceeded;
        case ErrorKind::OverflowBound:
        case ErrorKind::Overflow:
            return WireErrorCode::OverflowBound;
        case ErrorKind::ProtocolError:
        case ErrorKind::CorruptHeader:
        case ErrorKind::BadMagic:
        case ErrorKind::NonFinite:
            return WireErrorCode::Protocol;
        default:
            return WireErrorCode::Internal;
    }
}

ErrorKind kind_for_wire(WireErrorCode code) {
    switch (code) {
        case WireErrorCode::Protocol: return ErrorKind::ProtocolError;
        case WireErrorCode::ProfileMismatch: return ErrorKind::ProfileMismatch;
        case WireErrorCode::UnknownModule: return ErrorKind::UnknownModule;
        case WireErrorCode::DimMismatch: return ErrorKind::DimMismatch;
        case WireErrorCode::BudgetExceeded: return ErrorKind::BudgetExceeded;
        case WireErrorCode::OverflowBound: return ErrorKind::OverflowBound;
        case WireErrorCode::Internal: return ErrorKind::Internal;
    }
    return ErrorKind::ProtocolError;
}

// Receives one frame, surfacing a peer ERROR as the matching exception.
Frame expect_frame(Socket& sock, MsgType want) {
    Frame f = sock.recv_frame();
    if (f.type == static_cast<uint8_t>(MsgType::WireError)) {
        ErrorMsg err = decode_error(f.payload);
        throw Error(kind_for_wire(err.code),
                    std::string(wire_error_name(err.code)) + ": " + err.message);
    }
    if (f.type != static_cast<uint8_t>(want)) {
        throw Error(ErrorKind::ProtocolError, "unexpected message type");
    }
    return f;
}

std::string session_hex(const std::array<uint8_t, 16>& session_id) {
    return hex_encode(std::span<const uint8_t>(session_id.data(), 16));
}

void write_file_atomic(const fs::path& path, std::span<const uint8_t> data) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(ErrorKind::IoError, "cannot open " + tmp.string());
        }
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size()));
        if (!out) {
            throw Error(ErrorKind::IoError, "short write to " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

nlohmann::json blinders_json(const RowBlinders& blinders) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& rho : blinders.rho) {
        arr.push_back(hex_encode(std::span<const uint8_t>(rho.v.data(), 32)));
    }
    return arr;
}

RowBlinders blinders_from_json(const nlohmann::json& arr) {
    RowBlinders out;
    for (const auto& item : arr) {
        Bytes raw = hex_decode(item.get<std::string>());
        out.rho.push_back(fe_decode(raw));
    }
    return out;
}

std::array<uint8_t, 16> session_from_hex(const std::string& hex) {
    Bytes raw = hex_decode(hex);
    if (raw.size() != 16) {
        throw Error(ErrorKind::CorruptHeader, "session id must be 16 bytes");
    }
    std::array<uint8_t, 16> out{};
    std::copy(raw.begin(), raw.end(), out.begin());
    return out;
}

}  // namespace

ContributorServer::ContributorServer(ServeConfig config)
    : cfg_(std::move(config)) {
    cfg_.profile.validate();
    cfg_.manifest.validate();

    auto key_t0 = Clock::now();
    key_ = derive_pedersen_key(cfg_.profile, manifest_key_width(cfg_.manifest));
    double key_ms = ms_since(key_t0);

    std::unique_ptr<RandomSource> rng;
    if (cfg_.insecure_seed) {
        rng = std::make_unique<SeededRandom>(*cfg_.insecure_seed);
    } else {
        rng = std::make_unique<OsRandom>();
    }

    double amortized = cfg_.manifest.modules.empty()
                           ? 0.0
                           : key_ms / double(cfg_.manifest.modules.size());
    for (const auto& info : cfg_.manifest.modules) {
        LoraWeights weights = load_lora_weights(info, cfg_.lora_tensors);
        auto t0 = Clock::now();
        ModuleWitness witness = build_module_witness(info, weights, key_, *rng);
        settings_ms_[info.module_id] = ms_since(t0) + amortized;
        digest_a_[info.module_id] = commitment_digest(witness.commit_a);
        digest_b_[info.module_id] = commitment_digest(witness.commit_b);
        witnesses_[info.module_id] = std::move(witness);
    }

    if (cfg_.state_dir) {
        fs::create_directories(fs::path(*cfg_.state_dir) / "sessions");
        budget_ = OpeningBudget::load(fs::path(*cfg_.state_dir) / "budget.json");
    }
    for (const auto& info : cfg_.manifest.modules) {
        if (cfg_.budget_limit) {
            budget_.set_limit(digest_a_.at(info.module_id), *cfg_.budget_limit);
            budget_.set_limit(digest_b_.at(info.module_id), *cfg_.budget_limit);
        } else {
            uint64_t limit = default_opening_limit(info.r);
            budget_.ensure_limit(digest_a_.at(info.module_id), limit);
            budget_.ensure_limit(digest_b_.at(info.module_id), limit);
        }
    }

    manifest_msg_.manifest = cfg_.manifest;
    manifest_msg_.settings_ms = settings_ms_;
    for (const auto& [id, witness] : witnesses_) {
        manifest_msg_.commit_a[id] = serialize_commitments(witness.commit_a);
        manifest_msg_.commit_b[id] = serialize_commitments(witness.commit_b);
    }
}

ContributorServer::~ContributorServer() { stop(); }

void ContributorServer::start() {
    if (started_) {
        return;
    }
    listener_ = Listener::bind_to(cfg_.host, cfg_.port);
    port_ = listener_.port();
    started_ = true;
    accept_thread_ = std::thread(&ContributorServer::accept_loop, this);
}

void ContributorServer::stop() {
    if (!started_) {
        return;
    }
    started_ = false;
    listener_.close();
    if (accept_thread_.joinable()) {
        accept_thread_.join();
    }
    reap_sessions(true);
    if (cfg_.state_dir) {
        std::lock_guard<std::mutex> lock(budget_mutex_);
        budget_.save(fs::path(*cfg_.state_dir) / "budget.json");
    }
}

OpeningBudget ContributorServer::budget_snapshot() const {
    std::lock_guard<std::mutex> lock(budget_mutex_);
    return budget_;
}

std::optional<VerificationReport> ContributorServer::last_report() const {
    std::lock_guard<std::mutex> lock(report_mutex_);
    return last_report_;
}

void ContributorServer::accept_loop() {
    while (auto sock = listener_.accept_one()) {
        reap_sessions(false);
        auto slot = std::make_unique<SessionSlot>();
        SessionSlot* raw = slot.get();
        slot->thread = std::thread([this, raw](Socket s) {
            session_main(std::move(s));
            raw->done = true;
        }, std::move(*sock));
        std::lock_guard<std::mutex> lock(sessions_mutex_);
        sessions_.push_back(std::move(slot));
    }
}

// Joins finished session threads so long-running servers do not accumulate
// unjoined threads; join_all additionally waits for live sessions (stop path).
void ContributorServer::reap_sessions(bool join_all) {
    std::vector<std::unique_ptr<SessionSlot>> to_join;
    {
        std::lock_guard<std::mutex> lock(sessions_mutex_);
        auto keep = sessions_.begin();
        for (auto& slot : sessions_) {
            if (join_all || slot->done) {
                to_join.push_back(std::move(slot));
            } else {
                *keep++ = std::move(slot);
            }
        }
        sessions_.erase(keep, sessions_.end());
    }
    for (auto& slot : to_join) {
        if (slot->thread.joinable()) {
            slot->thread.join();
        }
    }
}

void ContributorServer::persist_session_header(
    const std::array<uint8_t, 16>& session_id) {
    fs::path dir =
        fs::path(*cfg_.state_dir) / "sessions" / session_hex(session_id);
    fs::create_directories(dir);
    nlohmann::json j;
    j["session_id"] = session_hex(session_id);
    j["profile"] = nlohmann::json::parse(cfg_.profile.canonical_json());
    j["manifest"] = cfg_.manifest.to_json();
    write_json_file((dir / "session.json").string(), j);
}

void ContributorServer::persist_witness(
    const std::array<uint8_t, 16>& session_id, const LoraModuleInfo& info,
    const QuantizedMatrix& x_q, const QuantizedMatrix& delta_q) {
    fs::path dir =
        fs::path(*cfg_.state_dir) / "sessions" / session_hex(session_id);
    const ModuleWitness& witness = witnesses_.at(info.module_id);
    TensorMap t;
    t["a_q"] = tensor_from_quantized(witness.a_q);
    t["b_q"] = tensor_from_quantized(witness.b_q);
    t["x_q"] = tensor_from_quantized(x_q);
    t["delta_q"] = tensor_from_quantized(delta_q);
    std::string id = std::to_string(info.module_id);
    write_tensors((dir / ("module_" + id + ".zklt")).string(), t);
    nlohmann::json secrets;
    secrets["rho_a"] = blinders_json(witness.a_blinders);
    secrets["rho_b"] = blinders_json(witness.b_blinders);
    write_json_file((dir / ("secrets_" + id + ".json")).string(), secrets);
}

void ContributorServer::session_main(Socket sock) {
    sock.set_recv_timeout(120);
    auto send_error = [&sock](WireErrorCode code, const std::string& what) {
        try {
            sock.send_frame(static_cast<uint8_t>(MsgType::WireError),
                            encode_error(ErrorMsg{code, what}));
        } catch (...) {
        }
    };

    std::array<uint8_t, 16> session_id{};
    std::map<uint32_t, std::pair<QuantizedMatrix, QuantizedMatrix>> cache;
    int64_t last_module = -1;
    uint32_t session_m = 0;
    bool hello_done = false;

    try {
        while (true) {
            Frame f;
            try {
                f = sock.recv_frame();
            } catch (const Error&) {
                return;  // peer closed (or timed out); session over
            }
            if (!hello_done) {
                if (f.type != static_cast<uint8_t>(MsgType::Hello)) {
                    throw Error(ErrorKind::ProtocolError, "expected HELLO");
                }
                HelloMsg hello = decode_hello(f.payload);
                if (hello.role != kRoleUser) {
                    throw Error(ErrorKind::ProtocolError, "peer is not a user");
                }
                DeploymentProfile peer =
                    DeploymentProfile::from_json_text(hello.profile_json);
                if (peer.canonical_json() != cfg_.profile.canonical_json()) {
                    throw Error(ErrorKind::ProfileMismatch,
                                "profile does not match " +
                                    cfg_.profile.profile_id);
                }
                session_id = hello.session_id;
                HelloMsg reply;
                reply.role = kRoleContributor;
                reply.session_id = session_id;
                reply.profile_json = cfg_.profile.canonical_json();
                sock.send_frame(static_cast<uint8_t>(MsgType::Hello),
                                encode_hello(reply));
                sock.send_frame(static_cast<uint8_t>(MsgType::Manifest),
                                encode_manifest_msg(manifest_msg_));
                if (cfg_.state_dir) {
                    persist_session_header(session_id);
                }
                hello_done = true;
                continue;
            }

            switch (static_cast<MsgType>(f.type)) {
                case MsgType::ActRequest: {
                    ActRequestMsg req = decode_act_request(f.payload);
                    const LoraModuleInfo* info =
                        cfg_.manifest.find_module(req.module_id);
                    if (!info) {
                        throw Error(ErrorKind::UnknownModule,
                                    "module " + std::to_string(req.module_id));
                    }
                    if (int64_t(req.module_id) <= last_module) {
                        throw Error(ErrorKind::ProtocolError,
                                    "module ids must ascend within a session");
                    }
                    if (req.x.dtype != "f32" || req.x.shape.size() != 2 ||
                        req.x.shape[0] != info->n || req.x.shape[1] == 0) {
                        throw Error(ErrorKind::DimMismatch,
                                    "activation tensor shape");
                    }
                    if (session_m == 0) {
                        session_m = req.x.shape[1];
                    } else if (req.x.shape[1] != session_m) {
                        throw Error(ErrorKind::DimMismatch,
                                    "batch width changed mid-session");
                    }
                    Matrix x = matrix_from_tensor(req.x);
                    QuantizedMatrix x_q = quantize(x, info->scale_bits);
                    OverflowCheck oc = overflow_check(
                        info->n, info->r, session_m, info->scale_bits,
                        info->weight_bound, info->weight_bound,
                        max_abs_entry(x_q), cfg_.profile.p);
                    if (!oc.ok) {
                        throw Error(ErrorKind::OverflowBound,
                                    "activation magnitude breaks the bound");
                    }
                    const ModuleWitness& witness = witnesses_.at(req.module_id);
                    QuantizedMatrix delta_q =
                        delta_exact(witness.a_q, witness.b_q, x_q);
                    Matrix delta = dequantize(delta_q, info->scale_bits);
                    ActResponseMsg resp;
                    resp.module_id = req.module_id;
                    resp.delta_q = tensor_from_quantized(delta_q);
                    resp.delta_f = tensor_from_matrix(delta);
                    sock.send_frame(static_cast<uint8_t>(MsgType::ActResponse),
                                    encode_act_response(resp));
                    if (cfg_.state_dir) {
                        persist_witness(session_id, *info, x_q, delta_q);
                    }
                    cache[req.module_id] = {std::move(x_q), std::move(delta_q)};
                    last_module = req.module_id;
                    break;
                }
                case MsgType::ProofRequest: {
                    {
                        // all-or-nothing charge across the session's modules
                        std::lock_guard<std::mutex> lock(budget_mutex_);
                        OpeningBudget staged = budget_;
                        for (const auto& kv : cache) {
                            staged.charge(digest_a_.at(kv.first),
                                          digest_b_.at(kv.first), session_id,
                                          kv.first);
                        }
                        budget_ = std::move(staged);
                        if (cfg_.state_dir) {
                            budget_.save(fs::path(*cfg_.state_dir) /
                                         "budget.json");
                        }
                    }
                    auto prove_one = [&](uint32_t id, const QuantizedMatrix& xq,
                                         const QuantizedMatrix& dq) {
                        const LoraModuleInfo* info =
                            cfg_.manifest.find_module(id);
                        auto t0 = Clock::now();
                        LoraProof proof =
                            prove_module(cfg_.profile, *info,
                                         witnesses_.at(id), session_id, xq, dq,
                                         nullptr);
                        ProofBundleMsg::Entry entry;
                        entry.prove_millis = ms_since(t0);
                        entry.proof = encode_proof(proof);
                        return entry;
                    };
                    ProofBundleMsg bundle;
                    if (cfg_.parallel_prove) {
                        std::vector<std::future<ProofBundleMsg::Entry>> futures;
                        for (const auto& kv : cache) {
                            futures.push_back(std::async(
                                std::launch::async, prove_one, kv.first,
                                std::cref(kv.second.first),
                                std::cref(kv.second.second)));
                        }
                        for (auto& fut : futures) {
                            bundle.entries.push_back(fut.get());
                        }
                    } else {
                        for (const auto& kv : cache) {
                            bundle.entries.push_back(prove_one(
                                kv.first, kv.second.first, kv.second.second));
                        }
                    }
                    if (cfg_.state_dir) {
                        fs::path dir = fs::path(*cfg_.state_dir) / "sessions" /
                                       session_hex(session_id);
                        size_t idx = 0;
                        for (const auto& kv : cache) {
                            write_file_atomic(
                                dir / ("proof_" + std::to_string(kv.first) +
                                       ".zklp"),
                                bundle.entries[idx].proof);
                            ++idx;
                        }
                    }
                    sock.send_frame(static_cast<uint8_t>(MsgType::ProofBundle),
                                    encode_proof_bundle(bundle));
                    cache.clear();
                    break;
                }
                case MsgType::VerifyReport: {
                    VerificationReport rep = decode_report_msg(f.payload);
                    std::lock_guard<std::mutex> lock(report_mutex_);
                    last_report_ = std::move(rep);
                    break;
                }
                default:
                    throw Error(ErrorKind::ProtocolError,
                                "unexpected message type");
            }
        }
    } catch (const Error& e) {
        send_error(wire_code_for(e.kind()), e.what());
    } catch (const std::exception& e) {
        send_error(WireErrorCode::Internal, e.what());
    }
}

Matrix forward_pass(const ModelConfig& model, const TensorMap& tensors,
                    const Matrix& input, const SlotHook& hook) {
    if (input.rows != model.input_dim() || input.cols == 0) {
        throw Error(ErrorKind::DimMismatch, "input does not match model");
    }
    Matrix x = input;
    for (size_t li = 0; li < model.layers.size(); ++li) {
        for (const SlotConfig& slot : model.layers[li]) {
            Matrix x32 = narrow_to_f32(x);
            Matrix base =
                mat_mul(matrix_from_tensor(tensors.at(slot.weight)), x32);
            x = hook ? hook(li, slot, x32, std::move(base)) : std::move(base);
        }
        if (li + 1 < model.layers.size() && model.activation == "relu") {
            relu_inplace(x);
        }
    }
    return x;
}

namespace {

void persist_user_session(const std::string& dir, const BundleContext& ctx,
                          const ManifestMsg& man, const InferenceResult& res) {
    fs::create_directories(dir);
    nlohmann::json j;
    j["session_id"] = session_hex(ctx.session_id);
    j["profile"] = nlohmann::json::parse(ctx.profile.canonical_json());
    j["manifest"] = ctx.manifest.to_json();
    nlohmann::json commits = nlohmann::json::object();
    for (const auto& [id, bytes] : man.commit_a) {
        commits[std::to_string(id)] = {
            {"a", hex_encode(bytes)},
            {"b", hex_encode(man.commit_b.at(id))}};
    }
    j["commitments"] = commits;
    nlohmann::json settings = nlohmann::json::object();
    for (const auto& [id, ms] : res.settings_ms) {
        settings[std::to_string(id)] = ms;
    }
    j["settings_ms"] = settings;
    nlohmann::json prove = nlohmann::json::object();
    for (const auto& [id, ms] : res.prove_ms) {
        prove[std::to_string(id)] = ms;
    }
    j["prove_ms"] = prove;
    write_json_file((fs::path(dir) / "session.json").string(), j);

    TensorMap records;
    for (const auto& [id, q] : ctx.x_q) {
        records["x_q/" + std::to_string(id)] = tensor_from_quantized(q);
    }
    for (const auto& [id, q] : ctx.delta_q) {
        records["delta_q/" + std::to_string(id)] = tensor_from_quantized(q);
    }
    write_tensors((fs::path(dir) / "records.zklt").string(), records);
}

}  // namespace

InferenceResult run_user_inference(const InferConfig& cfg,
                                   const Matrix& input) {
    cfg.model.validate(cfg.model_tensors);
    InferenceResult res;
    OsRandom os_rng;
    RandomSource& rng = cfg.rng ? *cfg.rng : os_rng;
    rng.fill(res.session_id.data(), res.session_id.size());

    if (cfg.host.empty()) {
        res.output = forward_pass(cfg.model, cfg.model_tensors, input, nullptr);
        res.report.accept = true;  // vacuous: nothing was delegated
        return res;
    }

    Socket sock = Socket::connect_to(cfg.host, cfg.port);
    HelloMsg hello;
    hello.session_id = res.session_id;
    hello.profile_json = cfg.profile.canonical_json();
    sock.send_frame(static_cast<uint8_t>(MsgType::Hello), encode_hello(hello));
    HelloMsg peer = decode_hello(expect_frame(sock, MsgType::Hello).payload);
    if (peer.role != kRoleContributor ||
        DeploymentProfile::from_json_text(peer.profile_json).canonical_json() !=
            cfg.profile.canonical_json()) {
        throw Error(ErrorKind::ProfileMismatch, "contributor profile differs");
    }
    ManifestMsg man =
        decode_manifest_msg(expect_frame(sock, MsgType::Manifest).payload);
    man.manifest.validate(&cfg.model);
    res.manifest = man.manifest;
    res.settings_ms = man.settings_ms;

    BundleContext ctx;
    ctx.profile = cfg.profile;
    ctx.manifest = man.manifest;
    ctx.session_id = res.session_id;
    ctx.key = derive_pedersen_key(cfg.profile, manifest_key_width(man.manifest));
    for (const auto& info : man.manifest.modules) {
        auto a = man.commit_a.find(info.module_id);
        auto b = man.commit_b.find(info.module_id);
        if (a == man.commit_a.end() || b == man.commit_b.end()) {
            throw Error(ErrorKind::ProtocolError,
                        "manifest lacks commitments for module " +
                            std::to_string(info.module_id));
        }
        ctx.commit_a[info.module_id] = deserialize_commitments(a->second);
        ctx.commit_b[info.module_id] = deserialize_commitments(b->second);
    }

    SlotHook hook = [&](size_t li, const SlotConfig& slot, const Matrix& x32,
                        Matrix base) -> Matrix {
        const LoraModuleInfo* info =
            man.manifest.find_target(slot_target(li, slot.slot));
        if (!info) {
            return base;
        }
        ActRequestMsg req;
        req.module_id = info->module_id;
        req.x = tensor_from_matrix(x32);
        sock.send_frame(static_cast<uint8_t>(MsgType::ActRequest),
                        encode_act_request(req));
        ActResponseMsg resp =
            decode_act_response(expect_frame(sock, MsgType::ActResponse).payload);
        std::vector<uint32_t> want{info->d, static_cast<uint32_t>(x32.cols)};
        if (resp.module_id != info->module_id || resp.delta_q.dtype != "i64" ||
            resp.delta_q.shape != want || resp.delta_f.dtype != "f32" ||
            resp.delta_f.shape != want) {
            throw Error(ErrorKind::ProtocolError, "malformed ACT_RESPONSE");
        }
        QuantizedMatrix delta_q = quantized_from_tensor(resp.delta_q, 3);
        Matrix delta_f = matrix_from_tensor(resp.delta_f);
        QuantizedMatrix x_q = quantize(x32, info->scale_bits);
        OverflowCheck oc = overflow_check(
            info->n, info->r, static_cast<uint32_t>(x32.cols),
            info->scale_bits, info->weight_bound, info->weight_bound,
            max_abs_entry(x_q), cfg.profile.p);
        if (!oc.ok) {
            throw Error(ErrorKind::OverflowBound,
                        "activation magnitude breaks the bound");
        }
        // Delta must be exactly the dequantization of the proof-bound
        // integers; anything else breaks the chain of custody.
        Matrix deq = dequantize(delta_q, info->scale_bits);
        for (size_t i = 0; i < deq.data.size(); ++i) {
            if (static_cast<float>(deq.data[i]) !=
                static_cast<float>(delta_f.data[i])) {
                throw Error(ErrorKind::ProtocolError,
                            "delta_float does not match delta_q");
            }
        }
        ctx.x_q.emplace(info->module_id, std::move(x_q));
        ctx.delta_q.emplace(info->module_id, std::move(delta_q));
        return mat_add(base, delta_f);
    };
    res.output = forward_pass(cfg.model, cfg.model_tensors, input, hook);

    sock.send_frame(static_cast<uint8_t>(MsgType::ProofRequest), {});
    ProofBundleMsg bundle =
        decode_proof_bundle(expect_frame(sock, MsgType::ProofBundle).payload);
    std::vector<LoraProof> proofs;
    proofs.reserve(bundle.entries.size());
    for (const auto& entry : bundle.entries) {
        LoraProof proof = decode_proof(entry.proof);
        res.prove_ms[proof.header.module_id] = entry.prove_millis;
        proofs.push_back(std::move(proof));
    }
    res.report = verify_bundle(ctx, proofs);
    try {
        sock.send_frame(static_cast<uint8_t>(MsgType::VerifyReport),
                        encode_report_msg(res.report));
    } catch (const Error&) {
        // courtesy message only
    }
    if (cfg.session_dir) {
        persist_user_session(*cfg.session_dir, ctx, man, res);
    }
    return res;
}

Matrix monolithic_quantized_reference(const ModelConfig& model,
                                      const TensorMap& model_tensors,
                                      const LoraManifest& manifest,
                                      const TensorMap& lora_tensors,
                                      const Matrix& input) {
    SlotHook hook = [&](size_t li, const SlotConfig& slot, const Matrix& x32,
                        Matrix base) -> Matrix {
        const LoraModuleInfo* info =
            manifest.find_target(slot_target(li, slot.slot));
        if (!info) {
            return base;
        }
        LoraWeights w = load_lora_weights(*info, lora_tensors);
        QuantizedMatrix a_q = quantize(w.a, info->scale_bits);
        QuantizedMatrix b_q = quantize(w.b, info->scale_bits);
        QuantizedMatrix x_q = quantize(x32, info->scale_bits);
        QuantizedMatrix delta_q = delta_exact(a_q, b_q, x_q);
        Matrix delta = narrow_to_f32(dequantize(delta_q, info->scale_bits));
        return mat_add(base, delta);
    };
    return forward_pass(model, model_tensors, input, hook);
}

Matrix monolithic_float_reference(const ModelConfig& model,
                                  const TensorMap& model_tensors,
                                  const LoraManifest& manifest,
                                  const TensorMap& lora_tensors,
                                  const Matrix& input) {
    SlotHook hook = [&](size_t li, const SlotConfig& slot, const Matrix& x32,
                        Matrix base) -> Matrix {
        const LoraModuleInfo* info =
            manifest.find_target(slot_target(li, slot.slot));
        if (!info) {
            return base;
        }
        LoraWeights w = load_lora_weights(*info, lora_tensors);
        return mat_add(base, mat_mul(w.b, mat_mul(w.a, x32)));
    };
    return forward_pass(model, model_tensors, input, hook);
}

void offline_prove(const std::string& witness_dir, const std::string& out_dir,
                   OpeningBudget* budget) {
    fs::path dir(witness_dir);
    if (!fs::exists(dir / "session.json")) {
        throw Error(ErrorKind::MissingWitness,
                    "no session.json in " + witness_dir);
    }
    nlohmann::json sj = read_json_file((dir / "session.json").string());
    DeploymentProfile profile =
        DeploymentProfile::from_json_text(sj.at("profile").dump());
    LoraManifest manifest = LoraManifest::from_json(sj.at("manifest"));
    std::array<uint8_t, 16> session_id =
        session_from_hex(sj.at("session_id").get<std::string>());
    PedersenKey key = derive_pedersen_key(profile, manifest_key_width(manifest));

    std::vector<uint32_t> ids;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::string name = entry.path().filename().string();
        if (name.rfind("module_", 0) == 0 &&
            name.size() > 12 && name.ends_with(".zklt")) {
            ids.push_back(static_cast<uint32_t>(
                std::stoul(name.substr(7, name.size() - 12))));
        }
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) {
        throw Error(ErrorKind::MissingWitness,
                    "no witness modules in " + witness_dir);
    }
    fs::create_directories(out_dir);

    for (uint32_t id : ids) {
        const LoraModuleInfo* info = manifest.find_module(id);
        if (!info) {
            throw Error(ErrorKind::UnknownModule,
                        "witness module " + std::to_string(id) +
                            " not in manifest");
        }
        std::string sid = std::to_string(id);
        fs::path module_file = dir / ("module_" + sid + ".zklt");
        fs::path secrets_file = dir / ("secrets_" + sid + ".json");
        if (!fs::exists(secrets_file)) {
            throw Error(ErrorKind::MissingWitness,
                        "missing blinders for module " + sid);
        }
        TensorMap t = read_tensors(module_file.string());
        auto tensor = [&](const char* name) -> const Tensor& {
            auto it = t.find(name);
            if (it == t.end()) {
                throw Error(ErrorKind::MissingWitness,
                            std::string("witness tensor ") + name +
                                " missing for module " + sid);
            }
            return it->second;
        };
        ModuleWitness witness;
        witness.a_q = quantized_from_tensor(tensor("a_q"), 1);
        witness.b_q = quantized_from_tensor(tensor("b_q"), 1);
        QuantizedMatrix x_q = quantized_from_tensor(tensor("x_q"), 1);
        QuantizedMatrix delta_q = quantized_from_tensor(tensor("delta_q"), 3);
        nlohmann::json secrets = read_json_file(secrets_file.string());
        witness.a_blinders = blinders_from_json(secrets.at("rho_a"));
        witness.b_blinders = blinders_from_json(secrets.at("rho_b"));
        witness.commit_a = commit_rows_with(witness.a_q, key, witness.a_blinders);
        witness.commit_b = commit_rows_with(witness.b_q, key, witness.b_blinders);

        LoraProof proof = prove_module(profile, *info, witness, session_id,
                                       x_q, delta_q, budget);
        write_proof_file(
            (fs::path(out_dir) / ("proof_" + sid + ".zklp")).string(), proof);
    }
}

VerificationReport offline_verify(const std::string& proof_dir,
                                  const std::string& session_dir) {
    fs::path sdir(session_dir);
    if (!fs::exists(sdir / "session.json")) {
        throw Error(ErrorKind::MissingWitness,
                    "no session.json in " + session_dir);
    }
    nlohmann::json sj = read_json_file((sdir / "session.json").string());
    BundleContext ctx;
    ctx.profile = DeploymentProfile::from_json_text(sj.at("profile").dump());
    ctx.manifest = LoraManifest::from_json(sj.at("manifest"));
    ctx.session_id = session_from_hex(sj.at("session_id").get<std::string>());
    ctx.key = derive_pedersen_key(ctx.profile, manifest_key_width(ctx.manifest));
    try {
        for (const auto& [key_str, val] : sj.at("commitments").items()) {
            uint32_t id = static_cast<uint32_t>(std::stoul(key_str));
            ctx.commit_a[id] =
                deserialize_commitments(hex_decode(val.at("a").get<std::string>()));
            ctx.commit_b[id] =
                deserialize_commitments(hex_decode(val.at("b").get<std::string>()));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::CorruptHeader,
                    std::string("bad session commitments: ") + e.what());
    }
    if (!fs::exists(sdir / "records.zklt")) {
        throw Error(ErrorKind::MissingWitness,
                    "no activation records in " + session_dir);
    }
    TensorMap records = read_tensors((sdir / "records.zklt").string());
    for (const auto& info : ctx.manifest.modules) {
        std::string sid = std::to_string(info.module_id);
        auto x = records.find("x_q/" + sid);
        auto dq = records.find("delta_q/" + sid);
        if (x == records.end() || dq == records.end()) {
            throw Error(ErrorKind::MissingWitness,
                        "activation record missing for module " + sid);
        }
        ctx.x_q[info.module_id] = quantized_from_tensor(x->second, 1);
        ctx.delta_q[info.module_id] = quantized_from_tensor(dq->second, 3);
    }

    if (!fs::is_directory(proof_dir)) {
        throw Error(ErrorKind::IoError, "not a directory: " + proof_dir);
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(proof_dir)) {
        if (entry.path().extension() == ".zklp") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<LoraProof> proofs;
    proofs.reserve(files.size());
    for (const auto& file : files) {
        proofs.push_back(read_proof_file(file.string()));
    }
    return verify_bundle(ctx, proofs);
}

}  // namespace zklora
