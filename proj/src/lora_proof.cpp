#include "zklora/lora_proof.hpp"

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace zklora {

namespace {

template <size_t N>
std::string hex_of(const std::array<uint8_t, N>& a) {
    return hex_encode(std::span<const uint8_t>(a.data(), a.size()));
}

template <size_t N>
std::array<uint8_t, N> hex_to(const std::string& hex) {
    Bytes raw = hex_decode(hex);
    if (raw.size() != N) {
        throw Error(ErrorKind::CorruptProofFile, "bad digest length in header");
    }
    std::array<uint8_t, N> out;
    std::copy(raw.begin(), raw.end(), out.begin());
    return out;
}

Bytes fe_vec_bytes(std::span<const FieldElement> v) {
    Bytes out;
    out.reserve(v.size() * 32);
    for (const auto& e : v) {
        out.insert(out.end(), e.v.begin(), e.v.end());
    }
    return out;
}

// rows x cols matrix times cols vector, all in the field.
std::vector<FieldElement> fmat_vec(const QuantizedMatrix& m,
                                   std::span<const FieldElement> x) {
    if (x.size() != m.cols) {
        throw Error(ErrorKind::LengthMismatch, "matrix-vector dims");
    }
    std::vector<FieldElement> out(m.rows, fe_zero());
    for (uint32_t i = 0; i < m.rows; ++i) {
        FieldElement acc = fe_zero();
        for (uint32_t j = 0; j < m.cols; ++j) {
            acc = fe_add(acc, fe_mul(fe_from_signed(m.at(i, j)), x[j]));
        }
        out[i] = acc;
    }
    return out;
}

FieldElement fdot(std::span<const FieldElement> a,
                  std::span<const FieldElement> b) {
    if (a.size() != b.size()) {
        throw Error(ErrorKind::LengthMismatch, "inner product dims");
    }
    FieldElement acc = fe_zero();
    for (size_t i = 0; i < a.size(); ++i) {
        acc = fe_add(acc, fe_mul(a[i], b[i]));
    }
    return acc;
}

// The base transcript both parties rebuild before any challenge is drawn.
Transcript proof_transcript(const DeploymentProfile& profile,
                            const LoraModuleInfo& info,
                            const ProofHeader& header) {
    Transcript t(profile);
    t.absorb("profile", profile.canonical_json());
    t.absorb("manifest", info.canonical_row());
    t.absorb("commit/A", header.commit_a_digest);
    t.absorb("commit/B", header.commit_b_digest);
    t.absorb("x-digest", header.x_digest);
    t.absorb("delta-digest", header.delta_digest);
    return t;
}

void put_u16_le(Bytes& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32_le(Bytes& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
}

constexpr uint16_t kProofVersion = 1;
constexpr size_t kMaxProofDim = 1u << 24;

}  // namespace

nlohmann::json ProofHeader::to_json() const {
    nlohmann::json j;
    j["profile_id"] = profile_id;
    j["session_id"] = hex_of(session_id);
    j["module_id"] = module_id;
    j["n"] = n;
    j["r"] = r;
    j["d"] = d;
    j["m"] = m;
    j["scale_bits"] = scale_bits;
    j["x_digest"] = hex_of(x_digest);
    j["delta_digest"] = hex_of(delta_digest);
    j["commit_a"] = hex_of(commit_a_digest);
    j["commit_b"] = hex_of(commit_b_digest);
    return j;
}

ProofHeader ProofHeader::from_json(const nlohmann::json& j) {
    ProofHeader h;
    try {
        h.profile_id = j.at("profile_id").get<std::string>();
        h.session_id = hex_to<16>(j.at("session_id").get<std::string>());
        h.module_id = j.at("module_id").get<uint32_t>();
        h.n = j.at("n").get<uint32_t>();
        h.r = j.at("r").get<uint32_t>();
        h.d = j.at("d").get<uint32_t>();
        h.m = j.at("m").get<uint32_t>();
        h.scale_bits = j.at("scale_bits").get<int>();
        h.x_digest = hex_to<32>(j.at("x_digest").get<std::string>());
        h.delta_digest = hex_to<32>(j.at("delta_digest").get<std::string>());
        h.commit_a_digest = hex_to<32>(j.at("commit_a").get<std::string>());
        h.commit_b_digest = hex_to<32>(j.at("commit_b").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::CorruptProofFile,
                    std::string("bad proof header: ") + e.what());
    }
    return h;
}

Bytes encode_proof(const LoraProof& proof) {
    const ProofHeader& h = proof.header;
    if (proof.v.size() != h.r || proof.opening_a.w.size() != h.n ||
        proof.opening_b.w.size() != h.r) {
        throw Error(ErrorKind::LengthMismatch, "proof vector lengths");
    }
    std::string header = h.to_json().dump();
    Bytes out;
    out.reserve(10 + header.size() + 32 * (size_t(h.r) * 2 + h.n + 2));
    out.insert(out.end(), {'Z', 'K', 'L', 'P'});
    put_u16_le(out, kProofVersion);
    put_u32_le(out, static_cast<uint32_t>(header.size()));
    out.insert(out.end(), header.begin(), header.end());
    auto put_vec = [&out](std::span<const FieldElement> v) {
        for (const auto& e : v) {
            out.insert(out.end(), e.v.begin(), e.v.end());
        }
    };
    put_vec(proof.v);
    put_vec(proof.opening_a.w);
    out.insert(out.end(), proof.opening_a.rho.v.begin(),
               proof.opening_a.rho.v.end());
    put_vec(proof.opening_b.w);
    out.insert(out.end(), proof.opening_b.rho.v.begin(),
               proof.opening_b.rho.v.end());
    return out;
}

LoraProof decode_proof(std::span<const uint8_t> data) {
    if (data.size() < 10) {
        throw Error(ErrorKind::CorruptProofFile, "proof blob too short");
    }
    if (std::memcmp(data.data(), "ZKLP", 4) != 0) {
        throw Error(ErrorKind::BadMagic, "not a proof file");
    }
    uint16_t version = uint16_t(data[4]) | uint16_t(data[5]) << 8;
    if (version != kProofVersion) {
        throw Error(ErrorKind::VersionUnsupported, "proof version");
    }
    uint32_t header_len = 0;
    for (int i = 3; i >= 0; --i) {
        header_len = (header_len << 8) | data[6 + i];
    }
    if (header_len > data.size() - 10) {
        throw Error(ErrorKind::CorruptProofFile, "header length out of range");
    }
    std::string header_text(reinterpret_cast<const char*>(data.data() + 10),
                            header_len);
    nlohmann::json j = nlohmann::json::parse(header_text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw Error(ErrorKind::CorruptProofFile, "proof header is not JSON");
    }
    LoraProof proof;
    proof.header = ProofHeader::from_json(j);
    const ProofHeader& h = proof.header;
    if (h.n > kMaxProofDim || h.r > kMaxProofDim || h.d > kMaxProofDim ||
        h.m > kMaxProofDim) {
        throw Error(ErrorKind::CorruptProofFile, "proof dims out of range");
    }
    size_t body = 32 * (size_t(h.r) * 2 + h.n + 2);
    if (data.size() != 10 + size_t(header_len) + body) {
        throw Error(ErrorKind::CorruptProofFile, "proof body length mismatch");
    }
    size_t off = 10 + header_len;
    auto take = [&](size_t count, std::vector<FieldElement>& out) {
        out.reserve(count);
        for (size_t i = 0; i < count; ++i) {
            auto chunk = data.subspan(off, 32);
            if (!fe_is_canonical(chunk)) {
                throw Error(ErrorKind::CorruptProofFile,
                            "non-canonical field element");
            }
            FieldElement e;
            std::copy(chunk.begin(), chunk.end(), e.v.begin());
            out.push_back(e);
            off += 32;
        }
    };
    auto take_one = [&](FieldElement& e) {
        auto chunk = data.subspan(off, 32);
        if (!fe_is_canonical(chunk)) {
            throw Error(ErrorKind::CorruptProofFile, "non-canonical blinder");
        }
        std::copy(chunk.begin(), chunk.end(), e.v.begin());
        off += 32;
    };
    take(h.r, proof.v);
    take(h.n, proof.opening_a.w);
    take_one(proof.opening_a.rho);
    take(h.r, proof.opening_b.w);
    take_one(proof.opening_b.rho);
    return proof;
}

void write_proof_file(const std::string& path, const LoraProof& proof) {
    Bytes data = encode_proof(proof);
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(ErrorKind::IoError, "cannot open " + tmp);
        }
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size()));
        if (!out) {
            throw Error(ErrorKind::IoError, "short write to " + tmp);
        }
    }
    std::filesystem::rename(tmp, path);
}

LoraProof read_proof_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::IoError, "cannot open " + path);
    }
    Bytes data((std::istreambuf_iterator<char>(in)),
               std::istreambuf_iterator<char>());
    return decode_proof(data);
}

const char* failure_reason_name(FailureReason reason) {
    switch (reason) {
        case FailureReason::None: return "none";
        case FailureReason::MalformedProof: return "malformed_proof";
        case FailureReason::DigestMismatch: return "digest_mismatch";
        case FailureReason::OpeningAInvalid: return "opening_a_invalid";
        case FailureReason::OpeningBInvalid: return "opening_b_invalid";
        case FailureReason::FreivaldsOuterFail: return "freivalds_outer_fail";
        case FailureReason::FreivaldsInnerFail: return "freivalds_inner_fail";
        case FailureReason::MissingProof: return "missing_proof";
    }
    return "unknown";
}

FailureReason failure_reason_from_name(const std::string& name) {
    for (int i = 0; i <= int(FailureReason::MissingProof); ++i) {
        auto reason = FailureReason(i);
        if (name == failure_reason_name(reason)) {
            return reason;
        }
    }
    throw Error(ErrorKind::CorruptHeader, "unknown failure reason " + name);
}

nlohmann::json VerificationReport::to_json() const {
    nlohmann::json j;
    j["report_version"] = 1;
    j["overall"] = accept ? "Accept" : "Reject";
    j["total_verify_millis"] = total_verify_millis;
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& mr : modules) {
        nlohmann::json e;
        e["module_id"] = mr.module_id;
        e["accepted"] = mr.accepted;
        e["reason"] = failure_reason_name(mr.reason);
        e["verify_millis"] = mr.verify_millis;
        arr.push_back(e);
    }
    j["modules"] = arr;
    return j;
}

VerificationReport VerificationReport::from_json(const nlohmann::json& j) {
    VerificationReport rep;
    try {
        if (j.at("report_version").get<int>() != 1) {
            throw Error(ErrorKind::VersionUnsupported, "report version");
        }
        rep.accept = j.at("overall").get<std::string>() == "Accept";
        rep.total_verify_millis = j.at("total_verify_millis").get<double>();
        for (const auto& e : j.at("modules")) {
            ModuleReport mr;
            mr.module_id = e.at("module_id").get<uint32_t>();
            mr.accepted = e.at("accepted").get<bool>();
            mr.reason = failure_reason_from_name(e.at("reason").get<std::string>());
            mr.verify_millis = e.at("verify_millis").get<double>();
            rep.modules.push_back(mr);
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::CorruptHeader,
                    std::string("bad report json: ") + e.what());
    }
    return rep;
}

OpeningBudget OpeningBudget::load(const std::filesystem::path& file) {
    OpeningBudget budget;
    if (!std::filesystem::exists(file)) {
        return budget;
    }
    nlohmann::json j = read_json_file(file.string());
    try {
        for (const auto& [digest, entry] : j.at("sets").items()) {
            Entry e;
            e.used = entry.at("used").get<uint64_t>();
            e.limit = entry.at("limit").get<uint64_t>();
            budget.sets_[digest] = e;
        }
        for (const auto& key : j.at("charged")) {
            budget.charged_.insert(key.get<std::string>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::CorruptHeader,
                    std::string("bad budget file: ") + e.what());
    }
    return budget;
}

void OpeningBudget::save(const std::filesystem::path& file) const {
    nlohmann::json sets = nlohmann::json::object();
    for (const auto& [digest, entry] : sets_) {
        sets[digest] = {{"used", entry.used}, {"limit", entry.limit}};
    }
    nlohmann::json j;
    j["version"] = 1;
    j["sets"] = sets;
    j["charged"] = charged_;
    write_json_file(file.string(), j);
}

void OpeningBudget::ensure_limit(const std::array<uint8_t, 32>& digest,
                                 uint64_t limit) {
    sets_.try_emplace(hex_of(digest), Entry{0, limit});
}

void OpeningBudget::set_limit(const std::array<uint8_t, 32>& digest,
                              uint64_t limit) {
    sets_[hex_of(digest)].limit = limit;
}

bool OpeningBudget::check(const std::array<uint8_t, 32>& digest,
                          uint64_t requested) const {
    auto it = sets_.find(hex_of(digest));
    if (it == sets_.end()) {
        return requested == 0;
    }
    return it->second.used + requested <= it->second.limit;
}

uint64_t OpeningBudget::used(const std::array<uint8_t, 32>& digest) const {
    auto it = sets_.find(hex_of(digest));
    return it == sets_.end() ? 0 : it->second.used;
}

uint64_t OpeningBudget::limit(const std::array<uint8_t, 32>& digest) const {
    auto it = sets_.find(hex_of(digest));
    return it == sets_.end() ? 0 : it->second.limit;
}

void OpeningBudget::charge(const std::array<uint8_t, 32>& a_digest,
                           const std::array<uint8_t, 32>& b_digest,
                           std::span<const uint8_t> session_id,
                           uint32_t module_id) {
    std::string key = hex_encode(session_id) + "/" + std::to_string(module_id);
    if (charged_.count(key)) {
        return;  // deterministic re-proof of the same opening
    }
    std::map<std::string, uint64_t> want;
    ++want[hex_of(a_digest)];
    ++want[hex_of(b_digest)];
    for (const auto& [digest, count] : want) {
        auto it = sets_.find(digest);
        if (it == sets_.end()) {
            throw Error(ErrorKind::Internal, "budget set not registered");
        }
        if (it->second.used + count > it->second.limit) {
            throw Error(ErrorKind::BudgetExceeded,
                        "opening budget exhausted for commitment " +
                            digest.substr(0, 16));
        }
    }
    for (const auto& [digest, count] : want) {
        sets_[digest].used += count;
    }
    charged_.insert(key);
}

uint64_t default_opening_limit(uint32_t r) { return r / 2; }

bool check_budget(const OpeningBudget& budget,
                  const std::array<uint8_t, 32>& digest, uint64_t requested) {
    return budget.check(digest, requested);
}

ModuleWitness build_module_witness(const LoraModuleInfo& info,
                                   const LoraWeights& weights,
                                   const PedersenKey& key, RandomSource& rng) {
    if (weights.a.rows != info.r || weights.a.cols != info.n ||
        weights.b.rows != info.d || weights.b.cols != info.r) {
        throw Error(ErrorKind::DimMismatch,
                    "lora weights do not match manifest dims");
    }
    ModuleWitness w;
    w.a_q = quantize(weights.a, info.scale_bits);
    w.b_q = quantize(weights.b, info.scale_bits);
    if (std::max(max_abs_entry(w.a_q), max_abs_entry(w.b_q)) >
        info.weight_bound) {
        throw Error(ErrorKind::BoundsViolation,
                    "quantized weights exceed manifest weight_bound");
    }
    w.commit_a = commit_rows(w.a_q, key, rng, w.a_blinders);
    w.commit_b = commit_rows(w.b_q, key, rng, w.b_blinders);
    return w;
}

LoraProof prove_module(const DeploymentProfile& profile,
                       const LoraModuleInfo& info,
                       const ModuleWitness& witness,
                       std::span<const uint8_t> session_id,
                       const QuantizedMatrix& x_q,
                       const QuantizedMatrix& delta_q,
                       OpeningBudget* budget) {
    if (session_id.size() != 16) {
        throw Error(ErrorKind::LengthMismatch, "session id must be 16 bytes");
    }
    if (witness.a_q.rows != info.r || witness.a_q.cols != info.n ||
        witness.b_q.rows != info.d || witness.b_q.cols != info.r ||
        x_q.rows != info.n || delta_q.rows != info.d ||
        delta_q.cols != x_q.cols || x_q.cols == 0) {
        throw Error(ErrorKind::DimMismatch, "prove_module dims");
    }
    if (x_q.scale_exp != 1 || delta_q.scale_exp != 3) {
        throw Error(ErrorKind::DimMismatch, "unexpected scale exponents");
    }

    QuantizedMatrix recomputed = delta_exact(witness.a_q, witness.b_q, x_q);
    if (!(recomputed == delta_q)) {
        throw Error(ErrorKind::WitnessMismatch,
                    "delta does not match committed weights");
    }
    OverflowCheck oc =
        overflow_check(info.n, info.r, x_q.cols, info.scale_bits,
                       info.weight_bound, info.weight_bound,
                       max_abs_entry(x_q), profile.p);
    if (!oc.ok) {
        throw Error(ErrorKind::OverflowBound,
                    "worst-case delta exceeds the field embedding range");
    }

    ProofHeader h;
    h.profile_id = profile.profile_id;
    std::copy(session_id.begin(), session_id.end(), h.session_id.begin());
    h.module_id = info.module_id;
    h.n = info.n;
    h.r = info.r;
    h.d = info.d;
    h.m = x_q.cols;
    h.scale_bits = info.scale_bits;
    h.x_digest = tensor_digest(tensor_from_quantized(x_q));
    h.delta_digest = tensor_digest(tensor_from_quantized(delta_q));
    h.commit_a_digest = commitment_digest(witness.commit_a);
    h.commit_b_digest = commitment_digest(witness.commit_b);

    if (budget) {
        budget->ensure_limit(h.commit_a_digest, default_opening_limit(info.r));
        budget->ensure_limit(h.commit_b_digest, default_opening_limit(info.r));
        budget->charge(h.commit_a_digest, h.commit_b_digest, session_id,
                       info.module_id);
    }

    Transcript t = proof_transcript(profile, info, h);
    auto c = t.challenge_vector("chal/c", h.m);
    auto xc = fmat_vec(x_q, c);

    LoraProof proof;
    proof.header = h;
    proof.v = fmat_vec(witness.a_q, xc);
    // v is prover-supplied data, so it is bound before the challenges that
    // check it are drawn; deriving r and s first would let a cheating
    // prover solve for v afterwards.
    t.absorb("v", fe_vec_bytes(proof.v));
    auto rch = t.challenge_vector("chal/r", info.d);
    auto sch = t.challenge_vector("chal/s", info.r);
    proof.opening_a = open_combination(witness.a_q, witness.a_blinders, sch);
    proof.opening_b = open_combination(witness.b_q, witness.b_blinders, rch);
    return proof;
}

FailureReason verify_module(const DeploymentProfile& profile,
                            const LoraModuleInfo& info,
                            const LoraProof& proof,
                            const QuantizedMatrix& x_q,
                            const QuantizedMatrix& delta_q,
                            const CommitmentSet& commit_a,
                            const CommitmentSet& commit_b,
                            const PedersenKey& key) {
    const ProofHeader& h = proof.header;
    if (h.profile_id != profile.profile_id || h.module_id != info.module_id ||
        h.n != info.n || h.r != info.r || h.d != info.d ||
        h.scale_bits != info.scale_bits || h.m == 0) {
        return FailureReason::MalformedProof;
    }
    if (x_q.rows != info.n || x_q.cols != h.m || x_q.scale_exp != 1 ||
        delta_q.rows != info.d || delta_q.cols != h.m ||
        delta_q.scale_exp != 3) {
        return FailureReason::MalformedProof;
    }
    if (proof.v.size() != info.r || proof.opening_a.w.size() != info.n ||
        proof.opening_b.w.size() != info.r) {
        return FailureReason::MalformedProof;
    }
    if (commit_a.rows != info.r || commit_a.cols != info.n ||
        commit_b.rows != info.d || commit_b.cols != info.r) {
        return FailureReason::MalformedProof;
    }

    if (h.x_digest != tensor_digest(tensor_from_quantized(x_q)) ||
        h.delta_digest != tensor_digest(tensor_from_quantized(delta_q)) ||
        h.commit_a_digest != commitment_digest(commit_a) ||
        h.commit_b_digest != commitment_digest(commit_b)) {
        return FailureReason::DigestMismatch;
    }

    Transcript t = proof_transcript(profile, info, h);
    auto c = t.challenge_vector("chal/c", h.m);
    t.absorb("v", fe_vec_bytes(proof.v));
    auto rch = t.challenge_vector("chal/r", info.d);
    auto sch = t.challenge_vector("chal/s", info.r);

    if (!verify_opening(key, combine(commit_a, sch), proof.opening_a)) {
        return FailureReason::OpeningAInvalid;
    }
    if (!verify_opening(key, combine(commit_b, rch), proof.opening_b)) {
        return FailureReason::OpeningBInvalid;
    }

    auto dc = fmat_vec(delta_q, c);
    if (!(fdot(rch, dc) == fdot(proof.opening_b.w, proof.v))) {
        return FailureReason::FreivaldsOuterFail;
    }

    auto xc = fmat_vec(x_q, c);
    if (!(fdot(sch, proof.v) == fdot(proof.opening_a.w, xc))) {
        return FailureReason::FreivaldsInnerFail;
    }
    return FailureReason::None;
}

VerificationReport verify_bundle(const BundleContext& ctx,
                                 std::span<const LoraProof> proofs) {
    std::map<uint32_t, const LoraProof*> by_id;
    for (const auto& p : proofs) {
        if (!ctx.manifest.find_module(p.header.module_id)) {
            throw Error(ErrorKind::UnknownModule,
                        "proof for module " +
                            std::to_string(p.header.module_id) +
                            " not in manifest");
        }
        if (!by_id.emplace(p.header.module_id, &p).second) {
            throw Error(ErrorKind::DuplicateModule,
                        "two proofs for module " +
                            std::to_string(p.header.module_id));
        }
    }
    VerificationReport rep;
    rep.accept = true;
    for (const auto& info : ctx.manifest.modules) {
        ModuleReport mr;
        mr.module_id = info.module_id;
        auto it = by_id.find(info.module_id);
        if (it == by_id.end()) {
            mr.accepted = false;
            mr.reason = FailureReason::MissingProof;
        } else {
            auto x = ctx.x_q.find(info.module_id);
            auto dq = ctx.delta_q.find(info.module_id);
            auto ca = ctx.commit_a.find(info.module_id);
            auto cb = ctx.commit_b.find(info.module_id);
            if (x == ctx.x_q.end() || dq == ctx.delta_q.end() ||
                ca == ctx.commit_a.end() || cb == ctx.commit_b.end()) {
                throw Error(ErrorKind::MissingWitness,
                            "no activation record for module " +
                                std::to_string(info.module_id));
            }
            auto t0 = std::chrono::steady_clock::now();
            FailureReason reason;
            if (it->second->header.session_id != ctx.session_id) {
                reason = FailureReason::DigestMismatch;
            } else {
                reason = verify_module(ctx.profile, info, *it->second,
                                       x->second, dq->second, ca->second,
                                       cb->second, ctx.key);
            }
            auto t1 = std::chrono::steady_clock::now();
            mr.verify_millis =
                std::chrono::duration<double, std::milli>(t1 - t0).count();
            mr.reason = reason;
            mr.accepted = reason == FailureReason::None;
        }
        rep.accept = rep.accept && mr.accepted;
        rep.total_verify_millis += mr.verify_millis;
        rep.modules.push_back(mr);
    }
    return rep;
}

size_t manifest_key_width(const LoraManifest& manifest) {
    size_t width = 1;
    for (const auto& info : manifest.modules) {
        width = std::max<size_t>(width, std::max(info.n, info.r));
    }
    return width;
}

}  // namespace zklora
