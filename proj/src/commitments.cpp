#include "zklora/commitments.hpp"

#include <cstring>

namespace zklora {

namespace {

void put_u32_le(Bytes& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
}

uint32_t get_u32_le(std::span<const uint8_t> data, size_t off) {
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
        v = (v << 8) | data[off + i];
    }
    return v;
}

}  // namespace

PedersenKey derive_pedersen_key(const DeploymentProfile& profile, size_t width) {
    GeneratorSet set = derive_generators(profile, "pedersen", width);
    return PedersenKey{std::move(set.g), set.h};
}

CommitmentSet commit_rows(const QuantizedMatrix& m, const PedersenKey& key,
                          RandomSource& rng, RowBlinders& blinders) {
    if (m.cols > key.width()) {
        throw Error(ErrorKind::RowTooLong, "matrix row exceeds key width");
    }
    std::vector<GroupElement> points;
    points.reserve(m.cols + 1);
    points.push_back(key.h);
    points.insert(points.end(), key.g.begin(), key.g.begin() + m.cols);

    CommitmentSet set;
    set.rows = m.rows;
    set.cols = m.cols;
    set.c.reserve(m.rows);
    blinders.rho.clear();
    blinders.rho.reserve(m.rows);

    std::vector<FieldElement> scalars(m.cols + 1);
    for (uint32_t i = 0; i < m.rows; ++i) {
        scalars[0] = rng.field_element();
        for (uint32_t j = 0; j < m.cols; ++j) {
            scalars[j + 1] = fe_from_signed(m.at(i, j));
        }
        set.c.push_back(ge_multi_mul(scalars, points));
        blinders.rho.push_back(scalars[0]);
    }
    return set;
}

CommitmentSet commit_rows_with(const QuantizedMatrix& m, const PedersenKey& key,
                               const RowBlinders& blinders) {
    if (m.cols > key.width()) {
        throw Error(ErrorKind::RowTooLong, "matrix row exceeds key width");
    }
    if (blinders.rho.size() != m.rows) {
        throw Error(ErrorKind::LengthMismatch, "blinder count != rows");
    }
    std::vector<GroupElement> points;
    points.reserve(m.cols + 1);
    points.push_back(key.h);
    points.insert(points.end(), key.g.begin(), key.g.begin() + m.cols);

    CommitmentSet set;
    set.rows = m.rows;
    set.cols = m.cols;
    set.c.reserve(m.rows);
    std::vector<FieldElement> scalars(m.cols + 1);
    for (uint32_t i = 0; i < m.rows; ++i) {
        scalars[0] = blinders.rho[i];
        for (uint32_t j = 0; j < m.cols; ++j) {
            scalars[j + 1] = fe_from_signed(m.at(i, j));
        }
        set.c.push_back(ge_multi_mul(scalars, points));
    }
    return set;
}

GroupElement combine(const CommitmentSet& set, std::span<const FieldElement> s) {
    if (s.size() != set.rows || set.c.size() != set.rows) {
        throw Error(ErrorKind::LengthMismatch, "combine coefficient count");
    }
    return ge_multi_mul(s, set.c);
}

Opening open_combination(const QuantizedMatrix& m, const RowBlinders& blinders,
                         std::span<const FieldElement> s) {
    if (s.size() != m.rows || blinders.rho.size() != m.rows) {
        throw Error(ErrorKind::LengthMismatch, "opening coefficient count");
    }
    Opening out;
    out.w.assign(m.cols, fe_zero());
    out.rho = fe_zero();
    for (uint32_t i = 0; i < m.rows; ++i) {
        for (uint32_t j = 0; j < m.cols; ++j) {
            out.w[j] = fe_add(out.w[j], fe_mul(s[i], fe_from_signed(m.at(i, j))));
        }
        out.rho = fe_add(out.rho, fe_mul(s[i], blinders.rho[i]));
    }
    return out;
}

bool verify_opening(const PedersenKey& key, const GroupElement& combined,
                    const Opening& opening) {
    if (opening.w.size() > key.width()) {
        throw Error(ErrorKind::LengthMismatch, "opening wider than key");
    }
    GroupElement acc = ge_mul(opening.rho, key.h);
    for (size_t j = 0; j < opening.w.size(); ++j) {
        if (fe_is_zero(opening.w[j])) {
            continue;
        }
        acc = ge_add(acc, ge_mul(opening.w[j], key.g[j]));
    }
    return acc == combined;
}

Bytes serialize_commitments(const CommitmentSet& set) {
    if (set.c.size() != set.rows) {
        throw Error(ErrorKind::LengthMismatch, "commitment count != rows");
    }
    Bytes out;
    out.reserve(8 + size_t(set.rows) * 32);
    put_u32_le(out, set.rows);
    put_u32_le(out, set.cols);
    for (const auto& c : set.c) {
        out.insert(out.end(), c.v.begin(), c.v.end());
    }
    return out;
}

CommitmentSet deserialize_commitments(std::span<const uint8_t> data) {
    if (data.size() < 8) {
        throw Error(ErrorKind::CorruptHeader, "commitment blob too short");
    }
    CommitmentSet set;
    set.rows = get_u32_le(data, 0);
    set.cols = get_u32_le(data, 4);
    if (data.size() != 8 + size_t(set.rows) * 32) {
        throw Error(ErrorKind::CorruptHeader, "commitment blob length mismatch");
    }
    set.c.reserve(set.rows);
    for (uint32_t i = 0; i < set.rows; ++i) {
        set.c.push_back(ge_decode(data.subspan(8 + size_t(i) * 32, 32)));
    }
    return set;
}

std::array<uint8_t, 32> commitment_digest(const CommitmentSet& set) {
    return sha256(serialize_commitments(set));
}

}  // namespace zklora
