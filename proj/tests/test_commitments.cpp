#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "zklora/commitments.hpp"

using namespace zklora;

namespace {

const DeploymentProfile& profile() {
    static DeploymentProfile p = DeploymentProfile::default_profile();
    return p;
}

std::vector<FieldElement> rand_scalars(RandomSource& rng, size_t count) {
    std::vector<FieldElement> out;
    out.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        out.push_back(rng.field_element());
    }
    return out;
}

}  // namespace

TEST_CASE("zero matrix commits to pure blinding terms") {
    PedersenKey key = derive_pedersen_key(profile(), 4);
    QuantizedMatrix zero(3, 4, 1);
    SeededRandom rng(100);
    RowBlinders blinders;
    CommitmentSet set = commit_rows(zero, key, rng, blinders);
    REQUIRE(set.c.size() == 3);
    REQUIRE(blinders.rho.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(set.c[i] == ge_mul(blinders.rho[i], key.h));
    }
}

TEST_CASE("blinders are fresh per call and change the commitments") {
    PedersenKey key = derive_pedersen_key(profile(), 2);
    std::mt19937_64 mt(101);
    QuantizedMatrix m = testutil::rand_q(mt, 2, 2, 1000);
    OsRandom rng;
    RowBlinders b1, b2;
    CommitmentSet s1 = commit_rows(m, key, rng, b1);
    CommitmentSet s2 = commit_rows(m, key, rng, b2);
    CHECK(b1.rho[0] != b2.rho[0]);
    CHECK(s1.c[0] != s2.c[0]);
    // Same blinders reproduce the set bit for bit.
    CHECK(commit_rows_with(m, key, b1) == s1);
}

TEST_CASE("row commitment matches the direct group expression") {
    PedersenKey key = derive_pedersen_key(profile(), 2);
    QuantizedMatrix m(1, 2, 1);
    m.at(0, 0) = 3;
    m.at(0, 1) = 5;
    SeededRandom rng(102);
    RowBlinders blinders;
    CommitmentSet set = commit_rows(m, key, rng, blinders);
    GroupElement expect = ge_mul(blinders.rho[0], key.h);
    expect = ge_add(expect, ge_mul(fe_from_signed(3), key.g[0]));
    expect = ge_add(expect, ge_mul(fe_from_signed(5), key.g[1]));
    CHECK(set.c[0] == expect);

    // Negative entries use the centered embedding.
    QuantizedMatrix neg(1, 2, 1);
    neg.at(0, 0) = -7;
    neg.at(0, 1) = 0;
    CommitmentSet nset = commit_rows(neg, key, rng, blinders);
    GroupElement nexpect = ge_mul(blinders.rho[0], key.h);
    nexpect = ge_add(nexpect, ge_mul(fe_from_signed(-7), key.g[0]));
    CHECK(nset.c[0] == nexpect);
}

TEST_CASE("selector combinations open single rows") {
    PedersenKey key = derive_pedersen_key(profile(), 3);
    std::mt19937_64 mt(103);
    QuantizedMatrix m = testutil::rand_q(mt, 4, 3, 500);
    SeededRandom rng(104);
    RowBlinders blinders;
    CommitmentSet set = commit_rows(m, key, rng, blinders);

    for (size_t row = 0; row < 4; ++row) {
        std::vector<FieldElement> s(4, fe_zero());
        s[row] = fe_one();
        GroupElement combined = combine(set, s);
        CHECK(combined == set.c[row]);
        Opening op = open_combination(m, blinders, s);
        CHECK(op.rho == blinders.rho[row]);
        for (size_t j = 0; j < 3; ++j) {
            CHECK(op.w[j] == fe_from_signed(m.at(row, j)));
        }
        CHECK(verify_opening(key, combined, op));
    }

    // All-zero selector opens the identity with zero blinder.
    std::vector<FieldElement> zeros(4, fe_zero());
    GroupElement id = combine(set, zeros);
    Opening op = open_combination(m, blinders, zeros);
    CHECK(verify_opening(key, id, op));
    CHECK(id == ge_identity());
}

TEST_CASE("combine/open are homomorphic for random selectors") {
    PedersenKey key = derive_pedersen_key(profile(), 5);
    std::mt19937_64 mt(105);
    SeededRandom rng(106);
    for (int trial = 0; trial < 20; ++trial) {
        uint32_t rows = 1 + mt() % 6, cols = 1 + mt() % 5;
        QuantizedMatrix m = testutil::rand_q(mt, rows, cols, 1 << 20);
        RowBlinders blinders;
        CommitmentSet set = commit_rows(m, key, rng, blinders);
        auto s = rand_scalars(rng, rows);
        GroupElement combined = combine(set, s);
        Opening op = open_combination(m, blinders, s);
        REQUIRE(op.w.size() == cols);
        CHECK(verify_opening(key, combined, op));

        // The opened row really is s^T M in the field.
        for (size_t j = 0; j < cols; ++j) {
            FieldElement acc = fe_zero();
            for (size_t i = 0; i < rows; ++i) {
                acc = fe_add(acc, fe_mul(s[i], fe_from_signed(m.at(i, j))));
            }
            CHECK(op.w[j] == acc);
        }
    }
}

TEST_CASE("openings are binding: tampered openings never verify") {
    PedersenKey key = derive_pedersen_key(profile(), 4);
    std::mt19937_64 mt(107);
    SeededRandom rng(108);
    QuantizedMatrix m = testutil::rand_q(mt, 3, 4, 1 << 16);
    RowBlinders blinders;
    CommitmentSet set = commit_rows(m, key, rng, blinders);
    auto s = rand_scalars(rng, 3);
    GroupElement combined = combine(set, s);
    Opening honest = open_combination(m, blinders, s);
    REQUIRE(verify_opening(key, combined, honest));

    int accepted = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        Opening bad = honest;
        switch (trial % 3) {
            case 0:
                bad.w[mt() % bad.w.size()] = rng.field_element();
                break;
            case 1:
                bad.rho = rng.field_element();
                break;
            default:
                bad.w[mt() % bad.w.size()] = rng.field_element();
                bad.rho = rng.field_element();
                break;
        }
        if (bad == honest) {
            continue;
        }
        if (verify_opening(key, combined, bad)) {
            ++accepted;
        }
    }
    CHECK(accepted == 0);

    // Small additive tweaks are caught too.
    Opening off = honest;
    off.w[0] = fe_add(off.w[0], fe_one());
    CHECK_FALSE(verify_opening(key, combined, off));
    Opening rho_off = honest;
    rho_off.rho = fe_add(rho_off.rho, fe_one());
    CHECK_FALSE(verify_opening(key, combined, rho_off));
}

TEST_CASE("shape errors throw") {
    PedersenKey key = derive_pedersen_key(profile(), 2);
    std::mt19937_64 mt(109);
    SeededRandom rng(110);
    RowBlinders blinders;
    QuantizedMatrix wide = testutil::rand_q(mt, 2, 3, 10);
    CHECK_THROWS_AS(commit_rows(wide, key, rng, blinders), Error);

    QuantizedMatrix m = testutil::rand_q(mt, 2, 2, 10);
    CommitmentSet set = commit_rows(m, key, rng, blinders);
    auto s = rand_scalars(rng, 3);  // wrong length
    CHECK_THROWS_AS(combine(set, s), Error);
    CHECK_THROWS_AS(open_combination(m, blinders, s), Error);

    Opening op;
    op.w = rand_scalars(rng, 3);  // wider than the key
    op.rho = fe_zero();
    CHECK_THROWS_AS(verify_opening(key, ge_identity(), op), Error);
}

TEST_CASE("serialization roundtrips and reveals nothing but points") {
    PedersenKey key = derive_pedersen_key(profile(), 6);
    std::mt19937_64 mt(111);
    SeededRandom rng(112);
    QuantizedMatrix m = testutil::rand_q(mt, 5, 6, 1 << 24);
    RowBlinders blinders;
    CommitmentSet set = commit_rows(m, key, rng, blinders);

    Bytes ser = serialize_commitments(set);
    CHECK(ser.size() == 8 + 32 * set.rows);
    CommitmentSet back = deserialize_commitments(ser);
    CHECK(back == set);
    CHECK(commitment_digest(back) == commitment_digest(set));

    // Truncation and row-count lies are rejected.
    Bytes cut(ser.begin(), ser.end() - 1);
    CHECK_THROWS_AS(deserialize_commitments(cut), Error);
    Bytes lied = ser;
    lied[0] += 1;
    CHECK_THROWS_AS(deserialize_commitments(lied), Error);
    // A non-canonical point encoding is rejected.
    Bytes junk = ser;
    for (size_t i = 8; i < 40; ++i) {
        junk[i] = 0xFF;
    }
    CHECK_THROWS_AS(deserialize_commitments(junk), Error);

    auto digest = commitment_digest(set);
    CommitmentSet other = commit_rows(m, key, rng, blinders);
    CHECK(commitment_digest(other) != digest);
}
