#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "zklora/quantizer.hpp"

using namespace zklora;

namespace {

Matrix single(double v) {
    Matrix m(1, 1);
    m.at(0, 0) = v;
    return m;
}

int64_t quantize1(double v, int f) { return quantize(single(v), f).at(0, 0); }

// Arbitrary-precision brute force of B * (A * X).
BigInt oracle_entry(const QuantizedMatrix& a, const QuantizedMatrix& b,
                    const QuantizedMatrix& x, size_t i, size_t j) {
    BigInt acc = 0;
    for (size_t k = 0; k < a.rows; ++k) {
        for (size_t l = 0; l < a.cols; ++l) {
            acc += BigInt(b.at(i, k)) * BigInt(a.at(k, l)) * BigInt(x.at(l, j));
        }
    }
    return acc;
}

}  // namespace

TEST_CASE("quantize fixed values at f=12") {
    CHECK(quantize1(0.5, 12) == 2048);
    CHECK(quantize1(-0.25, 12) == -1024);
    CHECK(quantize1(1.0 / 3.0, 12) == 1365);
    CHECK(quantize1(0.0, 12) == 0);
    CHECK(quantize1(1.0, 12) == 4096);
    CHECK(quantize(single(0.5), 12).scale_exp == 1);
}

TEST_CASE("rounding is half-to-even") {
    // 3/8192 * 4096 = 1.5 and 5/8192 * 4096 = 2.5 both round to 2.
    CHECK(quantize1(3.0 / 8192.0, 12) == 2);
    CHECK(quantize1(5.0 / 8192.0, 12) == 2);
    CHECK(quantize1(-3.0 / 8192.0, 12) == -2);
    CHECK(quantize1(-5.0 / 8192.0, 12) == -2);
    CHECK(quantize1(1.0 / 8192.0, 12) == 0);   // 0.5 -> 0
}

TEST_CASE("dequantize fixed values") {
    QuantizedMatrix q(1, 1, 1);
    q.at(0, 0) = 2048;
    CHECK(dequantize(q, 12).at(0, 0) == 0.5);

    QuantizedMatrix d(1, 1, 3);
    d.at(0, 0) = int64_t(1) << 36;  // 4096^3
    CHECK(dequantize(d, 12).at(0, 0) == 1.0);
}

TEST_CASE("quantize/dequantize roundtrip stays within half an lsb") {
    std::mt19937_64 rng(1);
    for (int f : {4, 12, 24}) {
        double eps = std::ldexp(1.0, -f - 1);
        Matrix m = testutil::rand_mat(rng, 7, 5, 3.0);
        Matrix back = dequantize(quantize(m, f), f);
        for (size_t i = 0; i < m.data.size(); ++i) {
            CHECK(std::abs(back.data[i] - m.data[i]) <= eps);
        }
    }
}

TEST_CASE("non-finite and oversized entries rejected") {
    CHECK_THROWS_AS(quantize(single(std::nan("")), 12), Error);
    CHECK_THROWS_AS(quantize(single(HUGE_VAL), 12), Error);
    CHECK_THROWS_AS(quantize(single(-HUGE_VAL), 12), Error);
    // 2^50 * 2^12 = 2^62 is over the serialization limit; 2^49 is not.
    CHECK_THROWS_AS(quantize(single(std::ldexp(1.0, 50)), 12), Error);
    CHECK(quantize1(std::ldexp(1.0, 49), 12) == (int64_t(1) << 61));
}

TEST_CASE("delta_exact on fixed instances") {
    QuantizedMatrix a(1, 2, 1);
    a.at(0, 0) = 1;
    a.at(0, 1) = 2;
    QuantizedMatrix b(1, 1, 1);
    b.at(0, 0) = 3;
    QuantizedMatrix x(2, 1, 1);
    x.at(0, 0) = 1;
    x.at(1, 0) = 1;
    QuantizedMatrix delta = delta_exact(a, b, x);
    CHECK(delta.rows == 1);
    CHECK(delta.cols == 1);
    CHECK(delta.scale_exp == 3);
    CHECK(delta.at(0, 0) == 9);

    QuantizedMatrix zero_b(1, 1, 1);
    QuantizedMatrix delta0 = delta_exact(a, zero_b, x);
    CHECK(delta0.at(0, 0) == 0);

    // 2^31 * 2^31 = 2^62 no longer fits the i64 container.
    QuantizedMatrix ha(1, 1, 1), hb(1, 1, 1), hx(1, 1, 1);
    ha.at(0, 0) = int64_t(1) << 31;
    hb.at(0, 0) = int64_t(1) << 31;
    hx.at(0, 0) = 1;
    CHECK_THROWS_AS(delta_exact(ha, hb, hx), Error);
}

TEST_CASE("delta_exact equals the big-integer oracle on 100 instances") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<uint32_t> dim(1, 8);
    for (int trial = 0; trial < 100; ++trial) {
        uint32_t n = dim(rng), r = dim(rng), d = dim(rng), m = dim(rng);
        auto a = testutil::rand_q(rng, r, n, int64_t(1) << 16);
        auto b = testutil::rand_q(rng, d, r, int64_t(1) << 16);
        auto x = testutil::rand_q(rng, n, m, int64_t(1) << 16);
        QuantizedMatrix delta = delta_exact(a, b, x);
        for (size_t i = 0; i < d; ++i) {
            for (size_t j = 0; j < m; ++j) {
                CHECK(BigInt(delta.at(i, j)) == oracle_entry(a, b, x, i, j));
            }
        }
    }
}

TEST_CASE("delta_exact is bilinear in A") {
    std::mt19937_64 rng(3);
    auto a1 = testutil::rand_q(rng, 3, 4, 1000);
    auto a2 = testutil::rand_q(rng, 3, 4, 1000);
    auto b = testutil::rand_q(rng, 5, 3, 1000);
    auto x = testutil::rand_q(rng, 4, 2, 1000);
    QuantizedMatrix sum = a1;
    for (size_t i = 0; i < sum.entries.size(); ++i) {
        sum.entries[i] += a2.entries[i];
    }
    QuantizedMatrix lhs = delta_exact(sum, b, x);
    QuantizedMatrix d1 = delta_exact(a1, b, x);
    QuantizedMatrix d2 = delta_exact(a2, b, x);
    for (size_t i = 0; i < lhs.entries.size(); ++i) {
        CHECK(lhs.entries[i] == d1.entries[i] + d2.entries[i]);
    }
}

TEST_CASE("delta_exact rejects mismatched shapes") {
    QuantizedMatrix a(2, 3, 1), b(4, 2, 1), x(5, 1, 1);  // x should be 3 rows
    CHECK_THROWS_AS(delta_exact(a, b, x), Error);
}

TEST_CASE("overflow_check computes the exact worst-case bound") {
    const BigInt p = field_order();
    int64_t big = int64_t(1) << 16;
    // r * maxB * (n * maxA * maxX) = 2^6 * 2^16 * 2^12 * 2^16 * 2^16.
    OverflowCheck oc = overflow_check(4096, 64, 15, 12, big, big, big, p);
    CHECK(oc.ok);
    CHECK(oc.bound == (BigInt(1) << 66));
    CHECK(oc.limit == (p - 1) / 2);

    OverflowCheck zero = overflow_check(4096, 64, 15, 12, 0, big, big, p);
    CHECK(zero.ok);
    CHECK(zero.bound == 0);
    CHECK_THROWS_AS(overflow_check(4, 4, 4, 12, -1, big, big, p), Error);
}

TEST_CASE("overflow_check flags bounds that break a small field") {
    BigInt tiny_p = (BigInt(1) << 61) - 1;
    int64_t big = int64_t(1) << 20;
    OverflowCheck oc = overflow_check(16, 4, 3, 12, big, big, big, tiny_p);
    CHECK_FALSE(oc.ok);
    CHECK(oc.bound == (BigInt(1) << 66));
    CHECK(oc.limit == (tiny_p - 1) / 2);
}

TEST_CASE("overflow bound dominates measured deltas on 100 instances") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<uint32_t> dim(1, 8);
    for (int trial = 0; trial < 100; ++trial) {
        uint32_t n = dim(rng), r = dim(rng), d = dim(rng), m = dim(rng);
        auto a = testutil::rand_q(rng, r, n, 1 << 12);
        auto b = testutil::rand_q(rng, d, r, 1 << 12);
        auto x = testutil::rand_q(rng, n, m, 1 << 12);
        OverflowCheck oc =
            overflow_check(n, r, m, 12, max_abs_entry(a), max_abs_entry(b),
                           max_abs_entry(x), field_order());
        REQUIRE(oc.ok);
        QuantizedMatrix delta = delta_exact(a, b, x);
        for (int64_t e : delta.entries) {
            CHECK(BigInt(e < 0 ? -e : e) <= oc.bound);
        }
    }
}

TEST_CASE("quantization error bound: zero case and monotone in f") {
    CHECK(quantization_error_bound(0.0, 0.0, 0.0, 8, 4, 12) == 0.0);
    double prev = std::numeric_limits<double>::infinity();
    for (int f : {8, 12, 16, 20, 24}) {
        double bound = quantization_error_bound(1.0, 1.0, 1.0, 8, 4, f);
        CHECK(bound > 0.0);
        CHECK(bound < prev);
        prev = bound;
    }
}

TEST_CASE("empirical quantization error stays below the bound") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<uint32_t> dim(1, 16);
    for (int trial = 0; trial < 100; ++trial) {
        uint32_t n = dim(rng), r = dim(rng), d = dim(rng), m = dim(rng);
        Matrix a = testutil::rand_mat(rng, r, n);
        Matrix b = testutil::rand_mat(rng, d, r);
        Matrix x = testutil::rand_mat(rng, n, m);
        int f = 12;
        QuantizedMatrix delta =
            delta_exact(quantize(a, f), quantize(b, f), quantize(x, f));
        Matrix approx = dequantize(delta, f);
        Matrix exact = mat_mul(b, mat_mul(a, x));
        double bound = quantization_error_bound(max_abs(a), max_abs(b),
                                                max_abs(x), n, r, f);
        for (size_t i = 0; i < exact.data.size(); ++i) {
            CHECK(std::abs(approx.data[i] - exact.data[i]) <= bound);
        }
    }
}

TEST_CASE("narrow_to_f32 rounds through float precision") {
    Matrix m = single(1.0 / 3.0);
    Matrix narrowed = narrow_to_f32(m);
    CHECK(narrowed.at(0, 0) == double(float(1.0 / 3.0)));
    CHECK(narrowed.at(0, 0) != 1.0 / 3.0);
    CHECK(narrow_to_f32(single(0.5)).at(0, 0) == 0.5);
}

TEST_CASE("matrix helpers compute what they claim") {
    Matrix a(2, 3);
    a.data = {1, 2, 3, 4, 5, 6};
    Matrix b(3, 2);
    b.data = {7, 8, 9, 10, 11, 12};
    Matrix prod = mat_mul(a, b);
    CHECK(prod.rows == 2);
    CHECK(prod.cols == 2);
    CHECK(prod.data == std::vector<double>{58, 64, 139, 154});
    CHECK_THROWS_AS(mat_mul(a, a), Error);

    Matrix s = mat_add(prod, prod);
    CHECK(s.at(1, 1) == 308);
    CHECK_THROWS_AS(mat_add(a, b), Error);

    Matrix neg(1, 3);
    neg.data = {-1.0, 0.0, 2.0};
    relu_inplace(neg);
    CHECK(neg.data == std::vector<double>{0.0, 0.0, 2.0});
    CHECK(max_abs(a) == 6.0);

    QuantizedMatrix q(2, 2, 1);
    q.entries = {-9, 3, 7, -2};
    CHECK(max_abs_entry(q) == 9);
}
