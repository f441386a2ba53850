#pragma once

#include <cstdint>
#include <vector>

#include "zklora/field.hpp"

namespace zklora {

// Row-major float matrix. Stored as f32 in files and on the wire; held as
// double in memory so reference computations do not add their own noise.
struct Matrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(size_t i, size_t j) { return data[i * cols + j]; }
    double at(size_t i, size_t j) const { return data[i * cols + j]; }
};

// out = a * b with double accumulation.
Matrix mat_mul(const Matrix& a, const Matrix& b);
Matrix mat_add(const Matrix& a, const Matrix& b);
void relu_inplace(Matrix& m);
double max_abs(const Matrix& m);

// Per-entry round trip through f32 — the precision everything has at file
// and wire boundaries.
Matrix narrow_to_f32(const Matrix& m);

// Signed fixed-point matrix at scale S^scale_exp, S = 2^f. scale_exp is 1
// for weights and activations, 3 for deltas. Entries must stay below 2^62
// in magnitude so they serialize as i64 with headroom.
struct QuantizedMatrix {
    uint32_t rows = 0;
    uint32_t cols = 0;
    int scale_exp = 1;
    std::vector<int64_t> entries;

    QuantizedMatrix() = default;
    QuantizedMatrix(uint32_t r, uint32_t c, int se)
        : rows(r), cols(c), scale_exp(se), entries(size_t(r) * c, 0) {}

    int64_t& at(size_t i, size_t j) { return entries[i * cols + j]; }
    int64_t at(size_t i, size_t j) const { return entries[i * cols + j]; }

    bool operator==(const QuantizedMatrix&) const = default;
};

constexpr int64_t kEntryLimit = int64_t(1) << 62;

// entry = round_half_even(value * 2^f). Throws NonFinite / Overflow.
QuantizedMatrix quantize(const Matrix& m, int f);

// value = entry / 2^(f * scale_exp), nearest-double rounding.
Matrix dequantize(const QuantizedMatrix& q, int f);

int64_t max_abs_entry(const QuantizedMatrix& q);

// Delta = B * (A * X) in exact integer arithmetic (checked 128-bit),
// bit-identical across platforms. Result is at scale S^3.
QuantizedMatrix delta_exact(const QuantizedMatrix& a,
                            const QuantizedMatrix& b,
                            const QuantizedMatrix& x);

struct OverflowCheck {
    bool ok = false;
    BigInt bound;  // worst-case |Delta_q| entry
    BigInt limit;  // (p-1)/2
};

// Worst-case integer-stage bound r*maxB*(n*maxA*maxX); exact field
// equations need it to stay within the centered embedding range. m and f
// do not enter the bound: the verifier's combinations happen in the field.
OverflowCheck overflow_check(uint32_t n, uint32_t r, uint32_t m, int f,
                             int64_t max_a, int64_t max_b, int64_t max_x,
                             const BigInt& p);

// Interval-propagation bound on ||dequantize(Delta_q) - B*A*X||_inf.
double quantization_error_bound(double max_a, double max_b, double max_x,
                                uint32_t n, uint32_t r, int f);

}  // namespace zklora
