#include "zklora/quantizer.hpp"

#include <cmath>
#include <cstdlib>

namespace zklora {

Matrix mat_mul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw Error(ErrorKind::DimMismatch, "mat_mul shape mismatch");
    }
    Matrix out(a.rows, b.cols);
    for (size_t i = 0; i < a.rows; ++i) {
        for (size_t k = 0; k < a.cols; ++k) {
            double aik = a.at(i, k);
            if (aik == 0.0) {
                continue;
            }
            for (size_t j = 0; j < b.cols; ++j) {
                out.at(i, j) += aik * b.at(k, j);
            }
        }
    }
    return out;
}

Matrix mat_add(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols) {
        throw Error(ErrorKind::DimMismatch, "mat_add shape mismatch");
    }
    Matrix out = a;
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] += b.data[i];
    }
    return out;
}

void relu_inplace(Matrix& m) {
    for (double& x : m.data) {
        if (x < 0.0) {
            x = 0.0;
        }
    }
}

double max_abs(const Matrix& m) {
    double mx = 0.0;
    for (double x : m.data) {
        mx = std::max(mx, std::fabs(x));
    }
    return mx;
}

Matrix narrow_to_f32(const Matrix& m) {
    Matrix out = m;
    for (double& x : out.data) {
        x = static_cast<double>(static_cast<float>(x));
    }
    return out;
}

QuantizedMatrix quantize(const Matrix& m, int f) {
    const double scale = std::ldexp(1.0, f);
    QuantizedMatrix q(static_cast<uint32_t>(m.rows),
                      static_cast<uint32_t>(m.cols), 1);
    for (size_t i = 0; i < m.data.size(); ++i) {
        double x = m.data[i];
        if (!std::isfinite(x)) {
            throw Error(ErrorKind::NonFinite, "non-finite entry in quantize");
        }
        // nearbyint under the default rounding mode rounds ties to even,
        // which is what keeps results identical across platforms.
        double r = std::nearbyint(x * scale);
        if (std::fabs(r) >= static_cast<double>(kEntryLimit)) {
            throw Error(ErrorKind::Overflow, "quantized entry >= 2^62");
        }
        q.entries[i] = static_cast<int64_t>(r);
    }
    return q;
}

Matrix dequantize(const QuantizedMatrix& q, int f) {
    const double inv = std::ldexp(1.0, -f * q.scale_exp);
    Matrix m(q.rows, q.cols);
    for (size_t i = 0; i < q.entries.size(); ++i) {
        m.data[i] = static_cast<double>(q.entries[i]) * inv;
    }
    return m;
}

int64_t max_abs_entry(const QuantizedMatrix& q) {
    int64_t mx = 0;
    for (int64_t e : q.entries) {
        int64_t a = e < 0 ? -e : e;
        mx = std::max(mx, a);
    }
    return mx;
}

namespace {

using int128 = __int128;

int128 checked_mul(int128 a, int128 b) {
    int128 out;
    if (__builtin_mul_overflow(a, b, &out)) {
        throw Error(ErrorKind::Overflow, "128-bit overflow in delta_exact");
    }
    return out;
}

int128 checked_add(int128 a, int128 b) {
    int128 out;
    if (__builtin_add_overflow(a, b, &out)) {
        throw Error(ErrorKind::Overflow, "128-bit overflow in delta_exact");
    }
    return out;
}

}  // namespace

QuantizedMatrix delta_exact(const QuantizedMatrix& a,
                            const QuantizedMatrix& b,
                            const QuantizedMatrix& x) {
    const uint32_t r = a.rows, n = a.cols, d = b.rows, m = x.cols;
    if (b.cols != r || x.rows != n) {
        throw Error(ErrorKind::DimMismatch, "delta_exact shape mismatch");
    }
    // ax = A * X at scale S^2.
    std::vector<int128> ax(size_t(r) * m, 0);
    for (size_t i = 0; i < r; ++i) {
        for (size_t k = 0; k < n; ++k) {
            int128 aik = a.at(i, k);
            if (aik == 0) {
                continue;
            }
            for (size_t j = 0; j < m; ++j) {
                ax[i * m + j] = checked_add(
                    ax[i * m + j], checked_mul(aik, x.at(k, j)));
            }
        }
    }
    std::vector<int128> acc(size_t(d) * m, 0);
    for (size_t i = 0; i < d; ++i) {
        for (size_t k = 0; k < r; ++k) {
            int128 bik = b.at(i, k);
            if (bik == 0) {
                continue;
            }
            for (size_t j = 0; j < m; ++j) {
                acc[i * m + j] = checked_add(
                    acc[i * m + j], checked_mul(bik, ax[k * m + j]));
            }
        }
    }
    QuantizedMatrix delta(d, m, 3);
    for (size_t i = 0; i < acc.size(); ++i) {
        if (acc[i] >= int128(kEntryLimit) || acc[i] <= -int128(kEntryLimit)) {
            throw Error(ErrorKind::Overflow,
                        "delta entry exceeds the i64 container");
        }
        delta.entries[i] = static_cast<int64_t>(acc[i]);
    }
    return delta;
}

OverflowCheck overflow_check(uint32_t n, uint32_t r, uint32_t m, int f,
                             int64_t max_a, int64_t max_b, int64_t max_x,
                             const BigInt& p) {
    (void)m;
    (void)f;
    if (max_a < 0 || max_b < 0 || max_x < 0) {
        throw Error(ErrorKind::OutOfRange, "negative magnitude bound");
    }
    OverflowCheck out;
    out.bound = BigInt(r) * max_b * (BigInt(n) * max_a * max_x);
    out.limit = (p - 1) / 2;
    out.ok = out.bound <= out.limit;
    return out;
}

double quantization_error_bound(double max_a, double max_b, double max_x,
                                uint32_t n, uint32_t r, int f) {
    // Half-even rounding sends |value| <= 1/(2S) to zero, so the per-entry
    // error never exceeds the value bound itself.
    const double eps = std::ldexp(1.0, -f - 1);
    const double e_a = std::min(max_a, eps);
    const double e_b = std::min(max_b, eps);
    const double e_x = std::min(max_x, eps);
    const double e_v = n * (max_a * e_x + max_x * e_a + e_a * e_x);
    const double max_v = double(n) * max_a * max_x;
    return r * (max_b * e_v + max_v * e_b + e_b * e_v);
}

}  // namespace zklora
