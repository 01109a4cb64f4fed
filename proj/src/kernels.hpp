#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstddef>

namespace drm::kernel {

// expm1(x) for x in [0, 40]. x = k ln2 + r with |r| <= 0.35, then
// expm1(x) = 2^k expm1(r) + (2^k - 1); expm1(r) is a Taylor polynomial in
// Estrin order to keep dependency chains short. The power of two is assembled
// from the bits of the rounding constant.
inline double expm1_reduced(double x) {
    constexpr double kShift = 0x1.8p52;
    constexpr double kLog2e = 1.4426950408889634;
    constexpr double kLn2Hi = 6.93147180369123816490e-01;
    constexpr double kLn2Lo = 1.90821492927058770002e-10;
    const double t = x * kLog2e + kShift;
    const double k = t - kShift;
    const double r = (x - k * kLn2Hi) - k * kLn2Lo;
    const double r2 = r * r;
    const double r4 = r2 * r2;
    const double r8 = r4 * r4;
    // expm1(r) / r up to r^12
    const double q0 = 1.0 + r * (1.0 / 2);
    const double q1 = 1.0 / 6 + r * (1.0 / 24);
    const double q2 = 1.0 / 120 + r * (1.0 / 720);
    const double q3 = 1.0 / 5040 + r * (1.0 / 40320);
    const double q4 = 1.0 / 362880 + r * (1.0 / 3628800);
    const double q5 = 1.0 / 39916800 + r * (1.0 / 479001600);
    const double q6 = 1.0 / 6227020800;
    const double lo = (q0 + r2 * q1) + r4 * (q2 + r2 * q3);
    const double hi = (q4 + r2 * q5) + r4 * q6;
    const double em1_r = r * (lo + r8 * hi);
    const double scale = std::bit_cast<double>((std::bit_cast<std::uint64_t>(t) + 1023u) << 52);
    return scale * em1_r + (scale - 1.0);
}

// tanh within a few ulp, written without calls or branches so loops over it vectorize.
// Every evaluation path goes through this so that values agree bitwise.
inline double activation(double z) {
    const double y = 2.0 * std::fabs(z);
    // Beyond 2|z| = 40 the result rounds to 1; NaN passes through the clamp.
    const double e = expm1_reduced(y > 40.0 ? 40.0 : y);
    const double r = e / (e + 2.0);
    return std::copysign(r, z);
}

inline double affine_row(const double* w, std::size_t cols, double bias, const double* in) {
    double s = bias;
    for (std::size_t j = 0; j < cols; ++j) s += w[j] * in[j];
    return s;
}

// Four independent partial sums; order is fixed, so results are reproducible.
inline double dot(const double* a, const double* b, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t p = 0;
    for (; p + 4 <= n; p += 4) {
        s0 += a[p] * b[p];
        s1 += a[p + 1] * b[p + 1];
        s2 += a[p + 2] * b[p + 2];
        s3 += a[p + 3] * b[p + 3];
    }
    for (; p < n; ++p) s0 += a[p] * b[p];
    return (s0 + s1) + (s2 + s3);
}

inline double sum(const double* a, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t p = 0;
    for (; p + 4 <= n; p += 4) {
        s0 += a[p];
        s1 += a[p + 1];
        s2 += a[p + 2];
        s3 += a[p + 3];
    }
    for (; p < n; ++p) s0 += a[p];
    return (s0 + s1) + (s2 + s3);
}

}  // namespace drm::kernel
