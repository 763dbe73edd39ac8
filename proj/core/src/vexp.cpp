#include "sphere_ssm/vexp.hpp"

#include <bit>
#include <cmath>
#include <cstdint>

#include "simd_math.hpp"

namespace sphere_ssm {

using detail::kExpClamp;
using detail::kLn2Hi;
using detail::kLn2Lo;
using detail::kLog2E;

double vexp_scalar(double x) {
    x = x > kExpClamp ? kExpClamp : (x < -kExpClamp ? -kExpClamp : x);
    // Round-to-nearest k via the 2^52 magic constant (ties-to-even like SIMD).
    double kd = x * kLog2E + 0x1.8p52;
    std::uint64_t kbits = std::bit_cast<std::uint64_t>(kd);
    kd -= 0x1.8p52;
    double r = (x - kd * kLn2Hi) - kd * kLn2Lo;
    // Degree-12 Taylor polynomial of exp on |r| <= ln2/2; remainder < 7e-15.
    double p = 1.0 / 479001600.0;
    p = p * r + 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    // Scale by 2^k through the exponent bits; high garbage in kbits shifts out.
    return std::bit_cast<double>(std::bit_cast<std::uint64_t>(p) + (kbits << 52));
}

void vexp(const double* x, double* y, std::size_t n) {
    std::size_t i = 0;
#ifdef SPHERE_SSM_AVX512
    for (; i + 8 <= n; i += 8)
        _mm512_storeu_pd(y + i, detail::vexp_pd(_mm512_loadu_pd(x + i)));
#endif
    for (; i < n; ++i) y[i] = vexp_scalar(x[i]);
}

void vsoftplus(const double* x, double* y, std::size_t n) {
    std::size_t i = 0;
#ifdef SPHERE_SSM_AVX512
    const __m512d hi = _mm512_set1_pd(30.0);
    const __m512d lo = _mm512_set1_pd(-30.0);
    const __m512d one = _mm512_set1_pd(1.0);
    for (; i + 8 <= n; i += 8) {
        __m512d xi = _mm512_loadu_pd(x + i);
        __m512d w = detail::vexp_pd(xi);
        __m512d r = detail::vlog_pd(_mm512_add_pd(one, w));
        // x > 30: ln(1+e^x) = x to 1e-13; x < -30: ln(1+e^x) = e^x to 1e-13.
        r = _mm512_mask_mov_pd(r, _mm512_cmp_pd_mask(xi, hi, _CMP_GT_OQ), xi);
        r = _mm512_mask_mov_pd(r, _mm512_cmp_pd_mask(xi, lo, _CMP_LT_OQ), w);
        _mm512_storeu_pd(y + i, r);
    }
#endif
    for (; i < n; ++i) {
        double xi = x[i];
        if (xi > 30.0)
            y[i] = xi;
        else if (xi < -30.0)
            y[i] = vexp_scalar(xi);
        else
            y[i] = std::log(1.0 + vexp_scalar(xi));
    }
}

} // namespace sphere_ssm
