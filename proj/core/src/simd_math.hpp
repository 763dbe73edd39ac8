#pragma once

// Internal vectorized transcendental kernels shared by the array wrappers in
// vexp.cpp and the selective-scan kernels (not installed).

#include <bit>
#include <cstdint>

#if defined(__AVX512F__) && defined(__AVX512DQ__)
#include <immintrin.h>
#define SPHERE_SSM_AVX512 1
#endif

namespace sphere_ssm::detail {

constexpr double kLog2E = 1.4426950408889634074;
// ln2 split into a high part exact in ~32 bits plus the remainder, so
// x - k*ln2 loses no precision for |k| up to ~1024.
constexpr double kLn2Hi = 6.93147180369123816490e-01;
constexpr double kLn2Lo = 1.90821492927058770002e-10;
constexpr double kExpClamp = 708.0;
constexpr double kSqrt2 = 1.41421356237309504880;

#ifdef SPHERE_SSM_AVX512

// exp(x) with inputs clamped to [-708, 708]; max relative error ~3e-16.
inline __m512d vexp_pd(__m512d xi) {
    const __m512d vlog2e = _mm512_set1_pd(kLog2E);
    const __m512d vln2hi = _mm512_set1_pd(kLn2Hi);
    const __m512d vln2lo = _mm512_set1_pd(kLn2Lo);
    const __m512d c1 = _mm512_set1_pd(1.0);
    xi = _mm512_min_pd(xi, _mm512_set1_pd(kExpClamp));
    xi = _mm512_max_pd(xi, _mm512_set1_pd(-kExpClamp));
    __m512d kd = _mm512_roundscale_pd(_mm512_mul_pd(xi, vlog2e),
                                      _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    __m512d r = _mm512_fnmadd_pd(kd, vln2hi, xi);
    r = _mm512_fnmadd_pd(kd, vln2lo, r);
    // Degree-12 Taylor polynomial of exp on |r| <= ln2/2; remainder < 7e-15.
    __m512d p = _mm512_set1_pd(1.0 / 479001600.0);
    p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(1.0 / 39916800.0));
    p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(1.0 / 3628800.0));
    p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(1.0 / 362880.0));
    p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(1.0 / 40320.0));
    p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(1.0 / 5040.0));
    p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(1.0 / 720.0));
    p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(1.0 / 120.0));
    p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(1.0 / 24.0));
    p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(1.0 / 6.0));
    p = _mm512_fmadd_pd(p, r, _mm512_set1_pd(0.5));
    p = _mm512_fmadd_pd(p, r, c1);
    p = _mm512_fmadd_pd(p, r, c1);
    // Scale by 2^k through the exponent bits.
    __m512i ki = _mm512_cvttpd_epi64(kd);
    __m512i bits = _mm512_add_epi64(_mm512_castpd_si512(p), _mm512_slli_epi64(ki, 52));
    return _mm512_castsi512_pd(bits);
}

// ln(x) for strictly positive finite x; max relative error ~2 ulp.
inline __m512d vlog_pd(__m512d x) {
    const __m512d one = _mm512_set1_pd(1.0);
    __m512i bits = _mm512_castpd_si512(x);
    __m512i expo =
        _mm512_sub_epi64(_mm512_srli_epi64(bits, 52), _mm512_set1_epi64(1023));
    __m512d m = _mm512_castsi512_pd(
        _mm512_or_si512(_mm512_and_si512(bits, _mm512_set1_epi64(0x000FFFFFFFFFFFFFll)),
                        _mm512_set1_epi64(0x3FF0000000000000ll)));
    // Fold mantissa into (1/sqrt2, sqrt2] so ln(m) has no cancellation vs e*ln2.
    __mmask8 gt = _mm512_cmp_pd_mask(m, _mm512_set1_pd(kSqrt2), _CMP_GT_OQ);
    m = _mm512_mask_mul_pd(m, gt, m, _mm512_set1_pd(0.5));
    expo = _mm512_mask_add_epi64(expo, gt, expo, _mm512_set1_epi64(1));
    __m512d e = _mm512_cvtepi64_pd(expo);
    __m512d r = _mm512_div_pd(_mm512_sub_pd(m, one), _mm512_add_pd(m, one));
    __m512d r2 = _mm512_mul_pd(r, r);
    // ln m = 2r * sum_k r^{2k}/(2k+1); r^2 <= 0.0295 so 12 terms reach 1e-17.
    __m512d p = _mm512_set1_pd(1.0 / 23.0);
    p = _mm512_fmadd_pd(p, r2, _mm512_set1_pd(1.0 / 21.0));
    p = _mm512_fmadd_pd(p, r2, _mm512_set1_pd(1.0 / 19.0));
    p = _mm512_fmadd_pd(p, r2, _mm512_set1_pd(1.0 / 17.0));
    p = _mm512_fmadd_pd(p, r2, _mm512_set1_pd(1.0 / 15.0));
    p = _mm512_fmadd_pd(p, r2, _mm512_set1_pd(1.0 / 13.0));
    p = _mm512_fmadd_pd(p, r2, _mm512_set1_pd(1.0 / 11.0));
    p = _mm512_fmadd_pd(p, r2, _mm512_set1_pd(1.0 / 9.0));
    p = _mm512_fmadd_pd(p, r2, _mm512_set1_pd(1.0 / 7.0));
    p = _mm512_fmadd_pd(p, r2, _mm512_set1_pd(1.0 / 5.0));
    p = _mm512_fmadd_pd(p, r2, _mm512_set1_pd(1.0 / 3.0));
    p = _mm512_fmadd_pd(p, r2, one);
    __m512d lnm = _mm512_mul_pd(_mm512_add_pd(r, r), p);
    return _mm512_fmadd_pd(e, _mm512_set1_pd(kLn2Hi),
                           _mm512_fmadd_pd(e, _mm512_set1_pd(kLn2Lo), lnm));
}

#endif // SPHERE_SSM_AVX512

} // namespace sphere_ssm::detail
