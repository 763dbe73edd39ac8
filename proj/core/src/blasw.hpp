#pragma once

// Internal row-major dgemm wrapper (not installed).
namespace sphere_ssm::blasw {

// C = alpha * op(A) * op(B) + beta * C, row-major.
// op(A): [m,k], op(B): [k,n], C: [m,n].
void dgemm(bool trans_a, bool trans_b, long m, long n, long k, double alpha,
           const double* a, long lda, const double* b, long ldb, double beta, double* c,
           long ldc);

} // namespace sphere_ssm::blasw
