#include "sphere_ssm/ops.hpp"

#include <cblas.h>
#include <cmath>
#include <cstring>

#include "blasw.hpp"
#include "sphere_ssm/errors.hpp"
#include "sphere_ssm/vexp.hpp"

namespace sphere_ssm {

namespace blasw {
void dgemm(bool trans_a, bool trans_b, long m, long n, long k, double alpha,
           const double* a, long lda, const double* b, long ldb, double beta, double* c,
           long ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, int(m), int(n), int(k), alpha, a,
                int(lda), b, int(ldb), beta, c, int(ldc));
}
} // namespace blasw

namespace {

int pnode(Tape* tp, const Tensor& t) { return (tp && tp->tracks(t)) ? t.node() : -1; }

bool any_tracked(std::initializer_list<int> nodes) {
    for (int n : nodes)
        if (n >= 0) return true;
    return false;
}

void sigmoid_into(const Tensor& x, Tensor& out) {
    // s = 1/(1+exp(-x)); exp computed by the vectorized kernel.
    long n = x.size();
    const double* xp = x.data();
    double* op = out.data();
    for (long i = 0; i < n; ++i) op[i] = -xp[i];
    vexp(op, op, std::size_t(n));
    for (long i = 0; i < n; ++i) op[i] = 1.0 / (1.0 + op[i]);
}

} // namespace

// ---------------------------------------------------------------------------
// matmul

Tensor matmul(Tape* tp, const Tensor& a, const Tensor& b) {
    if (a.ndim() == 2 && b.ndim() == 2) {
        long m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
        if (k != k2)
            throw UsageError("matmul inner-dim mismatch: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
        Tensor out = Tensor::empty({m, n});
        blasw::dgemm(false, false, m, n, k, 1.0, a.data(), k, b.data(), n, 0.0, out.data(), n);
        int pa = pnode(tp, a), pb = pnode(tp, b);
        if (any_tracked({pa, pb})) {
            tp->record(out, {pa, pb}, [a, b, pa, pb, m, n, k](Tape& t, const Tensor& g) {
                if (pa >= 0) {
                    Tensor ga = t.grad_buffer(pa, a.shape());
                    blasw::dgemm(false, true, m, k, n, 1.0, g.data(), n, b.data(), n, 1.0,
                                 ga.data(), k);
                }
                if (pb >= 0) {
                    Tensor gb = t.grad_buffer(pb, b.shape());
                    blasw::dgemm(true, false, k, n, m, 1.0, a.data(), k, g.data(), n, 1.0,
                                 gb.data(), n);
                }
            });
        }
        return out;
    }
    if (a.ndim() == 3 && b.ndim() == 2) {
        // Shared right operand: collapse batch into rows, single gemm.
        long B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
        if (k != b.dim(0))
            throw UsageError("matmul inner-dim mismatch: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
        Tensor out = Tensor::empty({B, m, n});
        blasw::dgemm(false, false, B * m, n, k, 1.0, a.data(), k, b.data(), n, 0.0,
                     out.data(), n);
        int pa = pnode(tp, a), pb = pnode(tp, b);
        if (any_tracked({pa, pb})) {
            tp->record(out, {pa, pb}, [a, b, pa, pb, B, m, n, k](Tape& t, const Tensor& g) {
                if (pa >= 0) {
                    Tensor ga = t.grad_buffer(pa, a.shape());
                    blasw::dgemm(false, true, B * m, k, n, 1.0, g.data(), n, b.data(), n,
                                 1.0, ga.data(), k);
                }
                if (pb >= 0) {
                    Tensor gb = t.grad_buffer(pb, b.shape());
                    blasw::dgemm(true, false, k, n, B * m, 1.0, a.data(), k, g.data(), n,
                                 1.0, gb.data(), n);
                }
            });
        }
        return out;
    }
    if (a.ndim() == 3 && b.ndim() == 3) {
        long B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
        if (b.dim(0) != B || b.dim(1) != k)
            throw UsageError("batched matmul mismatch: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
        Tensor out = Tensor::empty({B, m, n});
        for (long i = 0; i < B; ++i)
            blasw::dgemm(false, false, m, n, k, 1.0, a.data() + i * m * k, k,
                         b.data() + i * k * n, n, 0.0, out.data() + i * m * n, n);
        int pa = pnode(tp, a), pb = pnode(tp, b);
        if (any_tracked({pa, pb})) {
            tp->record(out, {pa, pb}, [a, b, pa, pb, B, m, n, k](Tape& t, const Tensor& g) {
                if (pa >= 0) {
                    Tensor ga = t.grad_buffer(pa, a.shape());
                    for (long i = 0; i < B; ++i)
                        blasw::dgemm(false, true, m, k, n, 1.0, g.data() + i * m * n, n,
                                     b.data() + i * k * n, n, 1.0, ga.data() + i * m * k, k);
                }
                if (pb >= 0) {
                    Tensor gb = t.grad_buffer(pb, b.shape());
                    for (long i = 0; i < B; ++i)
                        blasw::dgemm(true, false, k, n, m, 1.0, a.data() + i * m * k, k,
                                     g.data() + i * m * n, n, 1.0, gb.data() + i * k * n, n);
                }
            });
        }
        return out;
    }
    throw UsageError("matmul unsupported ranks: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
}

// ---------------------------------------------------------------------------
// add / sub / mul / scale

namespace {
// Validates that b's shape is a trailing suffix of a's; returns repeat count.
long suffix_rows(const Tensor& a, const Tensor& b, const char* opname) {
    int da = a.ndim(), db = b.ndim();
    if (db > da)
        throw UsageError(std::string(opname) + " shape mismatch: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    for (int i = 0; i < db; ++i)
        if (b.shape()[std::size_t(i)] != a.shape()[std::size_t(da - db + i)])
            throw UsageError(std::string(opname) +
                             " shape mismatch: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    return b.size() ? a.size() / b.size() : 0;
}

Tensor addsub(Tape* tp, const Tensor& a, const Tensor& b, double sign, const char* opname) {
    long rows = suffix_rows(a, b, opname);
    long bs = b.size();
    Tensor out = Tensor::empty(a.shape());
    const double* ap = a.data();
    const double* bp = b.data();
    double* op = out.data();
    for (long r = 0; r < rows; ++r)
        for (long i = 0; i < bs; ++i) op[r * bs + i] = ap[r * bs + i] + sign * bp[i];
    int pa = pnode(tp, a), pb = pnode(tp, b);
    if (any_tracked({pa, pb})) {
        std::vector<long> bshape = b.shape();
        tp->record(out, {pa, pb}, [pa, pb, rows, bs, sign, bshape](Tape& t, const Tensor& g) {
            t.accum(pa, g);
            if (pb >= 0) {
                Tensor gb = t.grad_buffer(pb, bshape);
                double* gbp = gb.data();
                const double* gp = g.data();
                for (long r = 0; r < rows; ++r)
                    for (long i = 0; i < bs; ++i) gbp[i] += sign * gp[r * bs + i];
            }
        });
    }
    return out;
}
} // namespace

Tensor add(Tape* tp, const Tensor& a, const Tensor& b) { return addsub(tp, a, b, 1.0, "add"); }
Tensor sub(Tape* tp, const Tensor& a, const Tensor& b) { return addsub(tp, a, b, -1.0, "sub"); }

Tensor mul(Tape* tp, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw UsageError("mul shape mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tensor out = Tensor::empty(a.shape());
    const double* ap = a.data();
    const double* bp = b.data();
    double* op = out.data();
    long n = a.size();
    for (long i = 0; i < n; ++i) op[i] = ap[i] * bp[i];
    int pa = pnode(tp, a), pb = pnode(tp, b);
    if (any_tracked({pa, pb})) {
        tp->record(out, {pa, pb}, [a, b, pa, pb, n](Tape& t, const Tensor& g) {
            const double* gp = g.data();
            if (pa >= 0) {
                Tensor ga = t.grad_buffer(pa, a.shape());
                double* gap = ga.data();
                const double* bp2 = b.data();
                for (long i = 0; i < n; ++i) gap[i] += gp[i] * bp2[i];
            }
            if (pb >= 0) {
                Tensor gb = t.grad_buffer(pb, b.shape());
                double* gbp = gb.data();
                const double* ap2 = a.data();
                for (long i = 0; i < n; ++i) gbp[i] += gp[i] * ap2[i];
            }
        });
    }
    return out;
}

Tensor scale(Tape* tp, const Tensor& a, double s) {
    Tensor out = Tensor::empty(a.shape());
    const double* ap = a.data();
    double* op = out.data();
    long n = a.size();
    for (long i = 0; i < n; ++i) op[i] = ap[i] * s;
    int pa = pnode(tp, a);
    if (any_tracked({pa})) {
        tp->record(out, {pa}, [pa, s, n](Tape& t, const Tensor& g) {
            Tensor ga = t.grad_buffer(pa, g.shape());
            double* gap = ga.data();
            const double* gp = g.data();
            for (long i = 0; i < n; ++i) gap[i] += gp[i] * s;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise activations

Tensor exp_op(Tape* tp, const Tensor& x) {
    Tensor out = Tensor::empty(x.shape());
    vexp(x.data(), out.data(), std::size_t(x.size()));
    int px = pnode(tp, x);
    if (any_tracked({px})) {
        Tensor y = out; // shared storage; keeps values alive for backward
        tp->record(out, {px}, [px, y](Tape& t, const Tensor& g) {
            Tensor gx = t.grad_buffer(px, y.shape());
            double* gxp = gx.data();
            const double* gp = g.data();
            const double* yp = y.data();
            long n = y.size();
            for (long i = 0; i < n; ++i) gxp[i] += gp[i] * yp[i];
        });
    }
    return out;
}

Tensor sigmoid(Tape* tp, const Tensor& x) {
    Tensor out = Tensor::empty(x.shape());
    sigmoid_into(x, out);
    int px = pnode(tp, x);
    if (any_tracked({px})) {
        Tensor y = out;
        tp->record(out, {px}, [px, y](Tape& t, const Tensor& g) {
            Tensor gx = t.grad_buffer(px, y.shape());
            double* gxp = gx.data();
            const double* gp = g.data();
            const double* yp = y.data();
            long n = y.size();
            for (long i = 0; i < n; ++i) gxp[i] += gp[i] * yp[i] * (1.0 - yp[i]);
        });
    }
    return out;
}

Tensor softplus(Tape* tp, const Tensor& x) {
    Tensor out = Tensor::empty(x.shape());
    const double* xp = x.data();
    double* op = out.data();
    long n = x.size();
    for (long i = 0; i < n; ++i) {
        double v = xp[i];
        if (v > 30.0)
            op[i] = v;
        else if (v < -30.0)
            op[i] = std::exp(v);
        else
            op[i] = std::log1p(std::exp(v));
    }
    int px = pnode(tp, x);
    if (any_tracked({px})) {
        Tensor s = Tensor::empty(x.shape());
        sigmoid_into(x, s);
        tp->record(out, {px}, [px, s](Tape& t, const Tensor& g) {
            Tensor gx = t.grad_buffer(px, s.shape());
            double* gxp = gx.data();
            const double* gp = g.data();
            const double* sp = s.data();
            long m = s.size();
            for (long i = 0; i < m; ++i) gxp[i] += gp[i] * sp[i];
        });
    }
    return out;
}

Tensor silu(Tape* tp, const Tensor& x) {
    Tensor s = Tensor::empty(x.shape());
    sigmoid_into(x, s);
    Tensor out = Tensor::empty(x.shape());
    const double* xp = x.data();
    const double* sp = s.data();
    double* op = out.data();
    long n = x.size();
    for (long i = 0; i < n; ++i) op[i] = xp[i] * sp[i];
    int px = pnode(tp, x);
    if (any_tracked({px})) {
        tp->record(out, {px}, [px, x, s](Tape& t, const Tensor& g) {
            Tensor gx = t.grad_buffer(px, x.shape());
            double* gxp = gx.data();
            const double* gp = g.data();
            const double* xp2 = x.data();
            const double* sp2 = s.data();
            long m = x.size();
            for (long i = 0; i < m; ++i) {
                double si = sp2[i];
                gxp[i] += gp[i] * (si + xp2[i] * si * (1.0 - si));
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// layernorm

Tensor layernorm(Tape* tp, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps) {
    long D = x.dim(-1);
    if (gamma.size() != D || beta.size() != D)
        throw UsageError("layernorm gamma/beta must have size " + std::to_string(D));
    if (eps <= 0) throw UsageError("layernorm eps must be > 0");
    long rows = x.size() / D;
    Tensor out = Tensor::empty(x.shape());
    Tensor xhat = Tensor::empty(x.shape());
    Tensor inv_s = Tensor::empty({rows});
    const double* xp = x.data();
    const double* gp = gamma.data();
    const double* bp = beta.data();
    double* op = out.data();
    double* xh = xhat.data();
    double* is = inv_s.data();
    for (long r = 0; r < rows; ++r) {
        const double* row = xp + r * D;
        double mu = 0;
        for (long i = 0; i < D; ++i) mu += row[i];
        mu /= double(D);
        double var = 0;
        for (long i = 0; i < D; ++i) {
            double d = row[i] - mu;
            var += d * d;
        }
        var /= double(D);
        double inv = 1.0 / std::sqrt(var + eps);
        is[r] = inv;
        for (long i = 0; i < D; ++i) {
            double h = (row[i] - mu) * inv;
            xh[r * D + i] = h;
            op[r * D + i] = gp[i] * h + bp[i];
        }
    }
    int px = pnode(tp, x), pg = pnode(tp, gamma), pb = pnode(tp, beta);
    if (any_tracked({px, pg, pb})) {
        tp->record(out, {px, pg, pb},
                   [px, pg, pb, xhat, inv_s, gamma, rows, D](Tape& t, const Tensor& g) {
                       const double* gp2 = g.data();
                       const double* xh2 = xhat.data();
                       const double* is2 = inv_s.data();
                       const double* gam = gamma.data();
                       if (px >= 0) {
                           Tensor gx = t.grad_buffer(px, xhat.shape());
                           double* gxp = gx.data();
                           for (long r = 0; r < rows; ++r) {
                               double mean_gy = 0, mean_gyh = 0;
                               for (long i = 0; i < D; ++i) {
                                   double gy = gp2[r * D + i] * gam[i];
                                   mean_gy += gy;
                                   mean_gyh += gy * xh2[r * D + i];
                               }
                               mean_gy /= double(D);
                               mean_gyh /= double(D);
                               for (long i = 0; i < D; ++i) {
                                   double gy = gp2[r * D + i] * gam[i];
                                   gxp[r * D + i] +=
                                       is2[r] * (gy - mean_gy - xh2[r * D + i] * mean_gyh);
                               }
                           }
                       }
                       if (pg >= 0) {
                           Tensor gg = t.grad_buffer(pg, gamma.shape());
                           double* ggp = gg.data();
                           for (long r = 0; r < rows; ++r)
                               for (long i = 0; i < D; ++i)
                                   ggp[i] += gp2[r * D + i] * xh2[r * D + i];
                       }
                       if (pb >= 0) {
                           Tensor gb = t.grad_buffer(pb, {D});
                           double* gbp = gb.data();
                           for (long r = 0; r < rows; ++r)
                               for (long i = 0; i < D; ++i) gbp[i] += gp2[r * D + i];
                       }
                   });
    }
    return out;
}

// ---------------------------------------------------------------------------
// depthwise causal conv1d

Tensor conv1d_depthwise_causal(Tape* tp, const Tensor& x, const Tensor& w,
                               const Tensor& bias) {
    if (x.ndim() != 3 || w.ndim() != 2)
        throw UsageError("conv1d expects x [B,L,E], w [E,Kw]; got " + shape_str(x.shape()) +
                         ", " + shape_str(w.shape()));
    long B = x.dim(0), L = x.dim(1), E = x.dim(2), Kw = w.dim(1);
    if (w.dim(0) != E || bias.size() != E)
        throw UsageError("conv1d weight/bias channel mismatch with x " +
                         shape_str(x.shape()));
    if (Kw < 1) throw UsageError("conv1d needs Kw >= 1");
    Tensor out = Tensor::empty(x.shape());
    const double* xp = x.data();
    const double* wp = w.data();
    const double* bp = bias.data();
    double* op = out.data();
    for (long b = 0; b < B; ++b)
        for (long t = 0; t < L; ++t) {
            double* orow = op + (b * L + t) * E;
            for (long e = 0; e < E; ++e) orow[e] = bp[e];
            for (long j = 0; j < Kw; ++j) {
                long ti = t - (Kw - 1) + j;
                if (ti < 0) continue;
                const double* xrow = xp + (b * L + ti) * E;
                for (long e = 0; e < E; ++e) orow[e] += wp[e * Kw + j] * xrow[e];
            }
        }
    int px = pnode(tp, x), pw = pnode(tp, w), pb = pnode(tp, bias);
    if (any_tracked({px, pw, pb})) {
        tp->record(out, {px, pw, pb},
                   [px, pw, pb, x, w, B, L, E, Kw](Tape& t, const Tensor& g) {
                       const double* gp = g.data();
                       const double* xp2 = x.data();
                       const double* wp2 = w.data();
                       if (px >= 0) {
                           Tensor gx = t.grad_buffer(px, x.shape());
                           double* gxp = gx.data();
                           for (long b = 0; b < B; ++b)
                               for (long tt = 0; tt < L; ++tt)
                                   for (long j = 0; j < Kw; ++j) {
                                       long ti = tt - (Kw - 1) + j;
                                       if (ti < 0) continue;
                                       double* gxrow = gxp + (b * L + ti) * E;
                                       const double* grow = gp + (b * L + tt) * E;
                                       for (long e = 0; e < E; ++e)
                                           gxrow[e] += wp2[e * Kw + j] * grow[e];
                                   }
                       }
                       if (pw >= 0) {
                           Tensor gw = t.grad_buffer(pw, w.shape());
                           double* gwp = gw.data();
                           for (long b = 0; b < B; ++b)
                               for (long tt = 0; tt < L; ++tt)
                                   for (long j = 0; j < Kw; ++j) {
                                       long ti = tt - (Kw - 1) + j;
                                       if (ti < 0) continue;
                                       const double* xrow = xp2 + (b * L + ti) * E;
                                       const double* grow = gp + (b * L + tt) * E;
                                       for (long e = 0; e < E; ++e)
                                           gwp[e * Kw + j] += grow[e] * xrow[e];
                                   }
                       }
                       if (pb >= 0) {
                           Tensor gb = t.grad_buffer(pb, {E});
                           double* gbp = gb.data();
                           long rows = B * L;
                           for (long r = 0; r < rows; ++r)
                               for (long e = 0; e < E; ++e) gbp[e] += gp[r * E + e];
                       }
                   });
    }
    return out;
}

// ---------------------------------------------------------------------------
// structural ops

Tensor reverse_time(Tape* tp, const Tensor& x) {
    if (x.ndim() != 3) throw UsageError("reverse_time expects [B,T,D]");
    long B = x.dim(0), T = x.dim(1), D = x.dim(2);
    Tensor out = Tensor::empty(x.shape());
    for (long b = 0; b < B; ++b)
        for (long t = 0; t < T; ++t)
            std::memcpy(out.data() + (b * T + (T - 1 - t)) * D, x.data() + (b * T + t) * D,
                        std::size_t(D) * sizeof(double));
    int px = pnode(tp, x);
    if (any_tracked({px})) {
        tp->record(out, {px}, [px, B, T, D](Tape& t, const Tensor& g) {
            Tensor gx = t.grad_buffer(px, {B, T, D});
            double* gxp = gx.data();
            const double* gp = g.data();
            for (long b = 0; b < B; ++b)
                for (long tt = 0; tt < T; ++tt) {
                    const double* grow = gp + (b * T + (T - 1 - tt)) * D;
                    double* gxrow = gxp + (b * T + tt) * D;
                    for (long i = 0; i < D; ++i) gxrow[i] += grow[i];
                }
        });
    }
    return out;
}

Tensor slice_time(Tape* tp, const Tensor& x, long t0, long t1) {
    if (x.ndim() != 3) throw UsageError("slice_time expects [B,T,D]");
    long B = x.dim(0), T = x.dim(1), D = x.dim(2);
    if (t0 < 0 || t1 > T || t0 >= t1)
        throw UsageError("slice_time range [" + std::to_string(t0) + "," +
                         std::to_string(t1) + ") invalid for T=" + std::to_string(T));
    long Ts = t1 - t0;
    Tensor out = Tensor::empty({B, Ts, D});
    for (long b = 0; b < B; ++b)
        std::memcpy(out.data() + b * Ts * D, x.data() + (b * T + t0) * D,
                    std::size_t(Ts * D) * sizeof(double));
    int px = pnode(tp, x);
    if (any_tracked({px})) {
        tp->record(out, {px}, [px, B, T, D, t0, Ts](Tape& t, const Tensor& g) {
            Tensor gx = t.grad_buffer(px, {B, T, D});
            double* gxp = gx.data();
            const double* gp = g.data();
            for (long b = 0; b < B; ++b)
                for (long i = 0; i < Ts * D; ++i) gxp[(b * T + t0) * D + i] += gp[b * Ts * D + i];
        });
    }
    return out;
}

Tensor select_token(Tape* tp, const Tensor& x, long t) {
    if (x.ndim() != 3) throw UsageError("select_token expects [B,T,D]");
    long B = x.dim(0), T = x.dim(1), D = x.dim(2);
    if (t < 0 || t >= T) throw UsageError("select_token index out of range");
    Tensor out = Tensor::empty({B, D});
    for (long b = 0; b < B; ++b)
        std::memcpy(out.data() + b * D, x.data() + (b * T + t) * D,
                    std::size_t(D) * sizeof(double));
    int px = pnode(tp, x);
    if (any_tracked({px})) {
        tp->record(out, {px}, [px, B, T, D, t](Tape& tpp, const Tensor& g) {
            Tensor gx = tpp.grad_buffer(px, {B, T, D});
            double* gxp = gx.data();
            const double* gp = g.data();
            for (long b = 0; b < B; ++b)
                for (long i = 0; i < D; ++i) gxp[(b * T + t) * D + i] += gp[b * D + i];
        });
    }
    return out;
}

Tensor slice_last(Tape* tp, const Tensor& x, long off, long len) {
    long D = x.dim(-1);
    if (off < 0 || len <= 0 || off + len > D)
        throw UsageError("slice_last range invalid for last dim " + std::to_string(D));
    long rows = x.size() / D;
    std::vector<long> oshape = x.shape();
    oshape.back() = len;
    Tensor out = Tensor::empty(oshape);
    const double* xp = x.data();
    double* op = out.data();
    for (long r = 0; r < rows; ++r)
        std::memcpy(op + r * len, xp + r * D + off, std::size_t(len) * sizeof(double));
    int px = pnode(tp, x);
    if (any_tracked({px})) {
        std::vector<long> xshape = x.shape();
        tp->record(out, {px}, [px, xshape, rows, D, off, len](Tape& t, const Tensor& g) {
            Tensor gx = t.grad_buffer(px, xshape);
            double* gxp = gx.data();
            const double* gp = g.data();
            for (long r = 0; r < rows; ++r)
                for (long i = 0; i < len; ++i) gxp[r * D + off + i] += gp[r * len + i];
        });
    }
    return out;
}

Tensor concat_time(Tape* tp, const std::vector<Tensor>& xs) {
    if (xs.empty()) throw UsageError("concat_time of zero tensors");
    long B = xs[0].dim(0), D = xs[0].dim(2), T = 0;
    for (const Tensor& x : xs) {
        if (x.ndim() != 3 || x.dim(0) != B || x.dim(2) != D)
            throw UsageError("concat_time operands must share [B,*,D]");
        T += x.dim(1);
    }
    Tensor out = Tensor::empty({B, T, D});
    long t_off = 0;
    for (const Tensor& x : xs) {
        long Ti = x.dim(1);
        for (long b = 0; b < B; ++b)
            std::memcpy(out.data() + (b * T + t_off) * D, x.data() + b * Ti * D,
                        std::size_t(Ti * D) * sizeof(double));
        t_off += Ti;
    }
    std::vector<int> parents;
    bool tracked = false;
    for (const Tensor& x : xs) {
        parents.push_back(pnode(tp, x));
        tracked = tracked || parents.back() >= 0;
    }
    if (tracked) {
        std::vector<long> lens;
        for (const Tensor& x : xs) lens.push_back(x.dim(1));
        tp->record(out, parents, [parents, lens, B, T, D](Tape& t, const Tensor& g) {
            long off = 0;
            const double* gp = g.data();
            for (std::size_t i = 0; i < parents.size(); ++i) {
                long Ti = lens[i];
                if (parents[i] >= 0) {
                    Tensor gx = t.grad_buffer(parents[i], {B, Ti, D});
                    double* gxp = gx.data();
                    for (long b = 0; b < B; ++b)
                        for (long j = 0; j < Ti * D; ++j)
                            gxp[b * Ti * D + j] += gp[(b * T + off) * D + j];
                }
                off += Ti;
            }
        });
    }
    return out;
}

Tensor reshape(Tape* tp, const Tensor& x, std::vector<long> new_shape) {
    Tensor out = x.reshaped(std::move(new_shape));
    int px = pnode(tp, x);
    if (any_tracked({px})) {
        std::vector<long> xshape = x.shape();
        tp->record(out, {px}, [px, xshape](Tape& t, const Tensor& g) {
            t.accum(px, g.reshaped(xshape));
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions / losses

Tensor mean_all(Tape* tp, const Tensor& x) {
    long n = x.size();
    if (n == 0) throw UsageError("mean_all of empty tensor");
    double s = 0;
    const double* xp = x.data();
    for (long i = 0; i < n; ++i) s += xp[i];
    Tensor out = Tensor::scalar(s / double(n));
    int px = pnode(tp, x);
    if (any_tracked({px})) {
        std::vector<long> xshape = x.shape();
        tp->record(out, {px}, [px, xshape, n](Tape& t, const Tensor& g) {
            double gs = g.item() / double(n);
            Tensor gx = t.grad_buffer(px, xshape);
            double* gxp = gx.data();
            for (long i = 0; i < n; ++i) gxp[i] += gs;
        });
    }
    return out;
}

Tensor mse_loss(Tape* tp, const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target))
        throw UsageError("mse_loss shape mismatch: " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
    long n = pred.size();
    if (n == 0) throw UsageError("mse_loss of empty tensors");
    Tensor diff = Tensor::empty(pred.shape());
    const double* pp = pred.data();
    const double* tt = target.data();
    double* dp = diff.data();
    double s = 0;
    for (long i = 0; i < n; ++i) {
        double d = pp[i] - tt[i];
        dp[i] = d;
        s += d * d;
    }
    Tensor out = Tensor::scalar(s / double(n));
    int pp_node = pnode(tp, pred);
    if (any_tracked({pp_node})) {
        tp->record(out, {pp_node}, [pp_node, diff, n](Tape& t, const Tensor& g) {
            double gs = 2.0 * g.item() / double(n);
            Tensor gx = t.grad_buffer(pp_node, diff.shape());
            double* gxp = gx.data();
            const double* dp2 = diff.data();
            for (long i = 0; i < n; ++i) gxp[i] += gs * dp2[i];
        });
    }
    return out;
}

} // namespace sphere_ssm
