#pragma once

#include <utility>
#include <vector>

#include "sphere_ssm/ops.hpp"
#include "sphere_ssm/tape.hpp"
#include "sphere_ssm/tensor.hpp"

// Selective state-space math: zero-order-hold discretization, the selective
// scan (sequential and chunked-parallel implementations with a hand-derived
// adjoint), the time-invariant kernel equivalence, the bidirectional
// scan-and-gate block, and a forward-only attention block for benchmarking.
namespace sphere_ssm {

enum class ScanDir { fwd, bwd };
enum class ScanImpl { sequential, parallel };

// Elementwise discretization of a diagonal continuous system (a, b) with step
// delta (all tensors same shape): abar = e^{delta*a}, bbar = ((e^{delta*a}-1)/a)*b,
// with the removable singularity evaluated as bbar = delta*b when |delta*a| < 1e-8.
// Every delta entry must be > 0.
std::pair<Tensor, Tensor> zoh_discretize(const Tensor& a, const Tensor& b,
                                         const Tensor& delta);

// Input-dependent scan parameters for one group of E channels with a diagonal
// state matrix A = -exp(a_log) of state_dim entries per channel.
// Per timestep, from the scan input u_t [E]:
//   (dtin | b_t | c_t) = u_t . w_x            (ranks dt_rank, Ns, Ns)
//   delta_t            = softplus(dtin . w_dt + dt_bias)   [E]
//   h_t = e^{delta_t a} h_{t-1} + ((e^{delta_t a}-1)/a) b_t u_t
//   y_t = sum_n c_t[n] h_t[.,n] + d_skip u_t
// b_bias/c_bias, when defined, are added to b_t/c_t (zero w_x rows then give a
// frozen time-invariant system for kernel-equivalence checks).
struct SelectiveScanParams {
    long state_dim = 16; // Ns
    long dt_rank = 1;    // R
    Tensor a_log;        // [E, Ns]
    Tensor w_x;          // [E, R + 2*Ns]
    Tensor w_dt;         // [R, E]
    Tensor dt_bias;      // [E]
    Tensor d_skip;       // [E]
    Tensor b_bias;       // optional [Ns]
    Tensor c_bias;       // optional [Ns]
};

// Reference selective scan over u [B,L,E] -> y [B,L,E] with full backward
// through every parameter and u. dir=bwd scans the reversed sequence and
// reverses the output (no intermediate reversal is materialized).
// impl=parallel computes each 'chunk'-sized block by an associative doubling
// prefix over the affine maps h -> abar*h + bbar*u, with a sequential carry
// across blocks; the backward pass is the same adjoint for both impls.
Tensor selective_scan(Tape* tp, const Tensor& u, const SelectiveScanParams& p,
                      ScanDir dir, ScanImpl impl = ScanImpl::sequential,
                      long chunk = 64);
Tensor selective_scan_sequential(Tape* tp, const Tensor& u,
                                 const SelectiveScanParams& p, ScanDir dir);
Tensor selective_scan_parallel(Tape* tp, const Tensor& u, const SelectiveScanParams& p,
                               ScanDir dir, long chunk = 64);

// Time-invariant scalar-channel kernel: K[k] = c * abar^k * bbar, k = 0..len-1.
std::vector<double> lti_kernel(double abar, double bbar, double c, long len);
// y_t = sum_{k<=t} K[k] * u[t-k] over u [B,L] (direct causal convolution).
Tensor lti_kernel_apply(const Tensor& u, double abar, double bbar, double c);

// Parameters of one scan direction inside a block.
struct ScanDirectionWeights {
    Tensor conv_w;  // [E, Kw] depthwise causal conv
    Tensor conv_b;  // [E]
    Tensor w_x;     // [E, R + 2*Ns]
    Tensor w_dt;    // [R, E]
    Tensor dt_bias; // [E]
    Tensor a_log;   // [E, Ns]
    Tensor d_skip;  // [E]
};

// One residual block: pre-norm, shared input projection D -> 2E split into the
// scan path x and the gate z, per-direction conv1d+SiLU+selective scan, paths
// combined by addition, gated by SiLU(z), shared output projection E -> D.
struct VimBlockWeights {
    long state_dim = 16;
    long dt_rank = 1;
    long conv_kw = 4;
    Tensor norm_gamma, norm_beta; // [D]
    Tensor w_in;                  // [D, 2E]
    ScanDirectionWeights fwd;
    ScanDirectionWeights bwd; // tensors undefined when the block is causal-only
    Tensor w_out;             // [E, D]

    bool bidirectional() const { return bwd.conv_w.defined(); }
};

// Fused conv1d+SiLU+scan(+reverse path)+gate stage of the block, recorded as a
// single tape node: x, z [B,T,E] -> (y_fwd [+ y_bwd]) * SiLU(z). The backward
// pass is the hand-derived scan adjoint with chunked state recomputation.
// If ysum_out is non-null it receives the pre-gate y_fwd [+ y_bwd] (untracked).
Tensor vim_scan_gate(Tape* tp, const Tensor& x, const Tensor& z,
                     const VimBlockWeights& w, Tensor* ysum_out = nullptr);

// The full residual block on S [B,T,D].
Tensor vim_block_forward(Tape* tp, const Tensor& s, const VimBlockWeights& w);

// Forward-only pre-norm multi-head attention + MLP block (benchmark baseline).
struct AttentionBlockWeights {
    long heads = 3;
    Tensor norm1_gamma, norm1_beta; // [D]
    Tensor w_qkv;                   // [D, 3D]
    Tensor b_qkv;                   // [3D]
    Tensor w_out;                   // [D, D]
    Tensor b_out;                   // [D]
    Tensor norm2_gamma, norm2_beta; // [D]
    Tensor w_mlp1;                  // [D, 4D]
    Tensor b_mlp1;                  // [4D]
    Tensor w_mlp2;                  // [4D, D]
    Tensor b_mlp2;                  // [D]
};

// S [B,T,D] -> [B,T,D]. Scratch is one [T,T] score matrix per (batch, head),
// processed serially, so peak transient memory scales as T^2 while the scan
// block scales as T. If attn_out is non-null it receives the post-softmax
// attention matrices [heads, T, T] for batch element 0.
Tensor attention_block_forward(const Tensor& s, const AttentionBlockWeights& w,
                               Tensor* attn_out = nullptr);

} // namespace sphere_ssm
