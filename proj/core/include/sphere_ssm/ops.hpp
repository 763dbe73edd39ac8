#pragma once

#include <vector>

#include "sphere_ssm/tape.hpp"
#include "sphere_ssm/tensor.hpp"

// Differentiable primitives. Every op takes an optional tape: pass nullptr for
// plain (untracked) evaluation. Inputs participate in autodiff iff the tape
// tracks them; untracked inputs are treated as constants.
namespace sphere_ssm {

// [m,k]x[k,n] -> [m,n]; [B,m,k]x[k,n] -> [B,m,n] (collapsed into one gemm);
// [B,m,k]x[B,k,n] -> [B,m,n] (per-batch gemm).
Tensor matmul(Tape* tp, const Tensor& a, const Tensor& b);

// Elementwise a+b; b may also match a trailing suffix of a's shape ([...,D]+[D],
// [B,T,D]+[T,D]) and is then broadcast over the leading dims.
Tensor add(Tape* tp, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tp, const Tensor& a, const Tensor& b);
// Elementwise product, same shapes.
Tensor mul(Tape* tp, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tp, const Tensor& a, double s);

Tensor exp_op(Tape* tp, const Tensor& x);
Tensor sigmoid(Tape* tp, const Tensor& x);
// softplus(x) = ln(1+e^x), overflow-safe linear branch for x > 30.
Tensor softplus(Tape* tp, const Tensor& x);
// silu(x) = x * sigmoid(x).
Tensor silu(Tape* tp, const Tensor& x);

// Standardize the last axis, then scale/shift: gamma * (x-mu)/sqrt(var+eps) + beta.
Tensor layernorm(Tape* tp, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps = 1e-5);

// out[b,t,e] = bias[e] + sum_j w[e,j] * x[b, t-(Kw-1)+j, e], zeros off the left
// edge (causal). x: [B,L,E], w: [E,Kw], bias: [E].
Tensor conv1d_depthwise_causal(Tape* tp, const Tensor& x, const Tensor& w,
                               const Tensor& bias);

// Reverses axis 1 of [B,T,D].
Tensor reverse_time(Tape* tp, const Tensor& x);
// x[:, t0:t1, :] of [B,T,D] (copy).
Tensor slice_time(Tape* tp, const Tensor& x, long t0, long t1);
// x[:, t, :] -> [B,D].
Tensor select_token(Tape* tp, const Tensor& x, long t);
// x[..., off:off+len] along the last axis (copy).
Tensor slice_last(Tape* tp, const Tensor& x, long off, long len);
// Concatenation along axis 1; all inputs [B,*,D] with matching B, D.
Tensor concat_time(Tape* tp, const std::vector<Tensor>& xs);
// Same data, new shape; gradient flows through.
Tensor reshape(Tape* tp, const Tensor& x, std::vector<long> new_shape);

// mean((pred-target)^2) over all elements -> scalar. target is constant.
Tensor mse_loss(Tape* tp, const Tensor& pred, const Tensor& target);
// mean of all elements -> scalar.
Tensor mean_all(Tape* tp, const Tensor& x);

} // namespace sphere_ssm
