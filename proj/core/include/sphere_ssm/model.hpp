#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sphere_ssm/rng.hpp"
#include "sphere_ssm/ssm.hpp"
#include "sphere_ssm/tape.hpp"
#include "sphere_ssm/tensor.hpp"

namespace sphere_ssm {

// Network configuration. Variants (layers, D, E):
//   tiny  = (24, 192,  384)   small = (24, 384,  768)
//   base  = (24, 768, 1536)   micro = ( 4,  64,  128)  [test scale]
// E = 2D throughout; dt_rank = ceil(D/16); state_dim = 16 (micro: 8).
// The input is a pair of spherical hemispheres, each patched at order p into
// N = 20*4^p triangular patches of V = (2^(6-p)+1)(2^(6-p)+2)/2 vertices with
// C channels per vertex; the token sequence is [left 0..N) | class | right],
// 2N+1 tokens total.
struct ModelConfig {
    std::string variant = "micro";
    long layers = 4;
    long dim = 64;     // D, token width
    long expand = 128; // E, scan width (2D)
    long patch_order = 5;
    long channels = 4;  // C
    long state_dim = 8; // per-channel SSM state size
    long dt_rank = 4;
    long conv_kw = 4;
    long head_out = 1;     // regression outputs
    bool bidirectional = true;
    bool with_decoder = false; // next-patch reconstruction decoder attached
    long dec_width = 256;

    long patches_per_hemi() const; // N
    long verts_per_patch() const;  // V
    long token_count() const { return 2 * patches_per_hemi() + 1; }
    long patch_features() const { return verts_per_patch() * channels; }
};

// variant in {tiny, small, base, micro}; throws UsageError otherwise.
ModelConfig make_model_config(const std::string& variant, long patch_order);

// Closed-form parameter count (no allocation); Model::param_count() enumerates
// the allocated tensors and must agree exactly.
long param_count(const ModelConfig& cfg);

// Weights. init(rng) draws in the declaration order below (embed, cls, pos,
// then each block in order: w_in, fwd direction, bwd direction, w_out; then
// head, then decoder), so a fixed seed pins every tensor bit-for-bit.
struct Model {
    ModelConfig cfg;

    Tensor embed_w; // [V*C, D], patch features (vertex-major, channel-minor) -> token
    Tensor cls;     // [D]
    Tensor pos;     // [2N+1, D]
    std::vector<VimBlockWeights> blocks;
    Tensor head_norm_gamma, head_norm_beta; // [D]
    Tensor head_w;                          // [D, head_out]
    Tensor head_b;                          // [head_out]
    // Next-patch decoder (present iff cfg.with_decoder): one hidden layer.
    Tensor dec_w1, dec_b1; // [D, dec_width], [dec_width]
    Tensor dec_w2, dec_b2; // [dec_width, V*C], [V*C]

    // Allocates and initializes all parameters: truncated normal (sigma=0.02,
    // clipped at 2 sigma) for embeddings/projections, zeros for biases;
    // scan-specific tensors use conv U(+-sqrt(1/Kw)), dt input projection
    // U(+-dt_rank^-1/2), dt_bias = softplus^-1(dt) with dt ~ exp(U(ln 1e-3,
    // ln 1e-1)), a_log[e,n] = ln(n+1), d_skip = 1.
    void init(Rng& rng);

    // Stable name -> tensor mapping; order fixed (init order). Names:
    // embed.w, cls, pos, block{i}.{norm.gamma,norm.beta,in.w}, block{i}.
    // {fwd,bwd}.{conv.w,conv.b,xproj.w,dt.w,dt.bias,a_log,d}, block{i}.out.w,
    // head.{norm.gamma,norm.beta,w,b}, dec.{w1,b1,w2,b2}.
    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::vector<std::pair<std::string, const Tensor*>> named_params() const;

    long param_count() const;
    void watch_all(Tape& tape);
};

// Embeds both hemispheres and assembles the token sequence:
// [left*W | cls | right*W] + pos. left/right: [B,N,V,C] -> [B,2N+1,D].
Tensor build_sequence(Tape* tp, const Tensor& left, const Tensor& right,
                      const Model& model);

// Class-token-free variant for next-patch training: [left*W | right*W] plus
// the positional rows excluding the class slot. -> [B,2N,D].
Tensor build_sequence_ar(Tape* tp, const Tensor& left, const Tensor& right,
                         const Model& model);

// Runs the residual block stack, layer-normalizes the middle (class) token,
// and applies the linear head. s0: [B,T,D] with odd T -> [B,head_out].
// Non-finite activations raise NumericError naming the block.
Tensor model_forward(Tape* tp, const Tensor& s0, const Model& model);

// Causal next-patch pass: forward-direction-only blocks, then the decoder.
// s0: [B,2N,D] -> [B,2N,V*C]; position t predicts patch t+1's features.
// Requires a unidirectional model with a decoder.
Tensor ar_forward(Tape* tp, const Tensor& s0, const Model& model);

// Analytic multiply-accumulate count for one batch-1 forward pass.
// Convention (counted terms, T = 2N+1):
//   embed    2N * (V*C) * D
//   per layer: in-proj T*D*2E; conv 2*T*E*Kw; scan projections
//              2*T*E*(dt_rank+2*state_dim); scan recurrence 2*T*E*state_dim*2;
//              out-proj T*E*D
//   head     D * head_out
struct MacsBreakdown {
    std::int64_t embed = 0, in_proj = 0, conv = 0, ssm = 0, out_proj = 0, head = 0;
    std::int64_t total = 0;
};
MacsBreakdown count_macs_breakdown(const ModelConfig& cfg);
std::int64_t count_macs(const ModelConfig& cfg);

// Checkpoint file: u64 little-endian header length, JSON header
// {format_version, config, tensors:[{name, shape, dtype, offset}]}, then raw
// little-endian f64 payload. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const Model& model);

// Loads tensors by name into an initialized model. reset_head keeps the
// model's current (fresh) head.* tensors. A bidirectional model may load a
// unidirectional checkpoint: each block's bwd direction is copied from the
// checkpoint's fwd tensors. Decoder tensors present in only one side are
// ignored (file-only) or left at init (model-only). Any other absence or
// shape mismatch raises DataError listing the offending tensors.
void load_checkpoint(const std::string& path, Model& model, bool reset_head = false);

} // namespace sphere_ssm
