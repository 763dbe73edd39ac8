#include "sphere_ssm/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <map>

#include "sphere_ssm/errors.hpp"
#include "sphere_ssm/ops.hpp"

namespace sphere_ssm {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw UsageError(msg);
}

Tensor trunc_normal(std::vector<long> shape, Rng& rng, double sigma = 0.02) {
    Tensor t = Tensor::empty(std::move(shape));
    for (long i = 0; i < t.size(); ++i) t.data()[i] = rng.truncated_normal(sigma);
    return t;
}

Tensor uniform_tensor(std::vector<long> shape, Rng& rng, double bound) {
    Tensor t = Tensor::empty(std::move(shape));
    for (long i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-bound, bound);
    return t;
}

void init_direction(ScanDirectionWeights& w, long E, long Ns, long R, long Kw,
                    Rng& rng) {
    const double conv_bound = std::sqrt(1.0 / double(Kw));
    w.conv_w = uniform_tensor({E, Kw}, rng, conv_bound);
    w.conv_b = uniform_tensor({E}, rng, conv_bound);
    w.w_x = trunc_normal({E, R + 2 * Ns}, rng);
    w.w_dt = uniform_tensor({R, E}, rng, 1.0 / std::sqrt(double(R)));
    // delta at init ~ logUniform(1e-3, 1e-1): dt_bias = softplus^{-1}(dt).
    w.dt_bias = Tensor::empty({E});
    for (long e = 0; e < E; ++e) {
        double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
        w.dt_bias.data()[e] = std::log(std::expm1(dt));
    }
    w.a_log = Tensor::empty({E, Ns});
    for (long e = 0; e < E; ++e)
        for (long n = 0; n < Ns; ++n)
            w.a_log.data()[e * Ns + n] = std::log(double(n + 1));
    w.d_skip = Tensor::full({E}, 1.0);
}

} // namespace

long ModelConfig::patches_per_hemi() const { return 20L << (2 * patch_order); }

long ModelConfig::verts_per_patch() const {
    const long n = 1L << (6 - patch_order);
    return (n + 1) * (n + 2) / 2;
}

ModelConfig make_model_config(const std::string& variant, long patch_order) {
    if (patch_order < 1 || patch_order > 5)
        throw UsageError("patch order must be in [1,5], got " +
                         std::to_string(patch_order));
    ModelConfig c;
    c.variant = variant;
    c.patch_order = patch_order;
    if (variant == "tiny") {
        c.layers = 24;
        c.dim = 192;
    } else if (variant == "small") {
        c.layers = 24;
        c.dim = 384;
    } else if (variant == "base") {
        c.layers = 24;
        c.dim = 768;
    } else if (variant == "micro") {
        c.layers = 4;
        c.dim = 64;
    } else {
        throw UsageError("unknown model variant '" + variant +
                         "' (expected tiny|small|base|micro)");
    }
    c.expand = 2 * c.dim;
    c.state_dim = (variant == "micro") ? 8 : 16;
    c.dt_rank = (c.dim + 15) / 16;
    return c;
}

void Model::init(Rng& rng) {
    const long D = cfg.dim, E = cfg.expand, Ns = cfg.state_dim, R = cfg.dt_rank;
    const long Kw = cfg.conv_kw, VC = cfg.patch_features(), T = cfg.token_count();
    embed_w = trunc_normal({VC, D}, rng);
    cls = trunc_normal({D}, rng);
    pos = trunc_normal({T, D}, rng);
    blocks.clear();
    blocks.resize(std::size_t(cfg.layers));
    for (VimBlockWeights& b : blocks) {
        b.state_dim = Ns;
        b.dt_rank = R;
        b.conv_kw = Kw;
        b.norm_gamma = Tensor::full({D}, 1.0);
        b.norm_beta = Tensor::zeros({D});
        b.w_in = trunc_normal({D, 2 * E}, rng);
        init_direction(b.fwd, E, Ns, R, Kw, rng);
        if (cfg.bidirectional) init_direction(b.bwd, E, Ns, R, Kw, rng);
        b.w_out = trunc_normal({E, D}, rng);
    }
    head_norm_gamma = Tensor::full({D}, 1.0);
    head_norm_beta = Tensor::zeros({D});
    head_w = trunc_normal({D, cfg.head_out}, rng);
    head_b = Tensor::zeros({cfg.head_out});
    if (cfg.with_decoder) {
        dec_w1 = trunc_normal({D, cfg.dec_width}, rng);
        dec_b1 = Tensor::zeros({cfg.dec_width});
        dec_w2 = trunc_normal({cfg.dec_width, VC}, rng);
        dec_b2 = Tensor::zeros({VC});
    } else {
        dec_w1 = dec_b1 = dec_w2 = dec_b2 = Tensor();
    }
}

namespace {

template <typename ModelT, typename TensorPtr>
std::vector<std::pair<std::string, TensorPtr>> named_params_impl(ModelT& m) {
    std::vector<std::pair<std::string, TensorPtr>> out;
    out.push_back({"embed.w", &m.embed_w});
    out.push_back({"cls", &m.cls});
    out.push_back({"pos", &m.pos});
    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
        auto& b = m.blocks[i];
        const std::string p = "block" + std::to_string(i) + ".";
        out.push_back({p + "norm.gamma", &b.norm_gamma});
        out.push_back({p + "norm.beta", &b.norm_beta});
        out.push_back({p + "in.w", &b.w_in});
        auto dir = [&](const std::string& d, auto& w) {
            out.push_back({p + d + ".conv.w", &w.conv_w});
            out.push_back({p + d + ".conv.b", &w.conv_b});
            out.push_back({p + d + ".xproj.w", &w.w_x});
            out.push_back({p + d + ".dt.w", &w.w_dt});
            out.push_back({p + d + ".dt.bias", &w.dt_bias});
            out.push_back({p + d + ".a_log", &w.a_log});
            out.push_back({p + d + ".d", &w.d_skip});
        };
        dir("fwd", b.fwd);
        if (m.cfg.bidirectional) dir("bwd", b.bwd);
        out.push_back({p + "out.w", &b.w_out});
    }
    out.push_back({"head.norm.gamma", &m.head_norm_gamma});
    out.push_back({"head.norm.beta", &m.head_norm_beta});
    out.push_back({"head.w", &m.head_w});
    out.push_back({"head.b", &m.head_b});
    if (m.cfg.with_decoder) {
        out.push_back({"dec.w1", &m.dec_w1});
        out.push_back({"dec.b1", &m.dec_b1});
        out.push_back({"dec.w2", &m.dec_w2});
        out.push_back({"dec.b2", &m.dec_b2});
    }
    return out;
}

} // namespace

std::vector<std::pair<std::string, Tensor*>> Model::named_params() {
    return named_params_impl<Model, Tensor*>(*this);
}

std::vector<std::pair<std::string, const Tensor*>> Model::named_params() const {
    return named_params_impl<const Model, const Tensor*>(*this);
}

long Model::param_count() const {
    long total = 0;
    for (const auto& [name, t] : named_params()) total += t->size();
    return total;
}

long param_count(const ModelConfig& c) {
    const long D = c.dim, E = c.expand, Ns = c.state_dim, R = c.dt_rank, Kw = c.conv_kw;
    const long VC = c.patch_features(), T = c.token_count(), H = c.head_out;
    const long per_dir = E * Kw + E          // conv w, b
                         + E * (R + 2 * Ns)  // x-projection
                         + R * E + E         // dt projection w, bias
                         + E * Ns            // a_log
                         + E;                // d_skip
    const long dirs = c.bidirectional ? 2 : 1;
    const long per_block = 2 * D              // norm gamma, beta
                           + D * 2 * E        // in-projection
                           + dirs * per_dir   // scan directions
                           + E * D;           // out-projection
    long total = VC * D + D + T * D           // embed, cls, pos
                 + c.layers * per_block       //
                 + 2 * D + D * H + H;         // head norm, w, b
    if (c.with_decoder) total += D * c.dec_width + c.dec_width + c.dec_width * VC + VC;
    return total;
}

void Model::watch_all(Tape& tape) {
    for (auto& [name, t] : named_params()) tape.watch(*t);
}

namespace {

// Embeds [B,N',V,C] hemisphere features to [B,N',D] tokens. N' is taken from
// the input (the standard pipeline passes N' = N; shrunken sequences are legal
// as long as the positional table matches).
Tensor embed_hemi(Tape* tp, const Tensor& x, const Model& m, const char* which) {
    require(x.ndim() == 4, std::string(which) + " hemisphere must be [B,N,V,C], got " +
                               shape_str(x.shape()));
    const long V = m.cfg.verts_per_patch(), C = m.cfg.channels;
    require(x.dim(2) == V && x.dim(3) == C,
            std::string(which) + " hemisphere patches must be [V,C] = [" +
                std::to_string(V) + "," + std::to_string(C) + "], got [" +
                std::to_string(x.dim(2)) + "," + std::to_string(x.dim(3)) + "]");
    Tensor flat = reshape(tp, x, {x.dim(0), x.dim(1), V * C});
    return matmul(tp, flat, m.embed_w);
}

} // namespace

Tensor build_sequence(Tape* tp, const Tensor& left, const Tensor& right,
                      const Model& m) {
    require(left.defined() && right.defined() && left.same_shape(right),
            "hemisphere shape mismatch: left " +
                (left.defined() ? shape_str(left.shape()) : "undefined") + " vs right " +
                (right.defined() ? shape_str(right.shape()) : "undefined"));
    Tensor le = embed_hemi(tp, left, m, "left");
    Tensor re = embed_hemi(tp, right, m, "right");
    const long B = le.dim(0), N = le.dim(1), D = m.cfg.dim;
    require(m.pos.dim(0) == 2 * N + 1,
            "positional table has " + std::to_string(m.pos.dim(0)) + " rows, needs " +
                std::to_string(2 * N + 1));
    Tensor cls_tok = add(tp, Tensor::zeros({B, 1, D}), m.cls);
    Tensor s = concat_time(tp, {le, cls_tok, re});
    return add(tp, s, m.pos);
}

Tensor build_sequence_ar(Tape* tp, const Tensor& left, const Tensor& right,
                         const Model& m) {
    require(left.defined() && right.defined() && left.same_shape(right),
            "hemisphere shape mismatch: left " +
                (left.defined() ? shape_str(left.shape()) : "undefined") + " vs right " +
                (right.defined() ? shape_str(right.shape()) : "undefined"));
    Tensor le = embed_hemi(tp, left, m, "left");
    Tensor re = embed_hemi(tp, right, m, "right");
    const long N = le.dim(1), D = m.cfg.dim;
    require(m.pos.dim(0) == 2 * N + 1,
            "positional table has " + std::to_string(m.pos.dim(0)) + " rows, needs " +
                std::to_string(2 * N + 1));
    // Positional rows without the class slot.
    Tensor pos3 = reshape(tp, m.pos, {1, 2 * N + 1, D});
    Tensor pos_nc = concat_time(
        tp, {slice_time(tp, pos3, 0, N), slice_time(tp, pos3, N + 1, 2 * N + 1)});
    Tensor s = concat_time(tp, {le, re});
    return add(tp, s, reshape(tp, pos_nc, {2 * N, D}));
}

namespace {

Tensor run_blocks(Tape* tp, Tensor s, const Model& m) {
    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
        try {
            s = vim_block_forward(tp, s, m.blocks[i]);
        } catch (const NumericError& e) {
            throw NumericError("block " + std::to_string(i) + ": " + e.what());
        }
        if (!s.all_finite())
            throw NumericError("non-finite activations after block " +
                               std::to_string(i));
    }
    return s;
}

} // namespace

Tensor model_forward(Tape* tp, const Tensor& s0, const Model& m) {
    require(s0.ndim() == 3 && s0.dim(2) == m.cfg.dim,
            "sequence must be [B,T,D] with D=" + std::to_string(m.cfg.dim) + ", got " +
                shape_str(s0.shape()));
    require(s0.dim(1) % 2 == 1,
            "token count must be odd (2N+1 with the class token in the middle), got " +
                std::to_string(s0.dim(1)));
    Tensor s = run_blocks(tp, s0, m);
    Tensor cls_out = select_token(tp, s, (s0.dim(1) - 1) / 2);
    Tensor t = layernorm(tp, cls_out, m.head_norm_gamma, m.head_norm_beta);
    return add(tp, matmul(tp, t, m.head_w), m.head_b);
}

Tensor ar_forward(Tape* tp, const Tensor& s0, const Model& m) {
    require(m.cfg.with_decoder, "next-patch prediction requires a model with a decoder");
    require(!m.cfg.bidirectional,
            "next-patch prediction requires forward-only (unidirectional) blocks; "
            "bidirectional scanning would read future patches");
    require(s0.ndim() == 3 && s0.dim(2) == m.cfg.dim,
            "sequence must be [B,2N,D] with D=" + std::to_string(m.cfg.dim) + ", got " +
                shape_str(s0.shape()));
    const long VC = m.cfg.patch_features();
    if (m.dec_w2.dim(1) != VC)
        throw UsageError("decoder output dim " + std::to_string(m.dec_w2.dim(1)) +
                         " != V*C = " + std::to_string(VC));
    Tensor s = run_blocks(tp, s0, m);
    Tensor h = silu(tp, add(tp, matmul(tp, s, m.dec_w1), m.dec_b1));
    return add(tp, matmul(tp, h, m.dec_w2), m.dec_b2);
}

MacsBreakdown count_macs_breakdown(const ModelConfig& cfg) {
    const std::int64_t N = cfg.patches_per_hemi(), VC = cfg.patch_features();
    const std::int64_t T = cfg.token_count(), D = cfg.dim, E = cfg.expand;
    const std::int64_t Ns = cfg.state_dim, R = cfg.dt_rank, Kw = cfg.conv_kw;
    const std::int64_t L = cfg.layers;
    MacsBreakdown b;
    b.embed = 2 * N * VC * D;
    b.in_proj = L * T * D * 2 * E;
    b.conv = L * 2 * T * E * Kw;
    b.ssm = L * (2 * T * E * (R + 2 * Ns) + 2 * T * E * Ns * 2);
    b.out_proj = L * T * E * D;
    b.head = D * cfg.head_out;
    b.total = b.embed + b.in_proj + b.conv + b.ssm + b.out_proj + b.head;
    return b;
}

std::int64_t count_macs(const ModelConfig& cfg) {
    return count_macs_breakdown(cfg).total;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

using nlohmann::json;

void write_u64_le(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (unsigned char)((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64_le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw DataError("checkpoint truncated: missing header length");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}

json config_to_json(const ModelConfig& c) {
    return json{{"variant", c.variant},
                {"layers", c.layers},
                {"dim", c.dim},
                {"expand", c.expand},
                {"patch_order", c.patch_order},
                {"channels", c.channels},
                {"state_dim", c.state_dim},
                {"dt_rank", c.dt_rank},
                {"conv_kw", c.conv_kw},
                {"head_out", c.head_out},
                {"bidirectional", c.bidirectional},
                {"with_decoder", c.with_decoder},
                {"dec_width", c.dec_width}};
}

struct TensorEntry {
    std::vector<long> shape;
    std::string dtype;
    std::uint64_t offset = 0;
};

} // namespace

void save_checkpoint(const std::string& path, const Model& model) {
    json hdr;
    hdr["format_version"] = 1;
    hdr["config"] = config_to_json(model.cfg);
    json tensors = json::array();
    std::uint64_t offset = 0;
    const auto params = model.named_params();
    for (const auto& [name, t] : params) {
        tensors.push_back(json{{"name", name},
                               {"shape", t->shape()},
                               {"dtype", "f64"},
                               {"offset", offset}});
        offset += std::uint64_t(t->size()) * 8;
    }
    hdr["tensors"] = tensors;
    const std::string h = hdr.dump();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);
    write_u64_le(os, h.size());
    os.write(h.data(), std::streamsize(h.size()));
    for (const auto& [name, t] : params)
        os.write(reinterpret_cast<const char*>(t->data()),
                 std::streamsize(t->size()) * 8);
    os.flush();
    if (!os) throw DataError("checkpoint write failed: " + path);
}

void load_checkpoint(const std::string& path, Model& model, bool reset_head) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    const std::uint64_t hlen = read_u64_le(is);
    std::string h(hlen, '\0');
    is.read(h.data(), std::streamsize(hlen));
    if (!is) throw DataError("checkpoint truncated: header shorter than declared");
    json hdr;
    try {
        hdr = json::parse(h);
    } catch (const json::exception& e) {
        throw DataError(std::string("checkpoint header parse error: ") + e.what());
    }
    const int version = hdr.value("format_version", -1);
    if (version != 1)
        throw DataError("unsupported checkpoint format version " +
                        std::to_string(version) + " (expected 1)");
    std::map<std::string, TensorEntry> dir;
    for (const auto& te : hdr.at("tensors")) {
        TensorEntry e;
        e.shape = te.at("shape").get<std::vector<long>>();
        e.dtype = te.at("dtype").get<std::string>();
        e.offset = te.at("offset").get<std::uint64_t>();
        dir[te.at("name").get<std::string>()] = e;
    }
    const std::uint64_t payload_base = 8 + hlen;
    is.seekg(0, std::ios::end);
    const std::uint64_t file_size = std::uint64_t(is.tellg());

    // Pass 1: resolve every target tensor and validate; nothing is written
    // until the whole file checks out.
    struct Plan {
        Tensor* dst;
        std::uint64_t offset;
    };
    std::vector<Plan> plans;
    std::string missing, mismatched;
    auto note = [](std::string& acc, const std::string& s) {
        if (!acc.empty()) acc += ", ";
        acc += s;
    };
    for (auto& [name, t] : model.named_params()) {
        if (reset_head && name.rfind("head.", 0) == 0) continue;
        std::string src = name;
        auto it = dir.find(src);
        if (it == dir.end() && src.find(".bwd.") != std::string::npos) {
            // Unidirectional checkpoint into a bidirectional model: reuse the
            // forward-direction tensors.
            std::string alt = src;
            alt.replace(alt.find(".bwd."), 5, ".fwd.");
            it = dir.find(alt);
            src = alt;
        }
        if (it == dir.end()) {
            if (name.rfind("dec.", 0) == 0) continue; // decoder stays at init
            note(missing, name);
            continue;
        }
        const TensorEntry& e = it->second;
        if (e.dtype != "f64") {
            note(mismatched, name + " (dtype " + e.dtype + ")");
            continue;
        }
        if (e.shape != t->shape()) {
            note(mismatched,
                 name + " (file " + shape_str(e.shape) + ", model " +
                     shape_str(t->shape()) + ")");
            continue;
        }
        const std::uint64_t bytes = std::uint64_t(t->size()) * 8;
        if (payload_base + e.offset + bytes > file_size) {
            note(mismatched, name + " (payload truncated)");
            continue;
        }
        plans.push_back({t, e.offset});
    }
    if (!missing.empty() || !mismatched.empty()) {
        std::string msg = "checkpoint does not match model:";
        if (!missing.empty()) msg += " missing tensors [" + missing + "]";
        if (!mismatched.empty()) msg += " mismatched tensors [" + mismatched + "]";
        throw DataError(msg);
    }
    for (const Plan& p : plans) {
        is.seekg(std::streamoff(payload_base + p.offset));
        is.read(reinterpret_cast<char*>(p.dst->data()),
                std::streamsize(p.dst->size()) * 8);
        if (!is) throw DataError("checkpoint read failed: " + path);
    }
}

} // namespace sphere_ssm
