#include "sphere_ssm/geometry.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "sphere_ssm/errors.hpp"

namespace sphere_ssm {

namespace {

using json = nlohmann::json;

std::uint64_t edge_key(long a, long b) {
    if (a > b) std::swap(a, b);
    return (std::uint64_t(a) << 32) | std::uint64_t(b);
}

std::array<double, 3> normalized(std::array<double, 3> v) {
    double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    return {v[0] / n, v[1] / n, v[2] / n};
}

// Midpoint of an edge, deduplicated through the cumulative map. The projected
// midpoint is symmetric in (a,b), so insertion order cannot change the value.
long midpoint(IcoMesh& mesh, long a, long b) {
    std::uint64_t key = edge_key(a, b);
    auto it = mesh.edge_midpoint_map.find(key);
    if (it != mesh.edge_midpoint_map.end()) return it->second;
    const auto& va = mesh.vertices[std::size_t(a)];
    const auto& vb = mesh.vertices[std::size_t(b)];
    long idx = long(mesh.vertices.size());
    mesh.vertices.push_back(normalized({va[0] + vb[0], va[1] + vb[1], va[2] + vb[2]}));
    mesh.edge_midpoint_map.emplace(key, idx);
    return idx;
}

// Canonical order-0 icosahedron: golden-ratio construction with a fixed vertex
// and face enumeration (faces verified CCW viewed from outside).
IcoMesh make_icosahedron() {
    IcoMesh mesh;
    mesh.order = 0;
    const double p = (1.0 + std::sqrt(5.0)) / 2.0;
    const std::array<std::array<double, 3>, 12> raw = {{{-1, p, 0},
                                                        {1, p, 0},
                                                        {-1, -p, 0},
                                                        {1, -p, 0},
                                                        {0, -1, p},
                                                        {0, 1, p},
                                                        {0, -1, -p},
                                                        {0, 1, -p},
                                                        {p, 0, -1},
                                                        {p, 0, 1},
                                                        {-p, 0, -1},
                                                        {-p, 0, 1}}};
    for (const auto& v : raw) mesh.vertices.push_back(normalized(v));
    mesh.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                  {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                  {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                  {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    mesh.face_levels.push_back(mesh.faces);
    return mesh;
}

} // namespace

IcoMesh make_icosphere(int order) {
    if (order < 0 || order > 8)
        throw UsageError("icosphere order must be in [0,8], got " + std::to_string(order));
    IcoMesh mesh = make_icosahedron();
    for (int level = 1; level <= order; ++level) {
        std::vector<std::array<long, 3>> next;
        next.reserve(mesh.faces.size() * 4);
        for (const auto& f : mesh.faces) {
            long m01 = midpoint(mesh, f[0], f[1]);
            long m12 = midpoint(mesh, f[1], f[2]);
            long m02 = midpoint(mesh, f[0], f[2]);
            // Orientation-preserving 4-way split.
            next.push_back({f[0], m01, m02});
            next.push_back({f[1], m12, m01});
            next.push_back({f[2], m02, m12});
            next.push_back({m01, m12, m02});
        }
        mesh.faces = std::move(next);
        mesh.face_levels.push_back(mesh.faces);
        mesh.order = level;
    }
    return mesh;
}

long count_edges(const IcoMesh& mesh) {
    std::set<std::uint64_t> edges;
    for (const auto& f : mesh.faces) {
        edges.insert(edge_key(f[0], f[1]));
        edges.insert(edge_key(f[1], f[2]));
        edges.insert(edge_key(f[0], f[2]));
    }
    return long(edges.size());
}

PatchSet extract_patches(const IcoMesh& base, int patch_order) {
    if (patch_order < 1 || patch_order > 5)
        throw UsageError("patch order must be in [1,5], got " + std::to_string(patch_order));
    if (base.order != 6)
        throw UsageError("patch base must be an order-6 icosphere, got order " +
                         std::to_string(base.order));
    if (!base.has_lineage() || base.face_levels.size() != 7)
        throw UsageError("patch base lacks subdivision lineage; it must come from "
                         "make_icosphere(6), not from a mesh file");

    const int depth = 6 - patch_order; // lattice refinements per patch
    const long n = 1L << depth;
    PatchSet ps;
    ps.patch_order = patch_order;
    ps.num_patches = long(base.face_levels[std::size_t(patch_order)].size());
    ps.verts_per_patch = (n + 1) * (n + 2) / 2;
    ps.patches.reserve(std::size_t(ps.num_patches));

    auto lookup_mid = [&base](long a, long b) {
        auto it = base.edge_midpoint_map.find(edge_key(a, b));
        if (it == base.edge_midpoint_map.end())
            throw UsageError("subdivision lineage mismatch: no midpoint recorded for edge (" +
                             std::to_string(a) + "," + std::to_string(b) + ")");
        return it->second;
    };
    auto flat = [](long r, long k) { return std::size_t(r * (r + 1) / 2 + k); };

    for (const auto& face : base.face_levels[std::size_t(patch_order)]) {
        // Refine the 3-point lattice of the Ico-p face down to Ico-6, one
        // subdivision at a time; odd lattice points are edge midpoints of the
        // previous level, found in the cumulative midpoint map.
        std::vector<long> lat = {face[0], face[1], face[2]};
        long cur = 1; // current lattice row count - 1
        for (int d = 0; d < depth; ++d) {
            long nxt = cur * 2;
            std::vector<long> fine(flat(nxt, nxt) + 1);
            for (long r = 0; r <= cur; ++r)
                for (long k = 0; k <= r; ++k) {
                    long self = lat[flat(r, k)];
                    fine[flat(2 * r, 2 * k)] = self;
                    if (k < r) fine[flat(2 * r, 2 * k + 1)] = lookup_mid(self, lat[flat(r, k + 1)]);
                    if (r < cur) {
                        fine[flat(2 * r + 1, 2 * k)] = lookup_mid(self, lat[flat(r + 1, k)]);
                        fine[flat(2 * r + 1, 2 * k + 1)] =
                            lookup_mid(self, lat[flat(r + 1, k + 1)]);
                    }
                }
            lat = std::move(fine);
            cur = nxt;
        }
        ps.patches.push_back(std::move(lat));
    }
    return ps;
}

std::unordered_map<long, long> patch_multiplicity_histogram(const PatchSet& patches) {
    std::unordered_map<long, long> per_vertex;
    for (const auto& p : patches.patches)
        for (long v : p) ++per_vertex[v];
    std::unordered_map<long, long> hist;
    for (const auto& [v, m] : per_vertex) {
        (void)v;
        ++hist[m];
    }
    return hist;
}

SphereSamples barycentric_resample(const SphereSamples& source, const IcoMesh& target) {
    if (source.faces.empty())
        throw UsageError("resample source has no faces; a source mesh is required");
    const long C = source.channels;
    if (C < 1 || source.values.size() != source.positions.size() * std::size_t(C))
        throw UsageError("resample source values do not match positions x channels");

    // Per-face bounding-cone prefilter: a face can contain direction d only if
    // d is within the face's angular radius of its (normalized) centroid. The
    // candidate list is scanned in face order, so the first full test to pass
    // is also the lowest face index (the documented tie rule).
    const std::size_t F = source.faces.size();
    std::vector<std::array<double, 3>> centroid(F);
    std::vector<double> min_cos(F);
    for (std::size_t f = 0; f < F; ++f) {
        const auto& tri = source.faces[f];
        std::array<double, 3> c = {0, 0, 0};
        for (int i = 0; i < 3; ++i) {
            const auto& v = source.positions[std::size_t(tri[std::size_t(i)])];
            c = {c[0] + v[0], c[1] + v[1], c[2] + v[2]};
        }
        c = normalized(c);
        centroid[f] = c;
        double mc = 1.0;
        for (int i = 0; i < 3; ++i) {
            const auto& v = source.positions[std::size_t(tri[std::size_t(i)])];
            mc = std::min(mc, c[0] * v[0] + c[1] * v[1] + c[2] * v[2]);
        }
        min_cos[f] = mc - 1e-9;
    }

    SphereSamples out;
    out.positions = target.vertices;
    out.channels = C;
    out.values.assign(target.vertices.size() * std::size_t(C), 0.0);

    for (std::size_t tv = 0; tv < target.vertices.size(); ++tv) {
        const auto& d = target.vertices[tv];
        bool found = false;
        for (std::size_t f = 0; f < F && !found; ++f) {
            if (centroid[f][0] * d[0] + centroid[f][1] * d[1] + centroid[f][2] * d[2] <
                min_cos[f])
                continue;
            const auto& tri = source.faces[f];
            const auto& a = source.positions[std::size_t(tri[0])];
            const auto& b = source.positions[std::size_t(tri[1])];
            const auto& c = source.positions[std::size_t(tri[2])];
            // Solve [a b c] * l = d (columns are the triangle vertices): the ray
            // t*d meets the plane at barycentric l / sum(l), valid when all
            // components are nonnegative (within tolerance) and sum(l) > 0.
            double m[9] = {a[0], b[0], c[0], a[1], b[1], c[1], a[2], b[2], c[2]};
            double det = m[0] * (m[4] * m[8] - m[5] * m[7]) -
                         m[1] * (m[3] * m[8] - m[5] * m[6]) +
                         m[2] * (m[3] * m[7] - m[4] * m[6]);
            if (std::abs(det) < 1e-300) continue;
            double l0 = (d[0] * (m[4] * m[8] - m[5] * m[7]) -
                         m[1] * (d[1] * m[8] - m[5] * d[2]) +
                         m[2] * (d[1] * m[7] - m[4] * d[2])) /
                        det;
            double l1 = (m[0] * (d[1] * m[8] - m[5] * d[2]) -
                         d[0] * (m[3] * m[8] - m[5] * m[6]) +
                         m[2] * (m[3] * d[2] - d[1] * m[6])) /
                        det;
            double l2 = (m[0] * (m[4] * d[2] - d[1] * m[7]) -
                         m[1] * (m[3] * d[2] - d[1] * m[6]) +
                         d[0] * (m[3] * m[7] - m[4] * m[6])) /
                        det;
            double s = l0 + l1 + l2;
            if (s <= 0) continue;
            double w0 = l0 / s, w1 = l1 / s, w2 = l2 / s;
            if (w0 < -1e-10 || w1 < -1e-10 || w2 < -1e-10) continue;
            const double* va = &source.values[std::size_t(tri[0]) * std::size_t(C)];
            const double* vb = &source.values[std::size_t(tri[1]) * std::size_t(C)];
            const double* vc = &source.values[std::size_t(tri[2]) * std::size_t(C)];
            double* ov = &out.values[tv * std::size_t(C)];
            for (long ch = 0; ch < C; ++ch)
                ov[std::size_t(ch)] = w0 * va[ch] + w1 * vb[ch] + w2 * vc[ch];
            found = true;
        }
        if (!found)
            throw DataError("resample: no source face contains target vertex " +
                            std::to_string(tv) + " (degenerate source mesh?)");
    }
    return out;
}

Tensor patch_tensorize(const Tensor& features, const PatchSet& patches) {
    if (features.ndim() != 2)
        throw UsageError("patch_tensorize expects features [num_vertices, C]");
    const long C = features.dim(1);
    const long N = patches.num_patches, V = patches.verts_per_patch;
    long needed = 0;
    for (const auto& p : patches.patches)
        for (long v : p) needed = std::max(needed, v + 1);
    if (features.dim(0) < needed)
        throw UsageError("feature count " + std::to_string(features.dim(0)) +
                         " < base mesh vertex count " + std::to_string(needed));
    Tensor out = Tensor::empty({N, V, C});
    const double* fp = features.data();
    double* op = out.data();
    for (long n = 0; n < N; ++n) {
        const auto& p = patches.patches[std::size_t(n)];
        for (long v = 0; v < V; ++v) {
            const double* src = fp + p[std::size_t(v)] * C;
            double* dst = op + (n * V + v) * C;
            for (long ch = 0; ch < C; ++ch) dst[ch] = src[ch];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON I/O

void write_mesh_json(const IcoMesh& mesh, const std::string& path) {
    json j;
    j["order"] = mesh.order;
    j["vertices"] = json::array();
    for (const auto& v : mesh.vertices) j["vertices"].push_back({v[0], v[1], v[2]});
    j["faces"] = json::array();
    for (const auto& f : mesh.faces) j["faces"].push_back({f[0], f[1], f[2]});
    std::ofstream out(path);
    if (!out) throw DataError("cannot write mesh file: " + path);
    out << j.dump() << "\n";
}

IcoMesh read_mesh_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read mesh file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("malformed mesh JSON in " + path + ": " + e.what());
    }
    IcoMesh mesh;
    try {
        mesh.order = j.at("order").get<int>();
        for (const auto& v : j.at("vertices"))
            mesh.vertices.push_back({v.at(0).get<double>(), v.at(1).get<double>(),
                                     v.at(2).get<double>()});
        for (const auto& f : j.at("faces"))
            mesh.faces.push_back(
                {f.at(0).get<long>(), f.at(1).get<long>(), f.at(2).get<long>()});
    } catch (const json::exception& e) {
        throw DataError("mesh JSON missing fields in " + path + ": " + e.what());
    }
    return mesh;
}

void write_patchset_json(const PatchSet& patches, const std::string& path) {
    json j;
    j["patch_order"] = patches.patch_order;
    j["N"] = patches.num_patches;
    j["V"] = patches.verts_per_patch;
    j["patches"] = patches.patches;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write patch file: " + path);
    out << j.dump() << "\n";
}

PatchSet read_patchset_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read patch file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("malformed patch JSON in " + path + ": " + e.what());
    }
    PatchSet ps;
    try {
        ps.patch_order = j.at("patch_order").get<int>();
        ps.num_patches = j.at("N").get<long>();
        ps.verts_per_patch = j.at("V").get<long>();
        ps.patches = j.at("patches").get<std::vector<std::vector<long>>>();
    } catch (const json::exception& e) {
        throw DataError("patch JSON missing fields in " + path + ": " + e.what());
    }
    if (long(ps.patches.size()) != ps.num_patches)
        throw DataError("patch JSON: N=" + std::to_string(ps.num_patches) +
                        " but patches has " + std::to_string(ps.patches.size()) + " entries");
    for (const auto& p : ps.patches)
        if (long(p.size()) != ps.verts_per_patch)
            throw DataError("patch JSON: patch with " + std::to_string(p.size()) +
                            " vertices, expected " + std::to_string(ps.verts_per_patch));
    return ps;
}

} // namespace sphere_ssm
