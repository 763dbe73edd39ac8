#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "sphere_ssm/tensor.hpp"

namespace sphere_ssm {

// Icosphere of a given subdivision order: unit-norm vertices, CCW-outward
// faces, closed 2-manifold. Subdivision bookkeeping (midpoint map + per-level
// face lists) is retained so patch extraction can reconstruct the lattice of
// any coarser order inside this mesh — a mesh loaded from JSON lacks it.
struct IcoMesh {
    int order = 0;
    std::vector<std::array<double, 3>> vertices;
    std::vector<std::array<long, 3>> faces;
    // key = (min(vi,vj) << 32) | max(vi,vj) -> midpoint vertex index; cumulative
    // over all subdivision levels (index pairs never repeat across levels).
    std::unordered_map<std::uint64_t, long> edge_midpoint_map;
    // face_levels[k] = faces of the order-k mesh sharing this vertex numbering;
    // face_levels.back() == faces.
    std::vector<std::vector<std::array<long, 3>>> face_levels;

    long vertex_count() const { return long(vertices.size()); }
    long face_count() const { return long(faces.size()); }
    bool has_lineage() const { return !face_levels.empty(); }
};

// order in [0,8]. Deterministic: bit-identical vertex arrays across runs.
IcoMesh make_icosphere(int order);

// Counts distinct undirected edges (for invariant checks).
long count_edges(const IcoMesh& mesh);

// Triangular surface patches: every Ico-6 vertex on or inside one Ico-p face,
// in canonical barycentric row-major order. With corners (A,B,C) in the parent
// face's stored vertex order and n = 2^(6-p), entry (row r, col k), r in 0..n,
// k in 0..r, is the lattice point ((n-r)A + (r-k)B + kC)/n projected on the
// sphere; flat index r(r+1)/2 + k. Row 0 is corner A; row n runs from B to C.
struct PatchSet {
    int patch_order = 0;
    int base_order = 6;
    long num_patches = 0;     // N = 20*4^p
    long verts_per_patch = 0; // V = (2^(6-p)+1)(2^(6-p)+2)/2
    std::vector<std::vector<long>> patches;
};

// base must come from make_icosphere(6) (subdivision lineage present).
PatchSet extract_patches(const IcoMesh& base, int patch_order);

// histogram[m] = number of distinct base vertices appearing in exactly m patches.
std::unordered_map<long, long> patch_multiplicity_histogram(const PatchSet& patches);

// Spherical samples: unit positions with C channels each; optional faces when
// the samples form a mesh (required as a resampling source).
struct SphereSamples {
    std::vector<std::array<double, 3>> positions;
    long channels = 0;
    std::vector<double> values; // [positions.size() x channels], row-major
    std::vector<std::array<long, 3>> faces;
};

// For each target vertex, locates the source spherical triangle containing its
// direction (ray-plane intersection, barycentric coords >= -1e-10, ties to the
// lowest face index) and interpolates channels with planar barycentric weights.
SphereSamples barycentric_resample(const SphereSamples& source, const IcoMesh& target);

// Gathers per-vertex features [40962, C] into per-patch tensors [N, V, C].
// Shared vertices are duplicated into every patch containing them.
Tensor patch_tensorize(const Tensor& features, const PatchSet& patches);

// JSON mesh file: { "order": k, "vertices": [[x,y,z],...], "faces": [[i,j,k],...] }.
void write_mesh_json(const IcoMesh& mesh, const std::string& path);
IcoMesh read_mesh_json(const std::string& path); // no lineage: not a patch base

// JSON patch file: { "patch_order": p, "N":..., "V":..., "patches": [[idx,...],...] }.
void write_patchset_json(const PatchSet& patches, const std::string& path);
PatchSet read_patchset_json(const std::string& path);

} // namespace sphere_ssm
