#pragma once

#include <functional>

#include "coalesce/mesh.hpp"

namespace coalesce {

// Scalar occupancy samples on a regular lattice of res[i] nodes per axis,
// node i at origin + i * cell. Surface extracted at the iso level.
struct ScalarField {
    std::array<uint32_t, 3> res{0, 0, 0};
    Vec3 origin{0, 0, 0};
    double cell = 0;
    std::vector<float> values;  // x-fastest
    double iso = 0.5;

    size_t index(int x, int y, int z) const {
        return size_t(x) + size_t(res[0]) * (size_t(y) + size_t(res[1]) * size_t(z));
    }
    float at(int x, int y, int z) const { return values[index(x, y, z)]; }
    Vec3 position(int x, int y, int z) const {
        return origin + Vec3{x * cell, y * cell, z * cell};
    }
};

ScalarField field_from_function(const Aabb& box, uint32_t res,
                                const std::function<double(const Vec3&)>& f);

// Standard 256-case marching cubes with shared vertices along lattice edges;
// outward faces point toward decreasing field values.
TriMesh marching_cubes(const ScalarField& field, double iso = 0.5);

// Distance metric combining proximity and normal consistency.
inline double metric_d(const Vec3& p, const Vec3& np, const Vec3& q, const Vec3& nq) {
    return dist(p, q) * (2.0 - dot(np, nq));
}

struct LoopCorrespondence {
    std::vector<Vec3> part_positions;  // circular, surface on the left
    std::vector<Vec3> part_normals;
    std::vector<int> joint_loop;       // closed vertex walk on the joint mesh
    bool matched = false;
};

// Walks the joint mesh alongside the part loop under metric_d; several initial
// points are tried (seeds 0..retries-1) and the largest simple sub-loop of a
// closed walk is kept.
LoopCorrespondence loop_correspondence(const std::vector<Vec3>& loop_positions,
                                       const std::vector<Vec3>& loop_normals,
                                       const TriMesh& joint, int retries = 8);

// Cuts the joint along matched loops and removes components lying inside the
// parts (classified from the directed part loops). Vertices are preserved;
// only faces are dropped. Ambiguous components are kept with a warning.
TriMesh remove_redundant(const TriMesh& joint, const std::vector<LoopCorrespondence>& corrs,
                         std::vector<std::string>* warnings = nullptr);

// Uniform-weight Laplace solve for a displacement field with Dirichlet
// constraints (vertex -> target position); conjugate gradients to 1e-8
// relative residual.
TriMesh harmonic_displace(const TriMesh& mesh,
                          const std::vector<std::pair<int, Vec3>>& constraints);

// Deforms the joint so each matched loop lands on its part loop; parts stay
// fixed.
TriMesh poisson_blend(const TriMesh& joint, const std::vector<LoopCorrespondence>& corrs);

// Zipper ring between two closed loops of consistent orientation; degenerate
// triangles are dropped, so coincident loops produce an empty ring.
TriMesh bridge_loops(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

struct StitchFlags {
    bool joint_empty = false;
    bool unblended = false;
    size_t loops_total = 0;
    size_t loops_matched = 0;
    std::vector<std::string> warnings;
};

// Full pipeline: marching cubes, correspondence per part boundary loop,
// redundancy removal, Poisson blending, bridging, and a final weld.
TriMesh stitch(const std::vector<TriMesh>& parts, const ScalarField& field,
               StitchFlags* flags = nullptr);

}  // namespace coalesce
