#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coalesce/geom.hpp"

namespace coalesce {

// Indexed triangle mesh. Counter-clockwise winding = outward-facing normal.
struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<Vec3> vertex_normals;  // unit, area-weighted face average
    std::string label;                 // part label, empty if none

    size_t vertex_count() const { return vertices.size(); }
    size_t triangle_count() const { return triangles.size(); }
    bool empty() const { return triangles.empty(); }

    Aabb bounds() const;
    Vec3 face_normal(int t) const;     // unit
    double face_area(int t) const;
    double total_area() const;
    void compute_vertex_normals();
};

// Directed circular vertex loop along boundary edges. The surface lies
// to the left of the direction of travel.
struct BoundaryLoop {
    std::vector<int> vertex_ids;
};

struct PointCloud {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;
    std::vector<int> source_face;

    size_t size() const { return points.size(); }
    Aabb bounds() const;
};

// Open or closed polyline; a single point is allowed.
struct Polyline {
    std::vector<Vec3> points;
    bool closed = false;
};

struct ErosionConfig {
    double tau = 0.05;  // erosion radius as a fraction of shape bbox diagonal
};

enum class SampleMode { Uniform, PoissonDisk };

struct CloudTransform {
    double scale = 1.0;
    Vec3 offset{0, 0, 0};  // applied as p' = (p + offset) * scale

    Vec3 apply(const Vec3& p) const { return (p + offset) * scale; }
    CloudTransform inverse() const { return {1.0 / scale, -offset * scale}; }
};

// ---- file I/O -------------------------------------------------------------

// ASCII OBJ. Polygon faces are fan-triangulated; `g` groups carry part labels.
TriMesh load_mesh(const std::string& path);
void save_mesh(const TriMesh& mesh, const std::string& path);

// Multi-part OBJ: one mesh per `g` group, in file order.
std::vector<TriMesh> load_mesh_groups(const std::string& path);
void save_mesh_groups(const std::vector<TriMesh>& parts, const std::string& path);

// ---- operations -----------------------------------------------------------

std::vector<BoundaryLoop> boundary_loops(const TriMesh& mesh);

double polyline_distance(const Vec3& p, const std::vector<Polyline>& boundary);

TriMesh erode_part(const TriMesh& part, const std::vector<Polyline>& seg_boundary,
                   const ErosionConfig& cfg, double shape_diameter);
PointCloud erode_cloud(const PointCloud& cloud, const std::vector<Polyline>& seg_boundary,
                       const ErosionConfig& cfg, double shape_diameter);

PointCloud sample_surface(const TriMesh& mesh, size_t n, SampleMode mode, uint64_t seed);

// Centers the centroid at the origin and scales the bounding-box diagonal to 1.
// Returned transform maps input points to output points.
std::pair<PointCloud, CloudTransform> normalize_cloud(const PointCloud& cloud);

// Resample a cloud to exactly n points (with replacement if n > cloud size).
PointCloud resample_cloud(const PointCloud& cloud, size_t n, uint64_t seed);

// Point-in-mesh by ray parity along the three axes with majority vote.
bool point_inside(const TriMesh& mesh, const Vec3& p);

TriMesh merge_meshes(const std::vector<TriMesh>& meshes);

// Welds vertices closer than tol and drops degenerate triangles.
TriMesh weld_vertices(const TriMesh& mesh, double tol);

}  // namespace coalesce
