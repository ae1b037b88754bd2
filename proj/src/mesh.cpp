#include "coalesce/mesh.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace coalesce {

Aabb TriMesh::bounds() const {
    Aabb b;
    for (const auto& v : vertices) b.expand(v);
    return b;
}

Vec3 TriMesh::face_normal(int t) const {
    const auto& tri = triangles[t];
    return normalized(cross(vertices[tri[1]] - vertices[tri[0]],
                            vertices[tri[2]] - vertices[tri[0]]));
}

double TriMesh::face_area(int t) const {
    const auto& tri = triangles[t];
    return 0.5 * norm(cross(vertices[tri[1]] - vertices[tri[0]],
                            vertices[tri[2]] - vertices[tri[0]]));
}

double TriMesh::total_area() const {
    double a = 0;
    for (size_t t = 0; t < triangles.size(); ++t) a += face_area(int(t));
    return a;
}

void TriMesh::compute_vertex_normals() {
    vertex_normals.assign(vertices.size(), Vec3{0, 0, 0});
    for (const auto& tri : triangles) {
        Vec3 n = cross(vertices[tri[1]] - vertices[tri[0]], vertices[tri[2]] - vertices[tri[0]]);
        for (int k = 0; k < 3; ++k) vertex_normals[tri[k]] += n;  // |n| = 2*area
    }
    for (auto& n : vertex_normals) n = normalized(n);
}

Aabb PointCloud::bounds() const {
    Aabb b;
    for (const auto& p : points) b.expand(p);
    return b;
}

// ---- OBJ I/O ---------------------------------------------------------------

namespace {

struct ObjData {
    std::vector<Vec3> vertices;
    // (group index, triangle) pairs in file order
    std::vector<std::string> groups;               // group names, index 0 = default
    std::vector<std::pair<int, std::array<int, 3>>> triangles;
};

ObjData parse_obj(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open mesh file: " + path);

    ObjData obj;
    obj.groups.push_back("");
    int cur_group = 0;
    std::string line;
    int line_no = 0;

    auto fail = [&](const std::string& msg) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + msg);
    };

    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag[0] == '#') continue;
        if (tag == "v") {
            Vec3 p;
            if (!(ls >> p.x >> p.y >> p.z)) fail("malformed vertex line");
            obj.vertices.push_back(p);
        } else if (tag == "g" || tag == "o") {
            std::string name;
            ls >> name;
            obj.groups.push_back(name);
            cur_group = int(obj.groups.size()) - 1;
        } else if (tag == "f") {
            std::vector<int> idx;
            std::string tok;
            while (ls >> tok) {
                // accept v, v/vt, v//vn, v/vt/vn
                size_t slash = tok.find('/');
                std::string head = slash == std::string::npos ? tok : tok.substr(0, slash);
                int v = 0;
                auto [p, ec] = std::from_chars(head.data(), head.data() + head.size(), v);
                if (ec != std::errc() || p != head.data() + head.size())
                    fail("malformed face index '" + tok + "'");
                if (v < 0) v = int(obj.vertices.size()) + v + 1;  // relative indexing
                if (v < 1 || v > int(obj.vertices.size()))
                    fail("face index out of range: " + std::to_string(v) + " of " +
                         std::to_string(obj.vertices.size()));
                idx.push_back(v - 1);
            }
            if (idx.size() < 3) fail("face with fewer than 3 vertices");
            for (size_t k = 1; k + 1 < idx.size(); ++k)
                obj.triangles.push_back({cur_group, {idx[0], idx[int(k)], idx[k + 1]}});
        }
        // other tags (vn, vt, usemtl, s, mtllib) ignored
    }
    if (obj.vertices.empty() || obj.triangles.empty())
        throw std::runtime_error(path + ": empty mesh (no vertices or faces)");
    return obj;
}

// Drops unreferenced vertices and zero-area triangles, recomputes normals.
// Referenced vertices keep their relative order so a save/load round trip is
// the identity.
TriMesh finalize_mesh(const std::vector<Vec3>& vertices,
                      const std::vector<std::array<int, 3>>& tris, std::string label) {
    std::vector<std::array<int, 3>> kept;
    std::vector<bool> referenced(vertices.size(), false);
    for (const auto& tri : tris) {
        Vec3 n = cross(vertices[tri[1]] - vertices[tri[0]], vertices[tri[2]] - vertices[tri[0]]);
        if (0.5 * norm(n) <= 1e-12) continue;  // degenerate
        kept.push_back(tri);
        for (int k = 0; k < 3; ++k) referenced[tri[k]] = true;
    }

    TriMesh m;
    m.label = std::move(label);
    std::vector<int> remap(vertices.size(), -1);
    for (size_t v = 0; v < vertices.size(); ++v) {
        if (!referenced[v]) continue;
        remap[v] = int(m.vertices.size());
        m.vertices.push_back(vertices[v]);
    }
    m.triangles.reserve(kept.size());
    for (const auto& tri : kept)
        m.triangles.push_back({remap[tri[0]], remap[tri[1]], remap[tri[2]]});
    m.compute_vertex_normals();
    return m;
}

void write_obj(std::FILE* f, const TriMesh& mesh, int index_base) {
    if (!mesh.label.empty()) std::fprintf(f, "g %s\n", mesh.label.c_str());
    for (const auto& v : mesh.vertices)
        std::fprintf(f, "v %.9g %.9g %.9g\n", v.x, v.y, v.z);
    for (const auto& t : mesh.triangles)
        std::fprintf(f, "f %d %d %d\n", t[0] + index_base, t[1] + index_base, t[2] + index_base);
}

}  // namespace

TriMesh load_mesh(const std::string& path) {
    ObjData obj = parse_obj(path);
    std::vector<std::array<int, 3>> tris;
    tris.reserve(obj.triangles.size());
    std::string label;
    for (auto& [g, t] : obj.triangles) {
        tris.push_back(t);
        if (label.empty()) label = obj.groups[g];
    }
    return finalize_mesh(obj.vertices, tris, label);
}

std::vector<TriMesh> load_mesh_groups(const std::string& path) {
    ObjData obj = parse_obj(path);
    std::map<int, std::vector<std::array<int, 3>>> by_group;
    for (auto& [g, t] : obj.triangles) by_group[g].push_back(t);
    std::vector<TriMesh> parts;
    for (auto& [g, tris] : by_group)
        parts.push_back(finalize_mesh(obj.vertices, tris, obj.groups[g]));
    return parts;
}

void save_mesh(const TriMesh& mesh, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot write mesh file: " + path);
    write_obj(f, mesh, 1);
    std::fclose(f);
}

void save_mesh_groups(const std::vector<TriMesh>& parts, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot write mesh file: " + path);
    int base = 1;
    for (const auto& m : parts) {
        write_obj(f, m, base);
        base += int(m.vertices.size());
    }
    std::fclose(f);
}

// ---- boundary loops ---------------------------------------------------------

std::vector<BoundaryLoop> boundary_loops(const TriMesh& mesh) {
    // Count incidences per undirected edge; a boundary edge has exactly one.
    std::unordered_map<uint64_t, int> edge_count;
    auto key = [](int a, int b) {
        if (a > b) std::swap(a, b);
        return (uint64_t(uint32_t(a)) << 32) | uint32_t(b);
    };
    for (const auto& t : mesh.triangles)
        for (int k = 0; k < 3; ++k) ++edge_count[key(t[k], t[(k + 1) % 3])];

    for (auto& [k, c] : edge_count) {
        if (c > 2) {
            int a = int(k >> 32), b = int(k & 0xffffffffu);
            throw std::runtime_error("non-manifold boundary: edge (" + std::to_string(a) + ", " +
                                     std::to_string(b) + ") has " + std::to_string(c) +
                                     " incident faces");
        }
    }

    // A boundary half-edge (a, b) appears in its face directed a->b. Loops
    // follow that direction, keeping the interior surface on the left.
    std::unordered_map<int, int> next_on_boundary;
    for (const auto& t : mesh.triangles) {
        for (int k = 0; k < 3; ++k) {
            int a = t[k], b = t[(k + 1) % 3];
            if (edge_count[key(a, b)] == 1) next_on_boundary[a] = b;
        }
    }

    std::vector<BoundaryLoop> loops;
    std::unordered_map<int, bool> used;
    // Deterministic loop order: walk vertices in index order.
    std::vector<int> starts;
    for (auto& [b, a] : next_on_boundary) starts.push_back(b);
    std::sort(starts.begin(), starts.end());

    for (int start : starts) {
        if (used[start]) continue;
        BoundaryLoop loop;
        int v = start;
        while (true) {
            loop.vertex_ids.push_back(v);
            used[v] = true;
            auto it = next_on_boundary.find(v);
            if (it == next_on_boundary.end())
                throw std::runtime_error("open boundary chain at vertex " + std::to_string(v));
            v = it->second;
            if (v == start) break;
        }
        loops.push_back(std::move(loop));
    }
    return loops;
}

// ---- erosion ----------------------------------------------------------------

double polyline_distance(const Vec3& p, const std::vector<Polyline>& boundary) {
    double best = std::numeric_limits<double>::max();
    for (const auto& pl : boundary) {
        const auto& pts = pl.points;
        if (pts.empty()) continue;
        if (pts.size() == 1) {
            best = std::min(best, dist(p, pts[0]));
            continue;
        }
        for (size_t i = 0; i + 1 < pts.size(); ++i)
            best = std::min(best, point_segment_dist(p, pts[i], pts[i + 1]));
        if (pl.closed) best = std::min(best, point_segment_dist(p, pts.back(), pts.front()));
    }
    return best;
}

TriMesh erode_part(const TriMesh& part, const std::vector<Polyline>& seg_boundary,
                   const ErosionConfig& cfg, double shape_diameter) {
    if (cfg.tau < 0) throw std::runtime_error("erosion radius must be non-negative");
    if (cfg.tau == 0) return part;
    bool have_boundary = std::any_of(seg_boundary.begin(), seg_boundary.end(),
                                     [](const Polyline& p) { return !p.points.empty(); });
    if (!have_boundary)
        throw std::runtime_error("erode_part: empty segmentation boundary with tau > 0");

    const double radius = cfg.tau * shape_diameter;
    std::vector<bool> vertex_near(part.vertices.size());
    for (size_t i = 0; i < part.vertices.size(); ++i)
        vertex_near[i] = polyline_distance(part.vertices[i], seg_boundary) < radius;

    std::vector<std::array<int, 3>> kept;
    for (const auto& t : part.triangles)
        if (!vertex_near[t[0]] && !vertex_near[t[1]] && !vertex_near[t[2]]) kept.push_back(t);
    if (kept.empty()) throw std::runtime_error("part fully eroded: '" + part.label + "'");

    return finalize_mesh(part.vertices, kept, part.label);
}

PointCloud erode_cloud(const PointCloud& cloud, const std::vector<Polyline>& seg_boundary,
                       const ErosionConfig& cfg, double shape_diameter) {
    if (cfg.tau == 0) return cloud;
    bool have_boundary = std::any_of(seg_boundary.begin(), seg_boundary.end(),
                                     [](const Polyline& p) { return !p.points.empty(); });
    if (!have_boundary) return cloud;  // vacuous condition

    const double radius = cfg.tau * shape_diameter;
    PointCloud out;
    for (size_t i = 0; i < cloud.points.size(); ++i) {
        if (polyline_distance(cloud.points[i], seg_boundary) >= radius) {
            out.points.push_back(cloud.points[i]);
            out.normals.push_back(cloud.normals[i]);
            out.source_face.push_back(cloud.source_face[i]);
        }
    }
    return out;
}

// ---- surface sampling ---------------------------------------------------------

namespace {

Vec3 sample_in_triangle(const TriMesh& mesh, int t, Rng& rng) {
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1) { u = 1 - u; v = 1 - v; }
    const auto& tri = mesh.triangles[t];
    return mesh.vertices[tri[0]] * (1 - u - v) + mesh.vertices[tri[1]] * u +
           mesh.vertices[tri[2]] * v;
}

std::vector<double> area_cdf(const TriMesh& mesh) {
    std::vector<double> cdf(mesh.triangles.size());
    double acc = 0;
    for (size_t t = 0; t < mesh.triangles.size(); ++t) {
        acc += mesh.face_area(int(t));
        cdf[t] = acc;
    }
    return cdf;
}

int pick_triangle(const std::vector<double>& cdf, Rng& rng) {
    double u = rng.uniform() * cdf.back();
    return int(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
}

// Uniform hash grid over candidate points for radius queries.
struct HashGrid {
    double cell;
    std::unordered_map<uint64_t, std::vector<int>> cells;
    const std::vector<Vec3>* pts;

    HashGrid(const std::vector<Vec3>& points, double cell_size) : cell(cell_size), pts(&points) {}

    uint64_t key(const Vec3& p) const {
        auto q = [&](double x) { return uint64_t(int64_t(std::floor(x / cell)) & 0x1fffff); };
        return (q(p.x) << 42) | (q(p.y) << 21) | q(p.z);
    }
    void insert(int i) { cells[key((*pts)[i])].push_back(i); }

    bool any_within(const Vec3& p, double r) const {
        double r2 = r * r;
        int64_t cx = int64_t(std::floor(p.x / cell));
        int64_t cy = int64_t(std::floor(p.y / cell));
        int64_t cz = int64_t(std::floor(p.z / cell));
        int reach = int(std::ceil(r / cell));
        for (int64_t dx = -reach; dx <= reach; ++dx)
            for (int64_t dy = -reach; dy <= reach; ++dy)
                for (int64_t dz = -reach; dz <= reach; ++dz) {
                    uint64_t k = ((uint64_t((cx + dx) & 0x1fffff)) << 42) |
                                 ((uint64_t((cy + dy) & 0x1fffff)) << 21) |
                                 uint64_t((cz + dz) & 0x1fffff);
                    auto it = cells.find(k);
                    if (it == cells.end()) continue;
                    for (int i : it->second)
                        if (dist2(p, (*pts)[i]) < r2) return true;
                }
        return false;
    }
};

}  // namespace

PointCloud sample_surface(const TriMesh& mesh, size_t n, SampleMode mode, uint64_t seed) {
    PointCloud out;
    if (n == 0) return out;
    if (mesh.total_area() <= 0) throw std::runtime_error("sample_surface: mesh has zero area");

    Rng rng(seed);
    auto cdf = area_cdf(mesh);

    if (mode == SampleMode::Uniform) {
        for (size_t i = 0; i < n; ++i) {
            int t = pick_triangle(cdf, rng);
            out.points.push_back(sample_in_triangle(mesh, t, rng));
            out.normals.push_back(mesh.face_normal(t));
            out.source_face.push_back(t);
        }
        return out;
    }

    // Poisson disk: dart throwing against a hash grid, radius from the
    // density heuristic r = sqrt(A / (n * 2*sqrt(3))).
    const double r0 = std::sqrt(mesh.total_area() / (double(n) * 2.0 * std::sqrt(3.0)));
    double r = r0;
    HashGrid grid(out.points, std::max(r0, 1e-12));
    size_t consecutive_rejects = 0;
    const size_t reject_limit = 40 * n + 1000;
    while (out.points.size() < n) {
        int t = pick_triangle(cdf, rng);
        Vec3 p = sample_in_triangle(mesh, t, rng);
        if (grid.any_within(p, r)) {
            if (++consecutive_rejects >= reject_limit) {
                r = std::max(r * 0.95, 0.9 * r0);
                consecutive_rejects = 0;
            }
            continue;
        }
        consecutive_rejects = 0;
        out.points.push_back(p);
        out.normals.push_back(mesh.face_normal(t));
        out.source_face.push_back(t);
        grid.insert(int(out.points.size()) - 1);
    }
    return out;
}

std::pair<PointCloud, CloudTransform> normalize_cloud(const PointCloud& cloud) {
    if (cloud.points.empty()) throw std::runtime_error("normalize_cloud: empty cloud");
    Vec3 centroid{0, 0, 0};
    for (const auto& p : cloud.points) centroid += p;
    centroid = centroid / double(cloud.points.size());
    double diag = cloud.bounds().diagonal();
    if (diag <= 0) throw std::runtime_error("normalize_cloud: cloud has zero diameter");

    CloudTransform xf{1.0 / diag, -centroid};
    PointCloud out = cloud;
    for (auto& p : out.points) p = xf.apply(p);
    return {out, xf};
}

PointCloud resample_cloud(const PointCloud& cloud, size_t n, uint64_t seed) {
    if (cloud.points.empty()) throw std::runtime_error("resample_cloud: empty cloud");
    Rng rng(seed);
    PointCloud out;
    if (cloud.points.size() >= n) {
        // sample without replacement: partial Fisher-Yates over indices
        std::vector<int> idx(cloud.points.size());
        std::iota(idx.begin(), idx.end(), 0);
        for (size_t i = 0; i < n; ++i)
            std::swap(idx[i], idx[i + rng.uniform_index(idx.size() - i)]);
        idx.resize(n);
        for (int i : idx) {
            out.points.push_back(cloud.points[i]);
            out.normals.push_back(cloud.normals[i]);
            out.source_face.push_back(cloud.source_face[i]);
        }
    } else {
        // fewer available than requested: sample with replacement
        for (size_t i = 0; i < n; ++i) {
            int j = int(rng.uniform_index(cloud.points.size()));
            out.points.push_back(cloud.points[j]);
            out.normals.push_back(cloud.normals[j]);
            out.source_face.push_back(cloud.source_face[j]);
        }
    }
    return out;
}

// ---- point-in-mesh -----------------------------------------------------------

namespace {

// Parity of axis-aligned ray crossings from p along +axis. Half-open
// barycentric bounds make shared edges count once.
bool ray_parity(const TriMesh& mesh, const Vec3& p, int axis) {
    Vec3 dir{0, 0, 0};
    dir[axis] = 1.0;
    int crossings = 0;
    for (const auto& t : mesh.triangles) {
        const Vec3& a = mesh.vertices[t[0]];
        Vec3 e1 = mesh.vertices[t[1]] - a;
        Vec3 e2 = mesh.vertices[t[2]] - a;
        Vec3 pv = cross(dir, e2);
        double det = dot(e1, pv);
        if (std::abs(det) < 1e-14) continue;  // parallel
        double inv = 1.0 / det;
        Vec3 tv = p - a;
        double u = dot(tv, pv) * inv;
        if (u < 0 || u >= 1) continue;
        Vec3 qv = cross(tv, e1);
        double v = dot(dir, qv) * inv;
        if (v < 0 || u + v >= 1) continue;
        double thit = dot(e2, qv) * inv;
        if (thit > 0) ++crossings;
    }
    return (crossings % 2) == 1;
}

}  // namespace

bool point_inside(const TriMesh& mesh, const Vec3& p) {
    int votes = 0;
    for (int axis = 0; axis < 3; ++axis)
        if (ray_parity(mesh, p, axis)) ++votes;
    return votes >= 2;
}

// ---- merging / welding ---------------------------------------------------------

TriMesh merge_meshes(const std::vector<TriMesh>& meshes) {
    TriMesh out;
    for (const auto& m : meshes) {
        int base = int(out.vertices.size());
        out.vertices.insert(out.vertices.end(), m.vertices.begin(), m.vertices.end());
        for (const auto& t : m.triangles)
            out.triangles.push_back({t[0] + base, t[1] + base, t[2] + base});
    }
    out.compute_vertex_normals();
    return out;
}

TriMesh weld_vertices(const TriMesh& mesh, double tol) {
    // Snap to a grid of size tol; vertices in the same cell merge.
    std::unordered_map<uint64_t, int> cell_to_new;
    std::vector<int> remap(mesh.vertices.size());
    TriMesh out;
    const double cell = std::max(tol, 1e-300);
    for (size_t i = 0; i < mesh.vertices.size(); ++i) {
        const Vec3& v = mesh.vertices[i];
        auto q = [&](double x) { return uint64_t(int64_t(std::llround(x / cell)) & 0x1fffff); };
        uint64_t k = (q(v.x) << 42) | (q(v.y) << 21) | q(v.z);
        auto [it, inserted] = cell_to_new.try_emplace(k, int(out.vertices.size()));
        if (inserted) out.vertices.push_back(v);
        remap[i] = it->second;
    }
    // zero-area triangles with three distinct vertices stay: they stitch
    // coincident chains with mismatched subdivision
    for (const auto& t : mesh.triangles) {
        std::array<int, 3> m{remap[t[0]], remap[t[1]], remap[t[2]]};
        if (m[0] == m[1] || m[1] == m[2] || m[0] == m[2]) continue;
        out.triangles.push_back(m);
    }
    out.label = mesh.label;
    out.compute_vertex_normals();
    return out;
}

}  // namespace coalesce
