#include "coalesce/grid.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <stdexcept>

namespace coalesce {

bool OccupancyGrid::locate(const Vec3& p, int& x, int& y, int& z) const {
    Vec3 q = (p - origin) / cell_size;
    x = int(std::floor(q.x));
    y = int(std::floor(q.y));
    z = int(std::floor(q.z));
    return x >= 0 && y >= 0 && z >= 0 && x < int(res[0]) && y < int(res[1]) && z < int(res[2]);
}

size_t OccupancyGrid::count_inside() const {
    size_t n = 0;
    for (uint64_t w : bits) n += size_t(__builtin_popcountll(w));
    return n;
}

OccupancyGrid make_grid(const Aabb& box, std::array<uint32_t, 3> resolution) {
    for (uint32_t r : resolution)
        if (r < 2) throw std::runtime_error("grid resolution must be >= 2 per axis");
    OccupancyGrid g;
    g.res = resolution;
    Vec3 ext = box.empty() ? Vec3{1, 1, 1} : box.extent();
    double cell = 0;
    for (int i = 0; i < 3; ++i) {
        double need = std::max(ext[i], 1e-9) / double(resolution[i] - 2);
        cell = std::max(cell, need);
    }
    g.cell_size = cell;
    Vec3 center = box.empty() ? Vec3{0, 0, 0} : box.center();
    for (int i = 0; i < 3; ++i) g.origin[i] = center[i] - 0.5 * cell * double(resolution[i]);
    g.allocate();
    return g;
}

namespace {

// Accepts points exactly on an edge for exactly one of the two triangles
// sharing it (top-left fill rule on the directed CCW edge).
bool edge_covers(double ax, double ay, double bx, double by, double px, double py) {
    double e = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
    if (e != 0) return e > 0;
    double dy = by - ay;
    return dy > 0 || (dy == 0 && bx < ax);
}

// Crossing heights of the +axis ray through each column of cell centers.
// The fill rule makes coverage exact even when a center sits on a shared edge,
// so parity stays correct for watertight meshes.
void column_crossings(const TriMesh& mesh, const OccupancyGrid& g, int axis,
                      std::vector<std::vector<double>>& crossings) {
    int ui = (axis + 1) % 3, vi = (axis + 2) % 3;
    int nu = int(g.res[ui]), nv = int(g.res[vi]);
    crossings.assign(size_t(nu) * nv, {});

    for (const auto& t : mesh.triangles) {
        const Vec3& p0 = mesh.vertices[t[0]];
        const Vec3& p1 = mesh.vertices[t[1]];
        const Vec3& p2 = mesh.vertices[t[2]];
        Vec3 n = cross(p1 - p0, p2 - p0);
        double det = n[axis];  // 2x signed projected area
        if (std::abs(det) < 1e-14) continue;  // edge-on to the ray

        double u0 = p0[ui], v0 = p0[vi], u1 = p1[ui], v1 = p1[vi], u2 = p2[ui], v2 = p2[vi];
        if (det < 0) {  // make the projection counter-clockwise
            std::swap(u1, u2);
            std::swap(v1, v2);
        }

        double ulo = std::min({u0, u1, u2}), uhi = std::max({u0, u1, u2});
        double vlo = std::min({v0, v1, v2}), vhi = std::max({v0, v1, v2});
        auto cell_lo = [&](double w, int idx) {
            return std::max(0, int(std::floor((w - g.origin[idx]) / g.cell_size - 0.5)));
        };
        auto cell_hi = [&](double w, int idx, int nn) {
            return std::min(nn - 1, int(std::ceil((w - g.origin[idx]) / g.cell_size - 0.5)));
        };
        int iu0 = cell_lo(ulo, ui), iu1 = cell_hi(uhi, ui, nu);
        int iv0 = cell_lo(vlo, vi), iv1 = cell_hi(vhi, vi, nv);

        for (int iv = iv0; iv <= iv1; ++iv) {
            double v = g.origin[vi] + (iv + 0.5) * g.cell_size;
            for (int iu = iu0; iu <= iu1; ++iu) {
                double u = g.origin[ui] + (iu + 0.5) * g.cell_size;
                if (!edge_covers(u0, v0, u1, v1, u, v) || !edge_covers(u1, v1, u2, v2, u, v) ||
                    !edge_covers(u2, v2, u0, v0, u, v))
                    continue;
                // height from the triangle plane n . (p - p0) = 0
                double w = p0[axis] - (n[ui] * (u - p0[ui]) + n[vi] * (v - p0[vi])) / n[axis];
                crossings[size_t(iu) + size_t(nu) * iv].push_back(w);
            }
        }
    }
}

}  // namespace

void voxelize_into(const TriMesh& mesh, OccupancyGrid& g) {
    if (mesh.triangles.empty()) return;

    // votes per cell, 2 bits would do; use bytes for simplicity
    std::vector<uint8_t> votes(g.cell_count(), 0);
    std::vector<std::vector<double>> crossings;

    for (int axis = 0; axis < 3; ++axis) {
        int ui = (axis + 1) % 3, vi = (axis + 2) % 3;
        int nu = int(g.res[ui]), nv = int(g.res[vi]);
        int nw = int(g.res[axis]);
        column_crossings(mesh, g, axis, crossings);
        for (int iv = 0; iv < nv; ++iv) {
            for (int iu = 0; iu < nu; ++iu) {
                auto& cs = crossings[size_t(iu) + size_t(nu) * iv];
                if (cs.empty()) continue;
                std::sort(cs.begin(), cs.end());
                size_t ci = 0;
                bool inside = false;
                for (int iw = 0; iw < nw; ++iw) {
                    double w = g.origin[axis] + (iw + 0.5) * g.cell_size;
                    while (ci < cs.size() && cs[ci] <= w) { inside = !inside; ++ci; }
                    if (inside) {
                        int xyz[3];
                        xyz[axis] = iw; xyz[ui] = iu; xyz[vi] = iv;
                        ++votes[g.index(xyz[0], xyz[1], xyz[2])];
                    }
                }
            }
        }
    }

    g.uncertain_cells = 0;
    for (size_t i = 0; i < votes.size(); ++i) {
        if (votes[i] != 0 && votes[i] != 3) ++g.uncertain_cells;
        if (votes[i] >= 2) g.bits[i >> 6] |= uint64_t(1) << (i & 63);
    }
}

OccupancyGrid voxel_occupancy(const TriMesh& mesh, std::array<uint32_t, 3> resolution) {
    OccupancyGrid g = make_grid(mesh.bounds(), resolution);
    voxelize_into(mesh, g);
    return g;
}

OccupancyGrid dilate(const OccupancyGrid& grid, int steps) {
    if (steps < 0) throw std::runtime_error("dilate: steps must be >= 0");
    OccupancyGrid cur = grid;
    int rx = int(grid.res[0]), ry = int(grid.res[1]), rz = int(grid.res[2]);
    for (int s = 0; s < steps; ++s) {
        OccupancyGrid next = cur;
        for (int z = 0; z < rz; ++z)
            for (int y = 0; y < ry; ++y)
                for (int x = 0; x < rx; ++x) {
                    if (cur.get(x, y, z)) continue;
                    bool on = (x > 0 && cur.get(x - 1, y, z)) || (x + 1 < rx && cur.get(x + 1, y, z)) ||
                              (y > 0 && cur.get(x, y - 1, z)) || (y + 1 < ry && cur.get(x, y + 1, z)) ||
                              (z > 0 && cur.get(x, y, z - 1)) || (z + 1 < rz && cur.get(x, y, z + 1));
                    if (on) next.set(x, y, z, true);
                }
        cur = std::move(next);
    }
    return cur;
}

namespace {
void check_same_layout(const OccupancyGrid& a, const OccupancyGrid& b) {
    if (a.res != b.res || std::abs(a.cell_size - b.cell_size) > 1e-12 * std::max(1.0, a.cell_size) ||
        dist(a.origin, b.origin) > 1e-9 * std::max(1.0, a.cell_size))
        throw std::runtime_error("grid layouts do not match");
}
}  // namespace

OccupancyGrid grid_and_not(const OccupancyGrid& a, const OccupancyGrid& b) {
    check_same_layout(a, b);
    OccupancyGrid out = a;
    for (size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = a.bits[i] & ~b.bits[i];
    return out;
}

OccupancyGrid grid_or(const OccupancyGrid& a, const OccupancyGrid& b) {
    check_same_layout(a, b);
    OccupancyGrid out = a;
    for (size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = a.bits[i] | b.bits[i];
    return out;
}

// Flat binary format: 3xu32 resolution, 3xf32 origin, f32 cell size, then the
// inside bits packed 8 cells per byte, x-fastest.
void save_grid(const OccupancyGrid& grid, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot write grid file: " + path);
    uint32_t r[3] = {grid.res[0], grid.res[1], grid.res[2]};
    float o[4] = {float(grid.origin.x), float(grid.origin.y), float(grid.origin.z),
                  float(grid.cell_size)};
    std::fwrite(r, sizeof(uint32_t), 3, f);
    std::fwrite(o, sizeof(float), 4, f);
    size_t nbytes = (grid.cell_count() + 7) / 8;
    std::vector<uint8_t> body(nbytes, 0);
    for (size_t i = 0; i < grid.cell_count(); ++i)
        if ((grid.bits[i >> 6] >> (i & 63)) & 1) body[i >> 3] |= uint8_t(1) << (i & 7);
    std::fwrite(body.data(), 1, nbytes, f);
    std::fclose(f);
}

OccupancyGrid load_grid(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("cannot open grid file: " + path);
    uint32_t r[3];
    float o[4];
    if (std::fread(r, sizeof(uint32_t), 3, f) != 3 || std::fread(o, sizeof(float), 4, f) != 4) {
        std::fclose(f);
        throw std::runtime_error("truncated grid header: " + path);
    }
    OccupancyGrid g;
    g.res = {r[0], r[1], r[2]};
    g.origin = {o[0], o[1], o[2]};
    g.cell_size = o[3];
    g.allocate();
    size_t nbytes = (g.cell_count() + 7) / 8;
    std::vector<uint8_t> body(nbytes);
    if (std::fread(body.data(), 1, nbytes, f) != nbytes) {
        std::fclose(f);
        throw std::runtime_error("truncated grid body: " + path);
    }
    std::fclose(f);
    for (size_t i = 0; i < g.cell_count(); ++i)
        if ((body[i >> 3] >> (i & 7)) & 1) g.bits[i >> 6] |= uint64_t(1) << (i & 63);
    return g;
}

}  // namespace coalesce
