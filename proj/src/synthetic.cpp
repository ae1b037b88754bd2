#include "coalesce/shapes.hpp"

#include "coalesce/pipeline.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace coalesce {

namespace {
constexpr double kPi = 3.14159265358979323846;

double lerp(double a, double b, double t) { return a + (b - a) * t; }
}  // namespace

double signed_volume(const TriMesh& mesh) {
    double v = 0;
    for (const auto& t : mesh.triangles)
        v += dot(mesh.vertices[t[0]], cross(mesh.vertices[t[1]], mesh.vertices[t[2]]));
    return v / 6.0;
}

TriMesh make_box(const Vec3& lo, const Vec3& hi, int nx, int ny, int nz,
                 const std::string& label) {
    if (nx < 1 || ny < 1 || nz < 1) throw std::runtime_error("make_box: subdivision must be >= 1");
    TriMesh m;
    m.label = label;
    std::map<std::array<int, 3>, int> lattice;
    int n[3] = {nx, ny, nz};
    auto vertex = [&](int i, int j, int k) {
        auto it = lattice.find({i, j, k});
        if (it != lattice.end()) return it->second;
        Vec3 p{lerp(lo.x, hi.x, double(i) / nx), lerp(lo.y, hi.y, double(j) / ny),
               lerp(lo.z, hi.z, double(k) / nz)};
        int id = int(m.vertices.size());
        m.vertices.push_back(p);
        lattice[{i, j, k}] = id;
        return id;
    };

    // face: fixed axis at side 0/1, quads over the other two axes.
    auto emit_face = [&](int axis, int side) {
        int ua = (axis + 1) % 3, va = (axis + 2) % 3;
        for (int ju = 0; ju < n[ua]; ++ju) {
            for (int jv = 0; jv < n[va]; ++jv) {
                auto at = [&](int du, int dv) {
                    int ijk[3];
                    ijk[axis] = side * n[axis];
                    ijk[ua] = ju + du;
                    ijk[va] = jv + dv;
                    return vertex(ijk[0], ijk[1], ijk[2]);
                };
                int a = at(0, 0), b = at(1, 0), c = at(1, 1), d = at(0, 1);
                if (side == 1) {  // outward = +axis; (u, v, axis) is right-handed
                    m.triangles.push_back({a, b, c});
                    m.triangles.push_back({a, c, d});
                } else {
                    m.triangles.push_back({a, c, b});
                    m.triangles.push_back({a, d, c});
                }
            }
        }
    };
    for (int axis = 0; axis < 3; ++axis)
        for (int side = 0; side < 2; ++side) emit_face(axis, side);
    m.compute_vertex_normals();
    return m;
}

TriMesh make_revolved(const std::vector<std::pair<double, double>>& profile, int segments,
                      const std::string& label) {
    if (profile.size() < 3) throw std::runtime_error("make_revolved: profile needs >= 3 points");
    TriMesh m;
    m.label = label;
    const int np = int(profile.size());
    // Points on the axis (r == 0) collapse to a single vertex per profile entry.
    std::vector<std::vector<int>> ring_ids(np);
    for (int p = 0; p < np; ++p) {
        auto [r, y] = profile[p];
        if (std::abs(r) < 1e-15) {
            int id = int(m.vertices.size());
            m.vertices.push_back({0, y, 0});
            ring_ids[p] = {id};
        } else {
            ring_ids[p].resize(segments);
            for (int s = 0; s < segments; ++s) {
                double a = 2.0 * kPi * s / segments;
                ring_ids[p][s] = int(m.vertices.size());
                m.vertices.push_back({r * std::cos(a), y, r * std::sin(a)});
            }
        }
    }
    for (int p = 0; p < np; ++p) {
        int q = (p + 1) % np;
        const auto& ra = ring_ids[p];
        const auto& rb = ring_ids[q];
        for (int s = 0; s < segments; ++s) {
            int s1 = (s + 1) % segments;
            int a0 = ra[s % ra.size()], a1 = ra[s1 % ra.size()];
            int b0 = rb[s % rb.size()], b1 = rb[s1 % rb.size()];
            // CCW profile in (r, y) with angle increasing toward +z makes
            // (profile direction, angular direction) wind inward; flip.
            if (a0 != a1) m.triangles.push_back({a0, b0, a1});
            if (b0 != b1) m.triangles.push_back({a1, b0, b1});
        }
    }
    m.compute_vertex_normals();
    return m;
}

TriMesh make_sphere(const Vec3& center, double radius, int segments, int rings) {
    std::vector<std::pair<double, double>> profile;
    for (int i = 0; i <= rings; ++i) {
        double t = kPi * i / rings;  // 0 at top
        profile.push_back({radius * std::sin(t), radius * std::cos(t)});
    }
    // drop duplicate axis points created by the closed revolve
    TriMesh m = make_revolved(profile, segments);
    for (auto& v : m.vertices) v += center;
    if (signed_volume(m) < 0)
        for (auto& t : m.triangles) std::swap(t[1], t[2]);
    m.compute_vertex_normals();
    return m;
}

TriMesh make_strip(double x0, double x1, double y0, double y1, int nx, int ny) {
    TriMesh m;
    for (int j = 0; j <= ny; ++j)
        for (int i = 0; i <= nx; ++i)
            m.vertices.push_back({lerp(x0, x1, double(i) / nx), lerp(y0, y1, double(j) / ny), 0});
    auto id = [&](int i, int j) { return j * (nx + 1) + i; };
    // alternate quad diagonals so vertex stars stay symmetric
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            if ((i + j) % 2 == 0) {
                m.triangles.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
                m.triangles.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
            } else {
                m.triangles.push_back({id(i, j), id(i + 1, j), id(i, j + 1)});
                m.triangles.push_back({id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)});
            }
        }
    m.compute_vertex_normals();
    return m;
}

TriMesh make_annulus(double r_inner, double r_outer, int segments, int rings) {
    TriMesh m;
    for (int j = 0; j <= rings; ++j) {
        double r = lerp(r_inner, r_outer, double(j) / rings);
        for (int s = 0; s < segments; ++s) {
            double a = 2.0 * kPi * s / segments;
            m.vertices.push_back({r * std::cos(a), r * std::sin(a), 0});
        }
    }
    auto id = [&](int s, int j) { return j * segments + (s % segments); };
    for (int j = 0; j < rings; ++j)
        for (int s = 0; s < segments; ++s) {
            m.triangles.push_back({id(s, j), id(s + 1, j), id(s + 1, j + 1)});
            m.triangles.push_back({id(s, j), id(s + 1, j + 1), id(s, j + 1)});
        }
    m.compute_vertex_normals();
    return m;
}

TriMesh make_tube(double radius, double z0, double z1, int segments, int rings) {
    TriMesh m;
    for (int j = 0; j <= rings; ++j) {
        double z = lerp(z0, z1, double(j) / rings);
        for (int s = 0; s < segments; ++s) {
            double a = 2.0 * kPi * s / segments;
            m.vertices.push_back({radius * std::cos(a), radius * std::sin(a), z});
        }
    }
    auto id = [&](int s, int j) { return j * segments + (s % segments); };
    for (int j = 0; j < rings; ++j)
        for (int s = 0; s < segments; ++s) {
            m.triangles.push_back({id(s, j), id(s + 1, j), id(s + 1, j + 1)});
            m.triangles.push_back({id(s, j), id(s + 1, j + 1), id(s, j + 1)});
        }
    m.compute_vertex_normals();
    return m;
}

// ---- synthetic labeled shapes ------------------------------------------------

namespace {

int subdiv(double extent, double target = 0.04) {
    return std::max(1, int(std::lround(extent / target)));
}

TriMesh make_box_auto(const Vec3& lo, const Vec3& hi, const std::string& label) {
    Vec3 e = hi - lo;
    return make_box(lo, hi, subdiv(e.x), subdiv(e.y), subdiv(e.z), label);
}

Polyline rect_y(double y, double x0, double x1, double z0, double z1) {
    Polyline p;
    p.closed = true;
    const int k = 4;  // points per side keep distances tight
    auto push = [&](Vec3 a, Vec3 b) {
        for (int i = 0; i < k; ++i) p.points.push_back(a + (b - a) * (double(i) / k));
    };
    push({x0, y, z0}, {x1, y, z0});
    push({x1, y, z0}, {x1, y, z1});
    push({x1, y, z1}, {x0, y, z1});
    push({x0, y, z1}, {x0, y, z0});
    return p;
}

void normalize_shape(ShapeParts& shape) {
    Aabb box;
    for (const auto& m : shape.parts) box.expand(m.bounds());
    double scale = 1.0 / box.diagonal();
    Vec3 center = box.center();
    for (auto& m : shape.parts) {
        for (auto& v : m.vertices) v = (v - center) * scale;
        m.compute_vertex_normals();
    }
    for (auto& [label, polys] : shape.bounds)
        for (auto& pl : polys)
            for (auto& p : pl.points) p = (p - center) * scale;
}

ShapeParts synth_chairlike(uint64_t seed) {
    Rng rng(seed);
    const double w = rng.uniform(0.9, 1.3);
    const double d = rng.uniform(0.8, 1.2);
    const double h = rng.uniform(0.5, 0.8);
    const double ts = rng.uniform(0.08, 0.14);
    const double hb = rng.uniform(0.5, 0.9);
    const double tb = rng.uniform(0.07, 0.12);
    const double lw = rng.uniform(0.08, 0.12);
    const bool arms = rng.uniform() < 0.5;
    const double ha = rng.uniform(0.18, 0.3);
    const double aw = rng.uniform(0.07, 0.1);

    ShapeParts shape;
    shape.parts.resize(4);  // back, seat, leg, arm

    shape.parts[1] = make_box_auto({-w / 2, h, -d / 2}, {w / 2, h + ts, d / 2}, "seat");
    shape.parts[0] =
        make_box_auto({-w / 2, h + ts, d / 2 - tb}, {w / 2, h + ts + hb, d / 2}, "back");

    const double m = 0.02;
    double xs[2] = {-w / 2 + m, w / 2 - m - lw};
    double zs[2] = {-d / 2 + m, d / 2 - m - lw};
    std::vector<TriMesh> legs;
    for (double x0 : xs)
        for (double z0 : zs) {
            legs.push_back(make_box_auto({x0, 0, z0}, {x0 + lw, h, z0 + lw}, "leg"));
            shape.bounds["leg"].push_back(rect_y(h, x0, x0 + lw, z0, z0 + lw));
            shape.bounds["seat"].push_back(rect_y(h, x0, x0 + lw, z0, z0 + lw));
        }
    shape.parts[2] = merge_meshes(legs);
    shape.parts[2].label = "leg";

    shape.bounds["back"].push_back(rect_y(h + ts, -w / 2, w / 2, d / 2 - tb, d / 2));
    shape.bounds["seat"].push_back(rect_y(h + ts, -w / 2, w / 2, d / 2 - tb, d / 2));

    if (arms) {
        std::vector<TriMesh> arm_parts;
        const double z0 = -d / 2 + 0.15 * d, z1 = d / 2 - tb - 0.05;
        for (int side = 0; side < 2; ++side) {
            double x0 = side == 0 ? -w / 2 : w / 2 - aw;
            double x1 = x0 + aw;
            arm_parts.push_back(
                make_box_auto({x0, h + ts, z0}, {x1, h + ts + ha, z1}, "arm"));
            shape.bounds["arm"].push_back(rect_y(h + ts, x0, x1, z0, z1));
            shape.bounds["seat"].push_back(rect_y(h + ts, x0, x1, z0, z1));
        }
        shape.parts[3] = merge_meshes(arm_parts);
        shape.parts[3].label = "arm";
    }

    normalize_shape(shape);
    return shape;
}

// square-section tube swept along a circular arc, capped at both ends
TriMesh make_swept_handle(double attach_x, double yc, double rh, double side, int arc_segments,
                          const std::string& label, std::vector<Polyline>* end_rings) {
    TriMesh m;
    m.label = label;
    const int ring_n = 16;  // 4 points per square side
    std::vector<std::vector<int>> rings;
    for (int a = 0; a <= arc_segments; ++a) {
        double theta = -3.14159265358979 / 2 + 3.14159265358979 * a / arc_segments;
        Vec3 c{attach_x + rh * std::cos(theta), yc + rh * std::sin(theta), 0};
        Vec3 nrm{std::cos(theta), std::sin(theta), 0};  // radial in the arc plane
        Vec3 bin{0, 0, 1};
        std::vector<int> ring;
        for (int i = 0; i < ring_n; ++i) {
            // walk the square perimeter: 4 sides of 4 steps
            double t = double(i) / ring_n * 4.0;
            int sideq = int(t);
            double f = t - sideq;
            double u = 0, v = 0;
            switch (sideq) {
                case 0: u = -0.5 + f; v = -0.5; break;
                case 1: u = 0.5; v = -0.5 + f; break;
                case 2: u = 0.5 - f; v = 0.5; break;
                default: u = -0.5; v = 0.5 - f; break;
            }
            ring.push_back(int(m.vertices.size()));
            m.vertices.push_back(c + nrm * (u * side) + bin * (v * side));
        }
        rings.push_back(std::move(ring));
    }
    for (int a = 0; a < arc_segments; ++a) {
        for (int i = 0; i < ring_n; ++i) {
            int i1 = (i + 1) % ring_n;
            int a0 = rings[a][i], a1 = rings[a][i1];
            int b0 = rings[a + 1][i], b1 = rings[a + 1][i1];
            m.triangles.push_back({a0, b0, b1});
            m.triangles.push_back({a0, b1, a1});
        }
    }
    // caps: fan from ring centroid
    for (int end = 0; end < 2; ++end) {
        const auto& ring = end == 0 ? rings.front() : rings.back();
        Vec3 c{0, 0, 0};
        for (int v : ring) c += m.vertices[v];
        c = c / double(ring.size());
        int cid = int(m.vertices.size());
        m.vertices.push_back(c);
        for (int i = 0; i < ring_n; ++i) {
            int i1 = (i + 1) % ring_n;
            if (end == 0) m.triangles.push_back({cid, ring[i], ring[i1]});
            else m.triangles.push_back({cid, ring[i1], ring[i]});
        }
        if (end_rings) {
            Polyline pl;
            pl.closed = true;
            for (int v : ring) pl.points.push_back(m.vertices[v]);
            end_rings->push_back(std::move(pl));
        }
    }
    if (signed_volume(m) < 0)
        for (auto& t : m.triangles) std::swap(t[1], t[2]);
    m.compute_vertex_normals();
    return m;
}

ShapeParts synth_muglike(uint64_t seed) {
    Rng rng(seed);
    const double R = rng.uniform(0.35, 0.5);
    const double t = rng.uniform(0.06, 0.09);
    const double H = rng.uniform(0.7, 1.0);
    const double tb = rng.uniform(0.05, 0.08);
    const double rh = rng.uniform(0.55, 0.75) * H / 2;
    const double s = rng.uniform(0.07, 0.1);
    const double yc = H * rng.uniform(0.42, 0.58);

    ShapeParts shape;
    shape.parts.resize(2);  // body, handle

    // body profile, counter-clockwise in (radius, height), edges subdivided
    std::vector<std::pair<double, double>> profile;
    auto edge = [&](double r0, double y0, double r1, double y1) {
        int n = std::max(1, int(std::lround(std::hypot(r1 - r0, y1 - y0) / 0.05)));
        for (int i = 0; i < n; ++i)
            profile.push_back({r0 + (r1 - r0) * i / n, y0 + (y1 - y0) * i / n});
    };
    edge(0, 0, R, 0);
    edge(R, 0, R, H);
    edge(R, H, R - t, H);
    edge(R - t, H, R - t, tb);
    edge(R - t, tb, 0, tb);
    TriMesh body = make_revolved(profile, 48, "body");
    if (signed_volume(body) < 0)
        for (auto& tr : body.triangles) std::swap(tr[1], tr[2]);
    body.compute_vertex_normals();
    shape.parts[0] = std::move(body);

    std::vector<Polyline> end_rings;
    shape.parts[1] = make_swept_handle(R - 0.02, yc, rh, s, 20, "handle", &end_rings);
    shape.bounds["handle"] = end_rings;
    shape.bounds["body"] = end_rings;

    normalize_shape(shape);
    return shape;
}

}  // namespace

ShapeParts synth_shape(const CategoryConfig& category, uint64_t seed) {
    if (category.name == "chairlike") return synth_chairlike(seed);
    if (category.name == "muglike") return synth_muglike(seed);
    throw std::runtime_error("unknown synthetic category: " + category.name);
}

}  // namespace coalesce
