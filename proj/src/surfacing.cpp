#include "coalesce/surfacing.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "coalesce/mc_tables.hpp"

namespace coalesce {

ScalarField field_from_function(const Aabb& box, uint32_t res,
                                const std::function<double(const Vec3&)>& f) {
    ScalarField field;
    field.res = {res, res, res};
    Vec3 ext = box.extent();
    field.cell = std::max({ext.x, ext.y, ext.z}) / double(res - 1);
    field.origin = box.center() - Vec3{field.cell, field.cell, field.cell} * (0.5 * (res - 1));
    field.values.resize(size_t(res) * res * res);
    for (uint32_t z = 0; z < res; ++z)
        for (uint32_t y = 0; y < res; ++y)
            for (uint32_t x = 0; x < res; ++x)
                field.values[field.index(x, y, z)] = float(f(field.position(x, y, z)));
    return field;
}

// ---- marching cubes -----------------------------------------------------------

namespace {

// corner layout matching the lookup tables: ring 0-3 at y, ring 4-7 at y+1
const int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 0, 1}, {0, 0, 1},
                           {0, 1, 0}, {1, 1, 0}, {1, 1, 1}, {0, 1, 1}};
const int kEdgeEnds[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                              {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

struct EdgeKeyHash {
    size_t operator()(const std::array<int, 4>& k) const {
        size_t h = 1469598103934665603ull;
        for (int v : k) {
            h ^= size_t(uint32_t(v));
            h *= 1099511628211ull;
        }
        return h;
    }
};

}  // namespace

TriMesh marching_cubes(const ScalarField& field, double iso) {
    TriMesh mesh;
    if (field.res[0] < 2 || field.res[1] < 2 || field.res[2] < 2)
        throw std::runtime_error("marching_cubes: grid must be at least 2 nodes per axis");

    std::unordered_map<std::array<int, 4>, int, EdgeKeyHash> edge_vertex;

    auto vertex_on_edge = [&](int cx, int cy, int cz, int edge) {
        const int* a = kCorner[kEdgeEnds[edge][0]];
        const int* b = kCorner[kEdgeEnds[edge][1]];
        int ax = cx + a[0], ay = cy + a[1], az = cz + a[2];
        int bx = cx + b[0], by = cy + b[1], bz = cz + b[2];
        // canonical key: lower node plus axis
        int axis = (ax != bx) ? 0 : (ay != by ? 1 : 2);
        std::array<int, 4> key{std::min(ax, bx), std::min(ay, by), std::min(az, bz), axis};
        auto it = edge_vertex.find(key);
        if (it != edge_vertex.end()) return it->second;

        double va = field.at(ax, ay, az), vb = field.at(bx, by, bz);
        double t = (iso - va) / (vb - va);
        t = std::clamp(t, 0.0, 1.0);
        Vec3 pa = field.position(ax, ay, az), pb = field.position(bx, by, bz);
        int id = int(mesh.vertices.size());
        mesh.vertices.push_back(pa + (pb - pa) * t);
        edge_vertex.emplace(key, id);
        return id;
    };

    for (int z = 0; z + 1 < int(field.res[2]); ++z) {
        for (int y = 0; y + 1 < int(field.res[1]); ++y) {
            for (int x = 0; x + 1 < int(field.res[0]); ++x) {
                int cube_index = 0;
                for (int c = 0; c < 8; ++c) {
                    double v = field.at(x + kCorner[c][0], y + kCorner[c][1], z + kCorner[c][2]);
                    if (v < iso) cube_index |= 1 << c;
                }
                if (kMcEdgeTable[cube_index] == 0) continue;
                const int* tri = kMcTriTable[cube_index];
                for (int t = 0; tri[t] != -1; t += 3) {
                    int v0 = vertex_on_edge(x, y, z, tri[t]);
                    int v1 = vertex_on_edge(x, y, z, tri[t + 1]);
                    int v2 = vertex_on_edge(x, y, z, tri[t + 2]);
                    if (v0 == v1 || v1 == v2 || v0 == v2) continue;
                    mesh.triangles.push_back({v0, v2, v1});  // outward = decreasing field
                }
            }
        }
    }
    mesh.compute_vertex_normals();
    return mesh;
}

// ---- loop correspondence ----------------------------------------------------------

namespace {

std::vector<std::vector<int>> vertex_adjacency(const TriMesh& mesh) {
    std::vector<std::vector<int>> adj(mesh.vertices.size());
    for (const auto& t : mesh.triangles)
        for (int k = 0; k < 3; ++k) {
            int a = t[k], b = t[(k + 1) % 3];
            adj[a].push_back(b);
            adj[b].push_back(a);
        }
    for (auto& n : adj) {
        std::sort(n.begin(), n.end());
        n.erase(std::unique(n.begin(), n.end()), n.end());
    }
    return adj;
}

// largest simple cycle within a closed vertex walk
std::vector<int> largest_subloop(const std::vector<int>& walk,
                                 std::vector<int>* kept_walk_indices) {
    std::vector<int> stack;                 // vertex ids
    std::vector<int> stack_src;             // walk index per stack entry
    std::unordered_map<int, int> on_stack;  // vertex -> stack position
    std::vector<int> best, best_src;
    for (size_t w = 0; w < walk.size(); ++w) {
        int v = walk[w];
        auto it = on_stack.find(v);
        if (it != on_stack.end()) {
            int from = it->second;
            if (stack.size() - from >= best.size()) {
                best.assign(stack.begin() + from, stack.end());
                best_src.assign(stack_src.begin() + from, stack_src.end());
            }
            while (int(stack.size()) > from + 1) {
                on_stack.erase(stack.back());
                stack.pop_back();
                stack_src.pop_back();
            }
        } else {
            on_stack[v] = int(stack.size());
            stack.push_back(v);
            stack_src.push_back(int(w));
        }
    }
    if (kept_walk_indices) *kept_walk_indices = best_src;
    return best;
}

}  // namespace

LoopCorrespondence loop_correspondence(const std::vector<Vec3>& loop_positions,
                                       const std::vector<Vec3>& loop_normals,
                                       const TriMesh& joint, int retries) {
    LoopCorrespondence out;
    out.part_positions = loop_positions;
    out.part_normals = loop_normals;
    if (loop_positions.size() < 3 || joint.vertices.empty()) return out;

    auto adj = vertex_adjacency(joint);
    const size_t n = loop_positions.size();

    for (int attempt = 0; attempt < retries; ++attempt) {
        Rng rng{uint64_t(attempt)};
        size_t r = rng.uniform_index(n);

        // closest joint vertex to the initial loop point under D
        int cur = -1;
        double best = std::numeric_limits<double>::max();
        for (size_t v = 0; v < joint.vertices.size(); ++v) {
            double d = metric_d(loop_positions[r], loop_normals[r], joint.vertices[v],
                                joint.vertex_normals[v]);
            if (d < best) {
                best = d;
                cur = int(v);
            }
        }
        if (cur < 0) continue;

        std::vector<int> walk{cur};
        // the final step aims back at the initial loop point, giving the walk
        // its chance to close
        for (size_t step = 1; step <= n; ++step) {
            size_t si = (r + step) % n;
            int next = -1;
            double nd = std::numeric_limits<double>::max();
            for (int q : adj[cur]) {
                double d = metric_d(loop_positions[si], loop_normals[si], joint.vertices[q],
                                    joint.vertex_normals[q]);
                if (d < nd) {
                    nd = d;
                    next = q;
                }
            }
            if (next < 0) break;
            cur = next;
            if (cur != walk.back()) walk.push_back(cur);
        }
        if (walk.size() < 4 || walk.front() != walk.back()) continue;  // did not close

        std::vector<int> kept_idx;
        std::vector<int> loop = largest_subloop(walk, &kept_idx);
        if (loop.size() < 3) continue;
        out.joint_loop = std::move(loop);
        out.matched = true;
        return out;
    }
    return out;  // every retry failed
}

// ---- redundancy removal --------------------------------------------------------------

TriMesh remove_redundant(const TriMesh& joint, const std::vector<LoopCorrespondence>& corrs,
                         std::vector<std::string>* warnings) {
    std::vector<const LoopCorrespondence*> matched;
    for (const auto& c : corrs)
        if (c.matched && c.joint_loop.size() >= 3) matched.push_back(&c);
    if (matched.empty()) return joint;

    // cut edges: consecutive pairs along each matched loop
    auto ekey = [](int a, int b) {
        if (a > b) std::swap(a, b);
        return (uint64_t(uint32_t(a)) << 32) | uint32_t(b);
    };
    std::unordered_map<uint64_t, bool> cut;
    for (const auto* c : matched)
        for (size_t i = 0; i < c->joint_loop.size(); ++i)
            cut[ekey(c->joint_loop[i], c->joint_loop[(i + 1) % c->joint_loop.size()])] = true;

    // face adjacency via shared edges, except across cuts
    std::unordered_map<uint64_t, std::vector<int>> edge_faces;
    for (size_t f = 0; f < joint.triangles.size(); ++f)
        for (int k = 0; k < 3; ++k)
            edge_faces[ekey(joint.triangles[f][k], joint.triangles[f][(k + 1) % 3])].push_back(
                int(f));

    std::vector<int> component(joint.triangles.size(), -1);
    int num_components = 0;
    for (size_t seed = 0; seed < joint.triangles.size(); ++seed) {
        if (component[seed] >= 0) continue;
        int id = num_components++;
        std::vector<int> stack{int(seed)};
        component[seed] = id;
        while (!stack.empty()) {
            int f = stack.back();
            stack.pop_back();
            for (int k = 0; k < 3; ++k) {
                uint64_t e = ekey(joint.triangles[f][k], joint.triangles[f][(k + 1) % 3]);
                if (cut.count(e)) continue;
                for (int g : edge_faces[e]) {
                    if (component[g] < 0) {
                        component[g] = id;
                        stack.push_back(g);
                    }
                }
            }
        }
    }

    // classification of loop-adjacent components by the directed part loops
    std::vector<double> score(num_components, 0);
    std::vector<int> score_count(num_components, 0);
    std::vector<bool> touches_loop(num_components, false);

    for (const auto* c : matched) {
        const auto& loop = c->joint_loop;
        const size_t nl = loop.size();
        // outward direction away from the part, per loop vertex:
        // o = tangent x part surface normal at the nearest part-loop vertex
        std::vector<Vec3> outward(nl);
        for (size_t i = 0; i < nl; ++i) {
            const Vec3& tq = joint.vertices[loop[i]];
            size_t nearest = 0;
            double best = std::numeric_limits<double>::max();
            for (size_t s = 0; s < c->part_positions.size(); ++s) {
                double d = dist2(tq, c->part_positions[s]);
                if (d < best) {
                    best = d;
                    nearest = s;
                }
            }
            size_t prev = (nearest + c->part_positions.size() - 1) % c->part_positions.size();
            size_t next = (nearest + 1) % c->part_positions.size();
            Vec3 tangent = normalized(c->part_positions[next] - c->part_positions[prev]);
            outward[i] = normalized(cross(tangent, c->part_normals[nearest]));
        }
        std::unordered_map<int, size_t> loop_pos;
        for (size_t i = 0; i < nl; ++i) loop_pos[loop[i]] = i;

        for (size_t f = 0; f < joint.triangles.size(); ++f) {
            const auto& tri = joint.triangles[f];
            for (int k = 0; k < 3; ++k) {
                auto it = loop_pos.find(tri[k]);
                if (it == loop_pos.end()) continue;
                Vec3 centroid = (joint.vertices[tri[0]] + joint.vertices[tri[1]] +
                                 joint.vertices[tri[2]]) / 3.0;
                Vec3 rel = centroid - joint.vertices[loop[it->second]];
                score[component[f]] += dot(rel, outward[it->second]);
                score_count[component[f]] += 1;
                touches_loop[component[f]] = true;
                break;
            }
        }
    }

    std::vector<bool> remove(num_components, false);
    for (int cidx = 0; cidx < num_components; ++cidx) {
        if (!touches_loop[cidx]) continue;  // detached components stay
        double mean = score[cidx] / double(std::max(score_count[cidx], 1));
        double eps = 1e-12;
        if (mean < -eps) {
            remove[cidx] = true;
        } else if (mean <= eps && warnings) {
            warnings->push_back("component " + std::to_string(cidx) +
                                " straddles a loop; keeping it");
        }
    }

    TriMesh out;
    out.vertices = joint.vertices;  // indices preserved for the loops
    out.label = joint.label;
    for (size_t f = 0; f < joint.triangles.size(); ++f)
        if (!remove[component[f]]) out.triangles.push_back(joint.triangles[f]);
    out.compute_vertex_normals();
    return out;
}

// ---- Poisson blending ------------------------------------------------------------------

TriMesh harmonic_displace(const TriMesh& mesh,
                          const std::vector<std::pair<int, Vec3>>& constraints) {
    const size_t n = mesh.vertices.size();
    std::vector<char> fixed(n, 0);
    std::vector<Vec3> displacement(n, Vec3{0, 0, 0});
    for (const auto& [v, target] : constraints) {
        fixed[v] = 1;
        displacement[v] = target - mesh.vertices[v];
    }

    auto adj = vertex_adjacency(mesh);

    // CG on the free block of the uniform Laplacian, one pass for all three
    // coordinates stacked
    std::vector<int> free_ids;
    for (size_t v = 0; v < n; ++v)
        if (!fixed[v] && !adj[v].empty()) free_ids.push_back(int(v));
    std::vector<int> pos(n, -1);
    for (size_t i = 0; i < free_ids.size(); ++i) pos[free_ids[i]] = int(i);

    const size_t m = free_ids.size();
    if (m > 0) {
        for (int axis = 0; axis < 3; ++axis) {
            std::vector<double> x(m, 0), b(m, 0), r(m), p(m), ap(m);
            for (size_t i = 0; i < m; ++i) {
                int v = free_ids[i];
                for (int u : adj[v])
                    if (fixed[u]) b[i] += displacement[u][axis];
            }
            auto apply = [&](const std::vector<double>& in, std::vector<double>& out) {
                for (size_t i = 0; i < m; ++i) {
                    int v = free_ids[i];
                    double acc = double(adj[v].size()) * in[i];
                    for (int u : adj[v])
                        if (!fixed[u] && pos[u] >= 0) acc -= in[pos[u]];
                    out[i] = acc;
                }
            };
            double bnorm = std::sqrt(std::inner_product(b.begin(), b.end(), b.begin(), 0.0));
            if (bnorm == 0) continue;
            apply(x, r);
            for (size_t i = 0; i < m; ++i) r[i] = b[i] - r[i];
            p = r;
            double rr = std::inner_product(r.begin(), r.end(), r.begin(), 0.0);
            size_t max_iter = 10 * m;
            size_t iter = 0;
            while (std::sqrt(rr) > 1e-8 * bnorm) {
                if (iter++ >= max_iter)
                    throw std::runtime_error("harmonic_displace: CG failed to converge in " +
                                             std::to_string(max_iter) + " iterations");
                apply(p, ap);
                double pap = std::inner_product(p.begin(), p.end(), ap.begin(), 0.0);
                double alpha = rr / pap;
                for (size_t i = 0; i < m; ++i) {
                    x[i] += alpha * p[i];
                    r[i] -= alpha * ap[i];
                }
                double rr_new = std::inner_product(r.begin(), r.end(), r.begin(), 0.0);
                for (size_t i = 0; i < m; ++i) p[i] = r[i] + (rr_new / rr) * p[i];
                rr = rr_new;
            }
            for (size_t i = 0; i < m; ++i) displacement[free_ids[i]][axis] = x[i];
        }
    }

    TriMesh out = mesh;
    for (size_t v = 0; v < n; ++v) out.vertices[v] += displacement[v];
    out.compute_vertex_normals();
    return out;
}

TriMesh poisson_blend(const TriMesh& joint, const std::vector<LoopCorrespondence>& corrs) {
    std::map<int, Vec3> targets;  // deterministic order, last writer wins per vertex
    for (const auto& c : corrs) {
        if (!c.matched) continue;
        for (int tv : c.joint_loop) {
            const Vec3& q = joint.vertices[tv];
            const Vec3 nq = joint.vertex_normals[tv];
            double best = std::numeric_limits<double>::max();
            size_t pick = 0;
            for (size_t s = 0; s < c.part_positions.size(); ++s) {
                double d = metric_d(c.part_positions[s], c.part_normals[s], q, nq);
                if (d < best) {
                    best = d;
                    pick = s;
                }
            }
            targets[tv] = c.part_positions[pick];
        }
    }
    std::vector<std::pair<int, Vec3>> constraints(targets.begin(), targets.end());
    return harmonic_displace(joint, constraints);
}

// ---- bridging -----------------------------------------------------------------------------

TriMesh bridge_loops(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    if (a.size() < 3 || b.size() < 3)
        throw std::runtime_error("bridge_loops: loops need at least 3 vertices");
    TriMesh out;
    out.vertices = a;
    out.vertices.insert(out.vertices.end(), b.begin(), b.end());
    const int na = int(a.size()), nb = int(b.size());
    auto bi = [&](int j) { return na + (j % nb); };

    // start at the closest pair
    int i0 = 0, j0 = 0;
    double best = std::numeric_limits<double>::max();
    for (int i = 0; i < na; ++i)
        for (int j = 0; j < nb; ++j) {
            double d = dist2(a[i], b[j]);
            if (d < best) {
                best = d;
                i0 = i;
                j0 = j;
            }
        }

    int ia = 0, jb = 0;  // advanced edge counts
    int i = i0, j = j0;
    auto emit = [&](int v0, int v1, int v2) { out.triangles.push_back({v0, v1, v2}); };
    while (ia < na || jb < nb) {
        bool advance_a;
        if (ia >= na) {
            advance_a = false;
        } else if (jb >= nb) {
            advance_a = true;
        } else {
            double da = dist2(a[(i + 1) % na], b[j % nb]);
            double db = dist2(a[i % na], b[(j + 1) % nb]);
            advance_a = da <= db;
        }
        if (advance_a) {
            emit((i + 1) % na, i % na, bi(j));
            ++i;
            ++ia;
        } else {
            emit(bi(j), bi(j + 1), i % na);
            ++j;
            ++jb;
        }
    }
    out.compute_vertex_normals();
    return out;
}

// ---- stitch ---------------------------------------------------------------------------------

TriMesh stitch(const std::vector<TriMesh>& parts, const ScalarField& field, StitchFlags* flags) {
    StitchFlags local;
    StitchFlags& fl = flags ? *flags : local;

    Aabb box;
    for (const auto& p : parts) box.expand(p.bounds());
    const double weld_tol = 1e-6 * std::max(box.diagonal(), 1e-9);

    TriMesh joint = marching_cubes(field, field.iso);
    if (joint.triangles.empty()) {
        fl.joint_empty = true;
        return weld_vertices(merge_meshes(parts), weld_tol);
    }

    // correspondences for every part boundary loop
    std::vector<LoopCorrespondence> corrs;
    for (const auto& part : parts) {
        for (const auto& loop : boundary_loops(part)) {
            ++fl.loops_total;
            std::vector<Vec3> pos, nrm;
            for (int v : loop.vertex_ids) {
                pos.push_back(part.vertices[v]);
                nrm.push_back(part.vertex_normals[v]);
            }
            LoopCorrespondence c = loop_correspondence(pos, nrm, joint);
            if (c.matched) ++fl.loops_matched;
            corrs.push_back(std::move(c));
        }
    }

    if (fl.loops_total > 0 && fl.loops_matched == 0) {
        fl.unblended = true;
        std::vector<TriMesh> all = parts;
        all.push_back(joint);
        return weld_vertices(merge_meshes(all), weld_tol);
    }

    TriMesh trimmed = remove_redundant(joint, corrs, &fl.warnings);
    TriMesh blended = poisson_blend(trimmed, corrs);

    std::vector<TriMesh> pieces = parts;
    pieces.push_back(blended);
    for (const auto& c : corrs) {
        if (!c.matched) continue;
        std::vector<Vec3> tpos;
        for (int v : c.joint_loop) tpos.push_back(blended.vertices[v]);
        pieces.push_back(bridge_loops(c.part_positions, tpos));
    }
    return weld_vertices(merge_meshes(pieces), weld_tol);
}

}  // namespace coalesce
