#pragma once

#include "coalesce/mesh.hpp"

namespace coalesce {

// Watertight axis-aligned box with each face subdivided into a grid.
TriMesh make_box(const Vec3& lo, const Vec3& hi, int nx, int ny, int nz,
                 const std::string& label = "");

// Watertight solid of revolution about the +y axis. The profile is a closed
// polygon in the (radius, y) half-plane, wound counter-clockwise.
TriMesh make_revolved(const std::vector<std::pair<double, double>>& profile, int segments,
                      const std::string& label = "");

// UV sphere.
TriMesh make_sphere(const Vec3& center, double radius, int segments, int rings);

// Open flat strip in the xy plane: (nx+1) x (ny+1) vertex grid, +z normals.
TriMesh make_strip(double x0, double x1, double y0, double y1, int nx, int ny);

// Flat annulus in the xy plane, +z normals, boundary loops at both radii.
TriMesh make_annulus(double r_inner, double r_outer, int segments, int rings);

// Open tube (no caps) around the +z axis, outward normals.
TriMesh make_tube(double radius, double z0, double z1, int segments, int rings);

double signed_volume(const TriMesh& mesh);

}  // namespace coalesce
