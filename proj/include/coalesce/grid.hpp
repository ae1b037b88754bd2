#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "coalesce/mesh.hpp"

namespace coalesce {

// Bit-per-cell voxel grid (inside = 1). Cells are cubes; linear index is
// x-fastest: x + res[0] * (y + res[1] * z).
struct OccupancyGrid {
    std::array<uint32_t, 3> res{0, 0, 0};
    Vec3 origin{0, 0, 0};
    double cell_size = 0;
    std::vector<uint64_t> bits;
    // Cells where the per-axis parity votes disagreed (non-watertight input).
    size_t uncertain_cells = 0;

    size_t cell_count() const { return size_t(res[0]) * res[1] * res[2]; }
    size_t index(int x, int y, int z) const {
        return size_t(x) + size_t(res[0]) * (size_t(y) + size_t(res[1]) * size_t(z));
    }
    bool get(int x, int y, int z) const {
        size_t i = index(x, y, z);
        return (bits[i >> 6] >> (i & 63)) & 1;
    }
    void set(int x, int y, int z, bool v) {
        size_t i = index(x, y, z);
        if (v) bits[i >> 6] |= uint64_t(1) << (i & 63);
        else bits[i >> 6] &= ~(uint64_t(1) << (i & 63));
    }
    Vec3 cell_center(int x, int y, int z) const {
        return origin + Vec3{(x + 0.5) * cell_size, (y + 0.5) * cell_size, (z + 0.5) * cell_size};
    }
    // Cell containing p, or false if outside the grid.
    bool locate(const Vec3& p, int& x, int& y, int& z) const;
    size_t count_inside() const;

    void allocate() { bits.assign((cell_count() + 63) / 64, 0); }
};

// Empty grid covering `box` with at least one cell of margin on every side.
OccupancyGrid make_grid(const Aabb& box, std::array<uint32_t, 3> resolution);

// Cell centers classified by ray parity along the three axes, majority vote.
OccupancyGrid voxel_occupancy(const TriMesh& mesh, std::array<uint32_t, 3> resolution);
// Same classification onto an existing grid layout.
void voxelize_into(const TriMesh& mesh, OccupancyGrid& grid);

// 6-connected morphological dilation applied `steps` times.
OccupancyGrid dilate(const OccupancyGrid& grid, int steps);

// Cellwise set operations; layouts must match.
OccupancyGrid grid_and_not(const OccupancyGrid& a, const OccupancyGrid& b);
OccupancyGrid grid_or(const OccupancyGrid& a, const OccupancyGrid& b);

void save_grid(const OccupancyGrid& grid, const std::string& path);
OccupancyGrid load_grid(const std::string& path);

}  // namespace coalesce
