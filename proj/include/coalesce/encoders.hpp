#pragma once

#include <optional>

#include "coalesce/autodiff.hpp"
#include "coalesce/mesh.hpp"

namespace coalesce {

// One set-abstraction layer: M local patches of N samples within radius r,
// a shared MLP over center-relative coordinates (plus incoming features),
// max-pooled per patch. r == infinity pools every point into one patch.
struct SAConfig {
    size_t patches = 1;            // M
    double radius = 0;             // r; infinity for the global layer
    size_t samples = 1;            // N
    std::vector<size_t> widths;    // local MLP output widths

    bool global() const { return std::isinf(radius); }
};

// 128-dim alignment code or 256-dim two-branch joint code; absent parts carry
// all-zero vectors.
struct PartCode {
    std::vector<real> vector;
    bool present = false;
};

std::vector<int> farthest_point_sample(const std::vector<Vec3>& points, size_t m);

std::vector<std::vector<int>> ball_query(const std::vector<Vec3>& points,
                                         const std::vector<Vec3>& centers, double r, size_t n);

// The three encoder architectures. Parameter prefixes identify the network
// ("enc_A", "enc_B/<part>", "enc_C/<part>").
std::vector<SAConfig> pointnet_a_spec();
std::vector<SAConfig> pointnet_b_spec();
std::vector<SAConfig> pointnet_c_spec();

void init_pointnet(ParamStore<real>& store, const std::string& prefix,
                   const std::vector<SAConfig>& spec, Rng& rng);

// Forward pass through a stack of SA layers; returns the final feature row.
// Grouping indices are a function of the point positions only, so gradients
// flow through the MLP parameters (and incoming features), not positions.
RVar pointnet_forward(RTape& tape, const ParamStore<real>& store, const std::string& prefix,
                      const std::vector<SAConfig>& spec, const std::vector<Vec3>& points,
                      bool trainable);

// Non-tape convenience paths used at inference time.
PartCode encode_align(const ParamStore<real>& store, const std::vector<Vec3>& part_cloud);
PartCode encode_joint(const ParamStore<real>& store, const std::string& part_label,
                      const std::vector<Vec3>& part_cloud, const std::vector<Vec3>& near_joint);

PartCode absent_code(size_t width);

constexpr size_t kAlignCodeWidth = 128;
constexpr size_t kJointCodeWidth = 256;
constexpr size_t kPartPoints = 2048;
constexpr size_t kNearJointPoints = 512;

}  // namespace coalesce
