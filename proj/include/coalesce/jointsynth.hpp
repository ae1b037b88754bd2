#pragma once

#include "coalesce/align.hpp"
#include "coalesce/grid.hpp"

namespace coalesce {

// Inside/outside point samples used to fit the implicit joint field.
struct TrainingSampleSet {
    std::vector<Vec3> points;
    std::vector<uint8_t> labels;  // 1 = inside
    size_t joint_count = 0;       // drawn within the joint volume
    size_t near_count = 0;        // outside, within two cells of the surface
    size_t far_count = 0;         // outside, anywhere in bounds
};

// Part-surface points nearest the joint, probed at +/- lambda along normals.
struct JointBoundarySet {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;
    std::vector<int> part_slot;
    bool short_of_target = false;  // fewer than the requested count existed
};

struct LossConfig {
    double alpha = 0.2;
    double lambda = 0.005;
};

// ---- joint volume and sampling ------------------------------------------------

// shape interior minus eroded-part interiors, then dilated; errors when the
// pre-dilation region is empty.
OccupancyGrid build_joint_volume(const OccupancyGrid& shape_grid,
                                 const OccupancyGrid& eroded_parts_grid, int dilation_steps = 5);

// Draws floor(n*f0) points in the joint volume (labeled by the mesh parity
// test), floor(n*f1) outside within two cells of the surface, and the rest
// uniformly outside, all inside the grid bounds.
TrainingSampleSet sample_training_points(const TriMesh& shape, const OccupancyGrid& shape_grid,
                                         const OccupancyGrid& joint_volume, size_t n,
                                         std::array<double, 3> fractions, uint64_t seed);

// The k points over all part clouds closest to the segmentation boundary.
JointBoundarySet select_joint_boundary(const std::vector<PointCloud>& part_clouds,
                                       const std::vector<Polyline>& seg_boundary, size_t k = 1024);

// ---- implicit decoder -----------------------------------------------------------

// Occupancy decoder over concatenated part codes: input 256*N+3, hidden
// [1024, 512, 256, 128] with the query point concatenated into the first two
// layers, sigmoid output.
void init_decoder(ParamStore<real>& store, size_t slots, Rng& rng);

// points: m x 3 tape var (or constant); codes_row: 1 x 256*N. Returns m x 1.
RVar decoder_forward(RTape& tape, const ParamStore<real>& store, RVar codes_row, RVar points,
                     bool trainable);

Arr<real> joint_codes_row(const std::vector<PartCode>& codes);

std::vector<real> decode_batch(const ParamStore<real>& store, const std::vector<PartCode>& codes,
                               const std::vector<Vec3>& points);
real decode(const ParamStore<real>& store, const std::vector<PartCode>& codes, const Vec3& point);

// ---- losses ---------------------------------------------------------------------

RVar loss_mse(RTape& tape, RVar outputs, const std::vector<real>& labels);
double loss_mse_value(const std::vector<real>& outputs, const std::vector<real>& labels);

RVar loss_match(RTape& tape, RVar f_plus, RVar f_minus);
double loss_match_value(const std::vector<real>& f_plus, const std::vector<real>& f_minus);

// ---- training -------------------------------------------------------------------

struct JointPartData {
    bool present = false;
    std::string label;
    std::vector<Vec3> cloud;       // aligned part points, branch B input
    std::vector<Vec3> near_joint;  // branch C input
};

struct JointShapeData {
    std::vector<JointPartData> parts;  // ordered by category slots
    TrainingSampleSet samples;
    JointBoundarySet boundary;
};

struct PretrainConfig {
    int epochs = 100;
    double lr_start = 1e-3;
    double lr_floor = 1.25e-4;
    int lr_halving_period = 20;
    size_t recon_points = 512;
    uint64_t seed = 0;
    bool verbose = false;
    // encoder architectures; overridable for small-scale tests
    std::vector<SAConfig> spec_b = pointnet_b_spec();
    std::vector<SAConfig> spec_c = pointnet_c_spec();
};

double pretrain_lr_at(const PretrainConfig& cfg, int epoch);

// Trains the per-slot two-branch encoders against a point-set reconstruction
// decoder under symmetric squared chamfer loss. Returns per-epoch mean loss.
std::vector<double> pretrain_encoders(ParamStore<real>& store, const CategoryConfig& category,
                                      const std::vector<JointShapeData>& dataset,
                                      const PretrainConfig& cfg);

struct JointTrainConfig {
    int stage2_epochs = 80;
    int stage3_epochs = 80;
    double lr = 1e-4;
    LossConfig loss;
    // coarse-to-fine point schedule
    size_t schedule_base = 2048;
    size_t schedule_cap = 32768;
    int schedule_period = 20;
    int inner_steps = 1;          // stage-2 gradient steps per shape per epoch
    int stage3_inner_steps = 1;   // stage-3 steps (encoders forward each step)
    size_t match_batch = 1024;    // probe pairs per step in stage 3
    uint64_t seed = 0;
    bool verbose = false;
    std::vector<SAConfig> spec_b = pointnet_b_spec();
    std::vector<SAConfig> spec_c = pointnet_c_spec();
};

size_t schedule_count(size_t base, size_t cap, int period, int epoch);

struct JointTrainResult {
    std::vector<double> stage2_losses;
    std::vector<double> stage3_losses;
};

// Stage 2 fits the decoder alone under L_mse with frozen pretrained encoders;
// stage 3 trains encoders and decoder jointly under L_mse + alpha * L_match.
JointTrainResult train_joint(ParamStore<real>& store, const CategoryConfig& category,
                             const std::vector<JointShapeData>& dataset,
                             const JointTrainConfig& cfg);

// Joint codes for one shape under the current encoder weights.
std::vector<PartCode> compute_joint_codes(const ParamStore<real>& store,
                                          const CategoryConfig& category,
                                          const JointShapeData& shape,
                                          const std::vector<SAConfig>& spec_b,
                                          const std::vector<SAConfig>& spec_c);

}  // namespace coalesce
