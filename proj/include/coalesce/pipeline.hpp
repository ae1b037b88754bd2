#pragma once

#include <map>
#include <optional>

#include "coalesce/refine.hpp"
#include "coalesce/surfacing.hpp"

namespace coalesce {

// Desk-scale defaults; the full-scale recipe is reachable through the config
// file (see README).
struct PipelineConfig {
    CategoryConfig category = chairlike_category();
    std::string data_dir;
    std::string align_ckpt;
    std::string joint_ckpt;

    uint32_t sample_grid = 64;     // occupancy sampling resolution
    uint32_t field_grid = 64;      // implicit field extraction resolution
    size_t shape_samples = 16384;  // Poisson-disk samples per shape
    size_t train_samples = 4096;   // occupancy training points per shape
    size_t boundary_points = 1024; // |N(J)|
    uint64_t seed = 1;

    // alignment training
    int align_epochs = 60;
    int align_batch = 8;
    double align_lr = 0.005;
    bool align_train_encoder = false;  // frozen-encoder desk profile
    size_t emd_points = 256;

    // joint synthesis training
    int pretrain_epochs = 20;
    int stage2_epochs = 20;
    int stage3_epochs = 20;
    double joint_lr = 1e-4;
    double alpha = 0.2;
    double lambda = 0.005;
    size_t schedule_base = 1024;
    size_t schedule_cap = 4096;
    int schedule_period = 7;
    int inner_steps = 2;
    int stage3_inner_steps = 1;
    size_t match_batch = 256;

    // test-time optimization
    RefineConfig refine;
    bool refine_enabled = true;

    // metrics
    size_t chamfer_samples = 16384;
    bool chamfer_squared = true;

    bool verbose = true;
};

// Flat key = value file with '#' comments; environment variables named
// COALESCE_<KEY> (upper-cased) override file values.
PipelineConfig load_config(const std::string& path);
void apply_config_entry(PipelineConfig& cfg, const std::string& key, const std::string& value);
std::string config_hash(const std::string& path);

// ---- synthetic data -------------------------------------------------------------

// Writes `count` parametric labeled shapes under out_dir, one directory per
// shape: shape.obj (parts as groups), boundaries.json, meta.json.
std::vector<std::string> generate_synthetic(const std::string& category, size_t count,
                                            uint64_t seed, const std::string& out_dir);

struct ShapeParts {
    std::vector<TriMesh> parts;                           // by category slot; may be empty
    std::map<std::string, std::vector<Polyline>> bounds;  // label -> segmentation boundary
};

// Builds one synthetic shape in memory (used by the generator and tests).
ShapeParts synth_shape(const CategoryConfig& category, uint64_t seed);

// ---- preprocessing ----------------------------------------------------------------

// Everything training and assembly need from one shape.
struct PrepPart {
    bool present = false;
    std::string label;
    TriMesh eroded_mesh;                  // shape frame
    PointCloud eroded_cloud;              // 2048 points, shape frame
    std::vector<int> near_joint;          // indices into eroded_cloud
    PointCloud normalized_cloud;          // eroded cloud, centroid 0 / unit diag
    SimilarityTransform gt;               // normalized -> shape frame
    std::vector<Polyline> boundary;       // shape frame
};

struct PrepShape {
    std::string shape_id;
    std::vector<PrepPart> parts;   // by category slot
    TriMesh shape_mesh;            // merged ground truth
    OccupancyGrid shape_grid;
    OccupancyGrid joint_volume;
    TrainingSampleSet samples;
    JointBoundarySet boundary_set;
};

PrepShape prepare_shape(const PipelineConfig& cfg, const std::string& shape_dir);
// Cached variant: reads/writes <shape_dir>/prep_g<grid>_s<samples>.clsc + grids.
PrepShape prepare_shape_cached(const PipelineConfig& cfg, const std::string& shape_dir);

std::vector<std::string> dataset_shape_dirs(const std::string& data_dir);

// Dataset views for the trainers.
std::vector<AlignSample> align_dataset(const std::vector<PrepShape>& shapes);
std::vector<JointShapeData> joint_dataset(const std::vector<PrepShape>& shapes);

// ---- assembly ------------------------------------------------------------------------

struct PartSelection {
    std::string shape_dir;  // source shape directory
    std::string label;      // part slot to take from it
};

struct AssembleResult {
    TriMesh mesh;                                // final stitched output
    TriMesh before_refine;                       // parts + raw joint, no refinement
    TriMesh after_refine;                        // parts + raw joint, refined
    std::vector<SimilarityTransform> transforms; // final per-slot transforms
    std::vector<double> h_trace;
    StitchFlags flags;
    std::string manifest_json;
};

AssembleResult assemble(const PipelineConfig& cfg, const std::vector<PartSelection>& selection);

// ---- metrics and perturbations ----------------------------------------------------------

double chamfer(const TriMesh& a, const TriMesh& b, size_t n, uint64_t seed, bool squared);
double chamfer(const PipelineConfig& cfg, const TriMesh& a, const TriMesh& b);

struct PerturbConfig {
    double sine_amplitude = 0.02;
    double sine_frequency = 4.0 * 3.14159265358979323846;  // angular, applied to z
    double scale_lo = 0.9, scale_hi = 1.1;
    double translate_lo = -0.04, translate_hi = 0.04;
};

// y <- y + a * sin(freq * z + phase), one phase per shape.
double sine_phase(uint64_t seed);
void perturb_sine_mesh(TriMesh& mesh, const PerturbConfig& cfg, double phase);
void perturb_sine_polylines(std::vector<Polyline>& polys, const PerturbConfig& cfg, double phase);
SimilarityTransform sample_similarity(const PerturbConfig& cfg, uint64_t seed);

// Writes a perturbed copy of the dataset (same layout) and returns its shape dirs.
std::vector<std::string> perturb_dataset(const std::string& data_dir, const std::string& out_dir,
                                         const std::string& mode, const PerturbConfig& pcfg,
                                         uint64_t seed);

struct EvaluateRow {
    std::string stage;
    std::vector<double> per_shape;
    double mean = 0;
};

struct EvaluateReport {
    std::vector<std::string> shape_ids;
    std::vector<EvaluateRow> rows;  // before / after test-time opt. / after blending
    std::string to_text() const;
    std::string to_json() const;
};

EvaluateReport evaluate_suite(const PipelineConfig& cfg,
                              const std::vector<std::string>& shape_dirs);

// ---- training entry points ----------------------------------------------------------------

void run_train_align(const PipelineConfig& cfg, const std::vector<std::string>& shape_dirs,
                     const std::string& out_ckpt);
void run_pretrain_encoders(const PipelineConfig& cfg, const std::vector<std::string>& shape_dirs,
                           const std::string& out_ckpt);
void run_train_joint(const PipelineConfig& cfg, const std::vector<std::string>& shape_dirs,
                     const std::string& pretrain_ckpt, const std::string& out_ckpt);

uint64_t fnv1a_file(const std::string& path);

}  // namespace coalesce
