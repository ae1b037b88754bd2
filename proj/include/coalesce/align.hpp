#pragma once

#include "coalesce/encoders.hpp"

namespace coalesce {

// Per-part uniform scale and translation: p' = s * p + t.
struct SimilarityTransform {
    double s = 1.0;
    Vec3 t{0, 0, 0};

    Vec3 apply(const Vec3& p) const { return p * s + t; }
    SimilarityTransform inverse() const { return {1.0 / s, -t / s}; }
    bool identity() const { return s == 1.0 && t.x == 0 && t.y == 0 && t.z == 0; }
};

// apply a then b
inline SimilarityTransform compose(const SimilarityTransform& a, const SimilarityTransform& b) {
    return {b.s * a.s, a.t * b.s + b.t};
}

PointCloud apply_transform(const PointCloud& cloud, const SimilarityTransform& xf);
TriMesh apply_transform(const TriMesh& mesh, const SimilarityTransform& xf);

// Ordered part slots for one object category.
struct CategoryConfig {
    std::string name;
    std::vector<std::string> part_labels;
    double tau = 0.05;
    uint32_t sample_grid = 64;  // occupancy sampling resolution
    uint32_t field_grid = 64;   // implicit field extraction resolution

    size_t slots() const { return part_labels.size(); }
    void validate() const;
    int slot_of(const std::string& label) const;
};

CategoryConfig chairlike_category();
CategoryConfig muglike_category();

// ---- regression head ---------------------------------------------------------

// widths 128N -> 512 -> 512 -> 4N, additive skip from the first hidden layer
// onto the second. Raw outputs per part are (log s, t); absent parts are
// forced to the identity.
void init_align_regressor(ParamStore<real>& store, size_t slots, Rng& rng);

RVar align_regressor_forward(RTape& tape, const ParamStore<real>& store, RVar codes,
                             bool trainable);

std::vector<SimilarityTransform> predict_transforms(const ParamStore<real>& store,
                                                    const std::vector<PartCode>& codes);

// ---- earth mover's distance ----------------------------------------------------

// Exact optimal assignment (Jonker-Volgenant shortest augmenting paths) under
// mean L2 cost; row i of a maps to column assignment[i] of b.
std::vector<int> emd_assignment(const std::vector<Vec3>& a, const std::vector<Vec3>& b);
double emd_loss(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

// ---- training ------------------------------------------------------------------

struct AlignPart {
    bool present = false;
    std::vector<Vec3> cloud;  // normalized eroded part cloud, kPartPoints entries
    SimilarityTransform gt;   // places the normalized cloud into the shape frame
};

struct AlignSample {
    std::vector<AlignPart> parts;  // ordered by CategoryConfig slots
};

struct AlignTrainConfig {
    int epochs = 200;
    int batch = 8;
    double lr = 1e-3;
    bool train_encoder = true;  // frozen-encoder mode caches part codes
    size_t emd_points = 256;
    uint64_t seed = 0;
    bool verbose = false;
};

// Trains enc_A + the regressor in `store`; returns per-epoch mean EMD loss.
std::vector<double> train_alignment(ParamStore<real>& store,
                                    const std::vector<AlignSample>& dataset,
                                    const AlignTrainConfig& cfg);

}  // namespace coalesce
