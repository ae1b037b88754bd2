#pragma once

#include "coalesce/jointsynth.hpp"

namespace coalesce {

struct RefineConfig {
    int iterations = 25;
    double lr_transform = 0.002;
    double lr_decoder = 0.0001;
    double lambda = 0.005;
    size_t probe_count = 1024;

    void validate() const {
        if (iterations < 0 || lr_transform < 0 || lr_decoder < 0 || lambda <= 0 ||
            probe_count == 0)
            throw std::runtime_error("refine config: all fields must be positive");
    }
};

// One part as seen by test-time optimization: untransformed points with
// normals and each point's distance to its own segmentation boundary.
struct RefinePart {
    bool present = false;
    std::vector<Vec3> cloud;
    std::vector<Vec3> normals;
    std::vector<double> boundary_dist;
};

struct RefineResult {
    std::vector<SimilarityTransform> transforms;
    std::vector<double> h_trace;  // h before each iteration, then the final value
};

// L1 part-joint matching objective from probe values.
double objective_h_value(const std::vector<real>& f_plus, const std::vector<real>& f_minus);
RVar objective_h(RTape& tape, RVar f_plus, RVar f_minus);

// Evaluates h for given transforms and decoder over the current N(J).
double evaluate_h(const ParamStore<real>& decoder, const std::vector<PartCode>& codes,
                  const std::vector<RefinePart>& parts,
                  const std::vector<SimilarityTransform>& transforms, const RefineConfig& cfg);

// Alternating Adam refinement: each iteration steps the part transforms with
// the decoder frozen, then the decoder with transforms frozen. N(J) is
// reselected from the transformed parts every iteration. Adam moments start
// fresh; codes stay fixed throughout.
RefineResult refine(ParamStore<real>& decoder, const std::vector<PartCode>& codes,
                    const std::vector<RefinePart>& parts,
                    std::vector<SimilarityTransform> initial, const RefineConfig& cfg);

}  // namespace coalesce
