#pragma once

// Hand-built implicit decoders and part fixtures shared by the refine tests
// and the acceptance suite. The decoders route signed coordinates through
// leaky-relu pairs, so f is an exact sigmoid of a plane or slab distance while
// using the production decoder parameter layout.

#include "coalesce/refine.hpp"

namespace coalesce::testing {

// f(p) = sigmoid(-beta * x): occupied half-space x < 0.
inline ParamStore<real> halfspace_decoder(size_t code_width, double beta) {
    ParamStore<real> store;
    const size_t h = 8;
    std::vector<size_t> ins{code_width + 3, h + 3, h, h, h};
    std::vector<size_t> outs{h, h, h, h, 1};
    for (size_t l = 0; l < ins.size(); ++l) {
        store.params["dec/w" + std::to_string(l)] = Arr<real>({ins[l], outs[l]});
        store.params["dec/b" + std::to_string(l)] = Arr<real>({outs[l]});
    }
    // +x and -x channels
    store.params.at("dec/w0").at(code_width + 0, 0) = 1;
    store.params.at("dec/w0").at(code_width + 0, 1) = -1;
    for (int l = 1; l <= 3; ++l) {
        store.params.at("dec/w" + std::to_string(l)).at(0, 0) = 1;
        store.params.at("dec/w" + std::to_string(l)).at(1, 1) = 1;
    }
    store.params.at("dec/w4").at(0, 0) = real(-beta);
    store.params.at("dec/w4").at(1, 0) = real(beta);
    return store;
}

// f(p) = sigmoid(beta * (halfwidth - |x|)): occupied slab |x| < halfwidth.
inline ParamStore<real> slab_decoder(size_t code_width, double beta, double halfwidth) {
    ParamStore<real> store = halfspace_decoder(code_width, beta);
    store.params.at("dec/w4").at(0, 0) = real(-beta);
    store.params.at("dec/w4").at(1, 0) = real(-beta);
    store.params.at("dec/b4").v[0] = real(beta * halfwidth);
    return store;
}

// Flat sheet of points in the plane x = 0 with +x normals; boundary distances
// mark every point as a probe candidate.
inline RefinePart sheet_part(int side, uint64_t seed, double extent = 0.4) {
    RefinePart part;
    part.present = true;
    Rng rng(seed);
    for (int i = 0; i < 200; ++i) {
        part.cloud.push_back({0, rng.uniform(-extent, extent), rng.uniform(-extent, extent)});
        part.normals.push_back({double(side), 0, 0});
        part.boundary_dist.push_back(rng.uniform(0, 0.05));
    }
    return part;
}

inline std::vector<PartCode> zero_codes(size_t slots, size_t width) {
    std::vector<PartCode> codes;
    for (size_t i = 0; i < slots; ++i) codes.push_back(absent_code(width));
    return codes;
}

}  // namespace coalesce::testing
