#pragma once

// Central finite-difference gradient checking used across the test suites.

#include <algorithm>
#include <cmath>

#include "coalesce/autodiff.hpp"

namespace coalesce::testing {

template <typename T>
Arr<T> random_arr(std::vector<size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Arr<T> a(std::move(shape));
    for (T& x : a.v) x = T(rng.uniform(lo, hi));
    return a;
}

// Shuffled evenly-spaced values: pairwise gaps stay well above the finite
// difference step, keeping argmax selections stable under perturbation.
template <typename T>
Arr<T> spaced_arr(std::vector<size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Arr<T> a(std::move(shape));
    size_t n = a.size();
    for (size_t i = 0; i < n; ++i) a.v[i] = T(lo + (hi - lo) * double(i) / double(n - 1));
    for (size_t i = 0; i + 1 < n; ++i)
        std::swap(a.v[i], a.v[i + rng.uniform_index(n - i)]);
    return a;
}

// Relative error with an absolute branch for noise-level entries: entries where
// both gradients are below 1% of the gradient scale are compared absolutely
// against tol * scale. Returns true when every entry passes.
template <typename T>
struct GradCompare {
    T scale = 1;
    T rel_worst = 0;
    T abs_worst = 0;

    void init_scale(const std::vector<T>& analytic) {
        T gmax = 0;
        for (T g : analytic) gmax = std::max(gmax, std::abs(g));
        scale = std::max(gmax, T(1));
    }
    void add(T analytic, T numeric) {
        T denom = std::max(std::abs(analytic), std::abs(numeric));
        if (denom < T(0.01) * scale)
            abs_worst = std::max(abs_worst, std::abs(analytic - numeric) / scale);
        else
            rel_worst = std::max(rel_worst, std::abs(analytic - numeric) / denom);
    }
    bool pass(T tol) const { return rel_worst < tol && abs_worst < tol; }
};

// Checks d(sum w .* build(x)) / dx against central finite differences.
// The probe reduction of the numeric side is accumulated in double so the
// oracle noise is set by the op outputs themselves.
template <typename T, typename BuildF>
GradCompare<T> gradcheck(const Arr<T>& x0, BuildF build, uint64_t probe_seed, T h) {
    // analytic
    Tape<T> tape;
    auto x = tape.leaf(x0, true);
    auto y = build(tape, x);
    Rng rng(probe_seed);
    Arr<T> w = random_arr<T>(tape.val(y).shape, rng, -1, 1);
    tape.backward(tape.reduce_sum(tape.mul(y, tape.constant(w))));
    Arr<T> analytic = tape.grad(x);

    auto eval = [&](const Arr<T>& xv) {
        Tape<T> t;
        auto yv = t.val(build(t, t.leaf(xv, false)));
        double acc = 0;
        for (size_t i = 0; i < yv.size(); ++i) acc += double(w.v[i]) * double(yv.v[i]);
        return acc;
    };

    GradCompare<T> cmp;
    cmp.init_scale(analytic.v);
    Arr<T> xm = x0;
    for (size_t i = 0; i < x0.size(); ++i) {
        xm.v[i] = x0.v[i] + h;
        double fp = eval(xm);
        xm.v[i] = x0.v[i] - h;
        double fm = eval(xm);
        xm.v[i] = x0.v[i];
        cmp.add(analytic.v[i], T((fp - fm) / (2.0 * double(h))));
    }
    return cmp;
}

}  // namespace coalesce::testing
