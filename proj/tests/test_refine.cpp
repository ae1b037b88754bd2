#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>

#include "fixtures.hpp"
#include "gradcheck.hpp"

using namespace coalesce;
using namespace coalesce::testing;

TEST_CASE("objective_h values") {
    SUBCASE("perfect probes cost zero") {
        CHECK(objective_h_value({0, 0}, {1, 1}) == 0.0);
    }
    SUBCASE("constant half decoder costs exactly 0.5") {
        CHECK(objective_h_value({0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}) == doctest::Approx(0.5));
    }
    SUBCASE("random instances match direct recomputation to 1e-9") {
        Rng rng(1);
        for (int rep = 0; rep < 50; ++rep) {
            size_t n = 1 + rng.uniform_index(64);
            std::vector<real> fp(n), fm(n);
            for (size_t i = 0; i < n; ++i) {
                fp[i] = real(rng.uniform());
                fm[i] = real(rng.uniform());
            }
            double direct = 0;
            for (size_t i = 0; i < n; ++i)
                direct += std::abs(double(fp[i])) + std::abs(double(fm[i]) - 1.0);
            direct /= 2.0 * double(n);
            CHECK(std::abs(objective_h_value(fp, fm) - direct) <= 1e-9);

            RTape tape;
            RVar vp = tape.constant(Arr<real>({n, 1}, std::vector<real>(fp)));
            RVar vm = tape.constant(Arr<real>({n, 1}, std::vector<real>(fm)));
            CHECK(std::abs(double(tape.scalar_val(objective_h(tape, vp, vm))) - direct) <= 1e-6);
        }
    }
}

TEST_CASE("half-space fixture evaluates to the analytic h") {
    const double beta = 40;
    auto decoder = halfspace_decoder(8, beta);
    auto codes = zero_codes(1, 8);
    std::vector<RefinePart> parts{sheet_part(+1, 4)};
    RefineConfig cfg;
    cfg.probe_count = 128;

    // sheet exactly on the iso surface: h = sigmoid(-beta*lambda) analytically
    double h0 = evaluate_h(decoder, codes, parts, {SimilarityTransform{}}, cfg);
    double expect = 1.0 / (1.0 + std::exp(beta * cfg.lambda));
    CHECK(h0 == doctest::Approx(expect).epsilon(1e-4));

    // offset sheet costs more
    double h1 = evaluate_h(decoder, codes, parts, {SimilarityTransform{1.0, {0.02, 0, 0}}}, cfg);
    CHECK(h1 > h0);
}

TEST_CASE("gradients of h with respect to s and t match finite differences") {
    const double beta = 40;
    auto decoder = halfspace_decoder(8, beta);
    auto codes = zero_codes(1, 8);
    std::vector<RefinePart> parts{sheet_part(+1, 5)};
    RefineConfig cfg;
    cfg.probe_count = 64;
    SimilarityTransform xf{1.03, {0.012, 0.004, -0.008}};

    // analytic gradients through the tape
    RTape tape;
    ParamStore<real> dec_copy = decoder;
    // rebuild the graph refine uses internally, via evaluate-style wiring
    // (select probes at xf, then differentiate h wrt the transform leaves)
    // the easiest faithful route: finite differences of evaluate_h vs tape
    // gradients extracted from a single refine-style tape
    struct Probe {
        double fd_s, an_s;
        Vec3 fd_t, an_t;
    } res;

    {
        // one phase-(a) style tape
        RTape t2;
        std::vector<SimilarityTransform> xfs{xf};
        // mirror refine's internals through its public pieces: build by calling
        // refine with zero lrs is identity, so instead assemble the graph here
        // using the same ops
        Arr<real> codes_row = joint_codes_row(codes);
        // selection: all probes (sheet has 200 points, take 64 nearest)
        // reuse evaluate_h's ordering via boundary_dist
        // gather the 64 smallest boundary distances
        std::vector<int> order(parts[0].cloud.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            return parts[0].boundary_dist[a] < parts[0].boundary_dist[b];
        });
        order.resize(64);
        Arr<real> pts({64, 3}), offs({64, 3});
        for (size_t i = 0; i < 64; ++i) {
            const Vec3& p = parts[0].cloud[order[i]];
            Vec3 off = parts[0].normals[order[i]] * cfg.lambda;
            for (int c = 0; c < 3; ++c) {
                pts.v[i * 3 + c] = real(p[c]);
                offs.v[i * 3 + c] = real(off[c]);
            }
        }
        RVar s = t2.param_leaf("xf/0/s", Arr<real>({1}, {real(xf.s)}), true);
        RVar tv = t2.param_leaf("xf/0/t",
                                Arr<real>({3}, {real(xf.t.x), real(xf.t.y), real(xf.t.z)}), true);
        RVar moved = t2.add_bias(t2.mul_scalar(t2.constant(pts), s), tv);
        RVar off_var = t2.constant(std::move(offs));
        RVar cvar = t2.constant(codes_row);
        RVar f_plus = decoder_forward(t2, dec_copy, cvar, t2.add(moved, off_var), false);
        RVar f_minus = decoder_forward(t2, dec_copy, cvar, t2.sub(moved, off_var), false);
        RVar h = objective_h(t2, f_plus, f_minus);
        t2.backward(h);
        res.an_s = double(t2.grad(s).v[0]);
        res.an_t = {double(t2.grad(tv).v[0]), double(t2.grad(tv).v[1]), double(t2.grad(tv).v[2])};
    }

    RefineConfig fd_cfg = cfg;
    fd_cfg.probe_count = 64;
    auto eval = [&](const SimilarityTransform& x) {
        return evaluate_h(decoder, codes, parts, {x}, fd_cfg);
    };
    double hstep = 1e-3;
    {
        SimilarityTransform p = xf, m = xf;
        p.s += hstep;
        m.s -= hstep;
        res.fd_s = (eval(p) - eval(m)) / (2 * hstep);
    }
    for (int c = 0; c < 3; ++c) {
        SimilarityTransform p = xf, m = xf;
        p.t[c] += hstep;
        m.t[c] -= hstep;
        res.fd_t[c] = (eval(p) - eval(m)) / (2 * hstep);
    }

    auto relerr = [](double a, double b) {
        return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
    };
    CHECK(relerr(res.fd_s, res.an_s) < 1e-3);
    CHECK(relerr(res.fd_t.x, res.an_t.x) < 1e-3);
    CHECK(relerr(res.fd_t.y, res.an_t.y) < 1e-3);
    CHECK(relerr(res.fd_t.z, res.an_t.z) < 1e-3);
}

TEST_CASE("zero learning rates leave everything unchanged") {
    auto decoder = slab_decoder(8, 60, 0.1);
    auto before = decoder;
    auto codes = zero_codes(1, 8);
    std::vector<RefinePart> parts{sheet_part(+1, 6)};
    RefineConfig cfg;
    cfg.lr_transform = 0;
    cfg.lr_decoder = 0;
    cfg.probe_count = 64;
    cfg.iterations = 5;

    auto result = refine(decoder, codes, parts, {SimilarityTransform{1.0, {0.02, 0, 0}}}, cfg);
    CHECK(result.transforms[0].s == doctest::Approx(1.0));
    CHECK(result.transforms[0].t.x == doctest::Approx(0.02));
    for (auto& [n, a] : decoder.params) CHECK(a.v == before.at(n).v);
    for (double h : result.h_trace) CHECK(h == doctest::Approx(result.h_trace[0]));
}

TEST_CASE("zero iterations is the identity") {
    auto decoder = halfspace_decoder(8, 60);
    auto before = decoder;
    auto codes = zero_codes(1, 8);
    std::vector<RefinePart> parts{sheet_part(+1, 7)};
    RefineConfig cfg;
    cfg.iterations = 0;
    cfg.probe_count = 32;
    auto result = refine(decoder, codes, parts, {SimilarityTransform{1.1, {0.01, 0.02, 0.03}}}, cfg);
    CHECK(result.transforms[0].s == doctest::Approx(1.1));
    CHECK(result.transforms[0].t.y == doctest::Approx(0.02));
    for (auto& [n, a] : decoder.params) CHECK(a.v == before.at(n).v);
    REQUIRE(result.h_trace.size() == 1);
}

TEST_CASE("convex half-space fixture: translation error shrinks monotonically") {
    // gentle slope and an offset 25 Adam steps cannot fully traverse keep the
    // descent inside the monotone regime
    const double beta = 40;
    auto decoder = halfspace_decoder(8, beta);
    auto codes = zero_codes(1, 8);
    std::vector<RefinePart> parts{sheet_part(+1, 8)};
    RefineConfig cfg;
    cfg.probe_count = 128;

    std::vector<SimilarityTransform> start{SimilarityTransform{1.0, {0.08, 0, 0}}};

    // track |t_x| across iterations by running refine step-by-step
    ParamStore<real> dec = decoder;
    std::vector<double> terr{0.08};
    std::vector<double> h_seq;
    std::vector<SimilarityTransform> cur = start;
    for (int it = 0; it < 25; ++it) {
        RefineConfig one = cfg;
        one.iterations = 1;
        auto r = refine(dec, codes, parts, cur, one);
        cur = r.transforms;
        terr.push_back(std::abs(cur[0].t.x));
        h_seq.push_back(r.h_trace.front());
    }
    h_seq.push_back(evaluate_h(dec, codes, parts, cur, cfg));

    for (int it = 1; it <= 10; ++it) CHECK(terr[it] < terr[it - 1]);
    CHECK(terr[10] < terr[0]);

    // restarting Adam each iteration above is harsher than one continuous run;
    // the continuous run must also never increase h
    ParamStore<real> dec2 = decoder;
    auto full = refine(dec2, codes, parts, start, cfg);
    REQUIRE(full.h_trace.size() == 26);
    for (size_t i = 1; i < full.h_trace.size(); ++i)
        CHECK(full.h_trace[i] <= full.h_trace[i - 1] + 1e-9);
    CHECK(full.h_trace.back() <= full.h_trace.front());
}

TEST_CASE("misaligned two-sheet fixture: final h below initial h") {
    auto decoder = slab_decoder(8, 600, 0.1);
    auto codes = zero_codes(2, 8 / 2);
    // slab occupies |x| < 0.1; sheets sit at the two faces
    std::vector<RefinePart> parts{sheet_part(+1, 9), sheet_part(-1, 10)};
    for (auto& p : parts[0].cloud) p.x = 0.1;
    for (auto& p : parts[1].cloud) p.x = -0.1;

    std::vector<SimilarityTransform> start{SimilarityTransform{1.0, {0.04, 0.01, 0}},
                                           SimilarityTransform{1.0, {-0.02, 0, 0.03}}};
    RefineConfig cfg;
    cfg.probe_count = 128;
    double h0 = evaluate_h(decoder, codes, parts, start, cfg);
    auto result = refine(decoder, codes, parts, start, cfg);
    double h1 = result.h_trace.back();
    CHECK(h1 <= h0);
    CHECK(h1 < 0.7 * h0);  // meaningful reduction on this fixture
}

TEST_CASE("refine validates its configuration") {
    RefineConfig bad;
    bad.lambda = 0;
    CHECK_THROWS_AS(bad.validate(), std::runtime_error);
    ParamStore<real> dec = halfspace_decoder(8, 10);
    auto codes = zero_codes(1, 8);
    RefineConfig cfg;
    CHECK_THROWS_AS(refine(dec, codes, {}, {}, cfg), std::runtime_error);
}
